"""Invariant-penalty local objective.

Each client minimises ``R_i(w) + lam * <grad R_i(w), w>**2``.  The penalty is
zero exactly when the risk gradient is orthogonal to the parameters, which is
the orthogonality property of the invariant solution.  The objective's
gradient is ``g + 2 lam p (g + H w)`` with ``p = <g, w>``.  It costs one
gradient and one Hessian-vector product along ``w``.
"""

from dataclasses import dataclass

import numpy as np

from fedinv import tensorcore as tc
from fedinv.errors import ContractError, DomainError

DEFAULT_LAMBDA = 1e-3
LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1)


@dataclass(frozen=True)
class PenaltyConfig:
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise DomainError(f"penalty strength must be finite and >= 0, got {self.lam}")


def penalty(params, grad):
    """Squared inner product ``<grad, params>**2``."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ContractError("params and grad differ in dimension")
    p = float(np.dot(grad, params))
    return p * p


def objective_terms(params, spec, data, cfg, want_grad=True):
    """Return ``(objective, risk, inner, risk_grad, objective_grad)`` in one pass.

    ``inner`` is ``<grad R, w>``.  ``objective_grad`` is None when
    ``want_grad`` is false.
    """
    if cfg.lam == 0.0 or not want_grad:
        risk, g, _ = tc._eval(params, spec, data)
        inner = float(np.dot(g, params))
        obj = risk + cfg.lam * inner * inner if cfg.lam else risk
        return obj, risk, inner, g, (g if want_grad else None)
    risk, g, hw = tc.risk_grad_hvp(params, spec, data, params)
    inner = float(np.dot(g, params))
    obj = risk + cfg.lam * inner * inner
    return obj, risk, inner, g, g + (2.0 * cfg.lam * inner) * (g + hw)


def local_objective(params, spec, data, cfg):
    risk, g, _ = tc._eval(params, spec, data)
    if cfg.lam == 0.0:
        return risk
    return risk + cfg.lam * penalty(params, g)


def local_objective_grad(params, spec, data, cfg):
    """Exact gradient of :func:`local_objective` (no Hessian is formed)."""
    if cfg.lam == 0.0:
        return tc.risk_grad(params, spec, data)
    return objective_terms(params, spec, data, cfg)[4]


def lambda_bound(mu, mu_prime, theta_i, G, rho, beta):
    """Largest penalty strength that keeps the objective ``mu_prime``-strongly convex."""
    if mu_prime < 0 or mu_prime > mu:
        raise DomainError(f"need 0 <= mu_prime <= mu, got mu={mu}, mu_prime={mu_prime}")
    if min(theta_i, G, rho, beta) < 0:
        raise DomainError("theta, G, rho and beta must be nonnegative")
    denom = 8.0 * theta_i * mu * mu + 2.0 * G * rho * beta * beta
    if denom <= 0:
        raise DomainError("lambda bound denominator vanishes")
    return (mu - mu_prime) / denom


def l_prime(L, lam, beta, G, rho):
    """Smoothness constant of the penalised objective."""
    if min(L, lam, beta, G, rho) < 0:
        raise DomainError("smoothness inputs must be nonnegative")
    return L + 10.0 * lam * L * L * beta * beta + 4.0 * lam * G * G + 2.0 * G * rho * lam * beta * beta
