"""Contribution scores, smoothness/convexity constants and bound calculators.

Everything here is a plain function of numbers or gradients, so the bounds
can be evaluated against any logged trajectory.
"""

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from fedinv import invobj
from fedinv import tensorcore as tc
from fedinv.errors import DegenerateGradient, DomainError, EstimationWarning

GRAD_FLOOR = 1e-24


def contribution(global_grad, client_grad_stale, eta, n_i, n, L):
    """Signed per-round contribution of one client.

    ``eta * (n_i/n) * (<G, g> - L/2 |g|^2) / |G|^2`` where ``G`` is the global
    risk gradient at the current model and ``g`` the client's (possibly stale)
    risk gradient.  Positive means the client's step shrinks the global risk
    under an ``L``-smooth model.
    """
    G = np.asarray(global_grad, dtype=np.float64)
    g = np.asarray(client_grad_stale, dtype=np.float64)
    gg = float(np.dot(G, G))
    if not gg > GRAD_FLOOR:
        raise DegenerateGradient(f"global gradient norm^2 {gg:.3e} below floor {GRAD_FLOOR}")
    return eta * (n_i / n) * (float(np.dot(G, g)) - 0.5 * L * float(np.dot(g, g))) / gg


def hetero_contribution_theory(kappa, nu, we_norm, U, V, L, eta, weight_ratio, wi_norm=1.0):
    """Predicted contribution of a client whose optimum is offset by ``we_norm``.

    ``kappa`` is the fraction of the invariant component already learned,
    ``nu`` the leakage of the environment component into the model and
    ``wi_norm`` the norm of the invariant solution (1 by convention).
    ``U`` and ``V`` bound the client/global gradient-norm ratio from below and above.
    """
    if not 0.0 < kappa < 1.0:
        raise DomainError(f"kappa must lie in (0, 1), got {kappa}")
    a = wi_norm - kappa
    d1 = math.sqrt(a * a + nu * nu)
    d2 = math.sqrt(a * a + (we_norm - nu) ** 2)
    if d1 == 0.0 or d2 == 0.0:
        raise DomainError("degenerate angle: zero-length direction")
    cos = (a * a - nu * (we_norm - nu)) / (d1 * d2)
    return eta * weight_ratio * (U * cos - 0.5 * L * V * V)


def stale_ratio_bound(L, G, tau, grad_norm_now):
    """Upper bound on ``|grad R(w^{t-tau})| / |grad R(w^t)|``.

    Valid for step sizes ``eta <= 1``; the exact bound has ``L*eta*G*tau``.
    """
    if not grad_norm_now > 0:
        raise DomainError("current gradient norm must be positive")
    if tau < 0:
        raise DomainError("staleness must be nonnegative")
    return 1.0 + L * G * tau / grad_norm_now


def ood_risk_bound(risk_w, risks_at_zero, inner_products, upsilon, n_id):
    """Upper bound on the risk of any affine mixture of client distributions.

    ``risk_w`` is the (weighted) training risk at ``w``, ``risks_at_zero`` the
    per-client risks at ``w = 0`` and ``inner_products`` the per-client
    ``<grad R_i(w), w>``.
    """
    r0 = np.asarray(risks_at_zero, dtype=np.float64)
    ip = np.asarray(inner_products, dtype=np.float64)
    if r0.size == 0 or ip.size == 0:
        raise DomainError("need at least one client")
    if upsilon < 0 or n_id < 1:
        raise DomainError("upsilon must be >= 0 and n_id >= 1")
    k = 1.0 + n_id * upsilon
    return float(risk_w + k * (r0.max() - r0.min()) + 2.0 * k * ip.max())


@dataclass
class TheoryConstants:
    L: float
    mu: float
    G: float
    B: float
    beta: float
    rho: float
    phi: float
    theta: list = field(default_factory=list)
    lam: float = 0.0
    mu_prime: float = 0.0
    L_prime: float = 0.0
    lambda_max: float = 0.0

    def derive(self, lam, mu_prime=None):
        """Fill ``mu_prime`` (default ``mu/2``), ``L_prime`` and ``lambda_max``."""
        self.lam = float(lam)
        self.mu_prime = self.mu / 2.0 if mu_prime is None else float(mu_prime)
        self.L_prime = invobj.l_prime(self.L, self.lam, self.beta, self.G, self.rho)
        theta_max = max(self.theta) if self.theta else 0.0
        try:
            self.lambda_max = invobj.lambda_bound(self.mu, self.mu_prime, theta_max,
                                                  self.G, self.rho, self.beta)
        except DomainError:
            self.lambda_max = math.inf if self.mu > self.mu_prime else 0.0
        return self

    def to_dict(self):
        return {k: (float(v) if not isinstance(v, list) else [float(x) for x in v])
                for k, v in asdict(self).items()}


def convergence_bound(constants, eta, T):
    """Suboptimality bound for the running average after ``T`` rounds."""
    if T < 1 or eta <= 0:
        raise DomainError("need T >= 1 and eta > 0")
    mp, Lp = constants.mu_prime, constants.L_prime
    if mp <= 0:
        raise DomainError("mu_prime must be positive")
    B2, phi2 = constants.B ** 2, constants.phi ** 2
    return B2 / (2.0 * eta * T) + (2.0 * Lp / (T * T * mp)) * (Lp * B2 + (mp + Lp) * phi2)


def convergence_bound_statement(constants, eta, T):
    """Variant with ``mu`` in the denominator and ``mu' + L`` in the last factor."""
    if T < 1 or eta <= 0:
        raise DomainError("need T >= 1 and eta > 0")
    mp, Lp, mu = constants.mu_prime, constants.L_prime, constants.mu
    if mu <= 0:
        raise DomainError("mu must be positive")
    B2, phi2 = constants.B ** 2, constants.phi ** 2
    return B2 / (2.0 * eta * T) + (2.0 * Lp / (T * T * mu)) * (Lp * B2 + (mp + constants.L) * phi2)


@dataclass
class ContributionReport:
    per_client: dict
    factors: list
    cumulative: list
    gap_bound: list
    expanding_rounds: list
    overshoot_rounds: list
    degenerate_rounds: list

    def to_dict(self):
        return asdict(self)


def contraction_report(records, mu, initial_gap):
    """Per-round contraction factors ``1 - 2 mu sum_i C_i^t`` and the implied gap bound.

    ``records`` are :class:`fedinv.fedsim.RoundRecord` objects (or anything with
    ``t`` and ``per_client`` entries carrying ``id``, ``contribution_hat`` and
    ``degenerate``).
    """
    if not records:
        raise DomainError("no rounds to report on")
    per = {}
    factors, cumulative, gaps = [], [], []
    expanding, overshoot, degenerate = [], [], []
    running = 1.0
    for rec in records:
        total = 0.0
        for entry in rec.per_client:
            c = entry.contribution_hat
            per.setdefault(entry.id, []).append(c)
            total += c
            if entry.degenerate and rec.t not in degenerate:
                degenerate.append(rec.t)
        f = 1.0 - 2.0 * mu * total
        factors.append(f)
        running *= f
        cumulative.append(running)
        gaps.append(running * initial_gap)
        if f > 1.0:
            expanding.append(rec.t)
        if 2.0 * mu * total > 1.0:
            overshoot.append(rec.t)
    summary = {cid: {"mean": float(np.mean(v)), "min": float(np.min(v)), "max": float(np.max(v)),
                     "negative": bool(np.mean(v) < 0)} for cid, v in sorted(per.items())}
    return ContributionReport(summary, factors, cumulative, gaps, expanding, overshoot, degenerate)


# ---------------------------------------------------------------------------
# constant estimation

def _power_iteration(matvec, d, rng, iters=200, tol=1e-10):
    """Largest-magnitude eigenvalue of a symmetric operator."""
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = matvec(v)
        new = float(np.dot(v, w))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, True
        v = w / nw
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            return new, True
        lam = new
    return lam, False


def hessian_extremes(params, spec, data, rng, iters=200):
    """``(largest, smallest)`` eigenvalues of the risk Hessian via HVP power iteration."""
    d = spec.d_model
    hv = lambda v: tc.risk_hvp(params, spec, data, v)  # noqa: E731
    top, ok1 = _power_iteration(hv, d, rng, iters)
    shift = abs(top)
    low, ok2 = _power_iteration(lambda v: shift * v - hv(v), d, rng, iters)
    if not (ok1 and ok2):
        warnings.warn("power iteration did not converge; constants are approximate",
                      EstimationWarning, stacklevel=2)
    return top, shift - low


def quadratic_hessian(spec, data):
    """Exact risk Hessian of a bias-free linear least-squares model."""
    if spec.arch != "linear" or spec.bias or spec.outputs != 1:
        raise DomainError("exact Hessian only for single-output bias-free linear models")
    return data.X.T @ data.X / len(data)


def solo_optimum(spec, data, w0, eta, steps):
    """Best parameters found by plain gradient descent on one client's risk."""
    w = np.array(w0, dtype=np.float64)
    best, best_risk = w.copy(), tc.empirical_risk(w, spec, data)
    for _ in range(steps):
        r, g, _ = tc._eval(w, spec, data)
        if r < best_risk:
            best, best_risk = w.copy(), r
        w = w - eta * g
    r = tc.empirical_risk(w, spec, data)
    if r < best_risk:
        best, best_risk = w, r
    return best, best_risk


def estimate_constants(trajectory, client_data, spec, lam=0.0, weights=None, seed=0,
                       solo_eta=None, solo_steps=500, w_invariant=None, exact=None,
                       hvp_iters=200):
    """Plug-in estimates of the smoothness, convexity and boundedness constants.

    ``trajectory`` is the list of global models; ``client_data`` a list of
    datasets.  For bias-free linear least squares the Hessian eigenvalues are
    exact; otherwise they come from HVP power iteration at every trajectory
    point (non-convergence raises :class:`EstimationWarning`).
    """
    if not trajectory:
        raise DomainError("trajectory is empty")
    traj = [np.asarray(w, dtype=np.float64) for w in trajectory]
    rng = np.random.default_rng(seed)
    n = np.array([len(c) for c in client_data], dtype=np.float64)
    weights = n / n.sum() if weights is None else np.asarray(weights, dtype=np.float64)
    if exact is None:
        exact = spec.arch == "linear" and not spec.bias and spec.outputs == 1

    L_hat, mu_hat = 0.0, math.inf
    if exact:
        for data in client_data:
            ev = np.linalg.eigvalsh(quadratic_hessian(spec, data))
            L_hat, mu_hat = max(L_hat, ev[-1]), min(mu_hat, ev[0])
        rho_hat = 0.0
    else:
        for w in traj:
            for data in client_data:
                top, low = hessian_extremes(w, spec, data, rng, hvp_iters)
                L_hat, mu_hat = max(L_hat, top), min(mu_hat, low)
        rho_hat = 0.0
        for a, b in zip(traj[:-1], traj[1:]):
            step = np.linalg.norm(b - a)
            if step == 0.0:
                continue
            v = rng.standard_normal(spec.d_model)
            v /= np.linalg.norm(v)
            for data in client_data:
                diff = tc.risk_hvp(b, spec, data, v) - tc.risk_hvp(a, spec, data, v)
                rho_hat = max(rho_hat, float(np.linalg.norm(diff)) / step)

    G_hat = 0.0
    for w in traj:
        for data in client_data:
            G_hat = max(G_hat, float(np.linalg.norm(tc.risk_grad(w, spec, data))))
    beta_hat = max(float(np.linalg.norm(w)) for w in traj)

    if solo_eta is None:
        solo_eta = 1.0 / max(L_hat, 1e-12)
    zero = np.zeros(spec.d_model)
    solos, theta = [], []
    for data in client_data:
        w_star, r_star = solo_optimum(spec, data, traj[0], solo_eta, solo_steps)
        solos.append(w_star)
        theta.append(max(0.0, tc.empirical_risk(zero, spec, data) - r_star))
    if w_invariant is None:
        w_invariant = traj[-1]
    phi_hat = max(float(np.linalg.norm(w - w_invariant)) for w in solos)
    B_hat = max(float(np.linalg.norm(w - w_invariant)) for w in traj)

    return TheoryConstants(L=float(L_hat), mu=float(max(mu_hat, 0.0)), G=G_hat, B=B_hat,
                           beta=beta_hat, rho=float(rho_hat), phi=phi_hat,
                           theta=theta).derive(lam)
