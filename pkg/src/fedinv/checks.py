"""Numerical checks of the analytical bounds on quadratic client ensembles.

Each client's risk is ``0.5 (w - c_i)^T A_i (w - c_i)``, realised as a tiny
least-squares dataset so the ordinary simulator can run on it.  Curvature
constants are then known exactly and every bound can be compared with the
measured quantity it claims to dominate.
"""

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from fedinv import invobj, theory
from fedinv import tensorcore as tc
from fedinv.errors import DomainError
from fedinv.fedsim import ClientSpec, LossyLink, Normal, Simulation, SlowCompute
from fedinv.seeding import stream


@dataclass
class QuadraticEnsemble:
    hessians: list
    centers: list
    datasets: list
    spec: tc.ModelSpec

    @property
    def size(self):
        return len(self.centers)

    @property
    def L(self):
        return max(float(np.linalg.eigvalsh(A)[-1]) for A in self.hessians)

    @property
    def mu(self):
        return min(float(np.linalg.eigvalsh(A)[0]) for A in self.hessians)

    def risks(self, w):
        return np.array([0.5 * (w - c) @ A @ (w - c) for A, c in zip(self.hessians, self.centers)])

    def grads(self, w):
        return [A @ (w - c) for A, c in zip(self.hessians, self.centers)]

    def objective(self, w, lam):
        """Uniformly weighted penalised objective and its gradient and Hessian."""
        val, grad, hess = 0.0, np.zeros_like(w), np.zeros((w.size, w.size))
        for A, c in zip(self.hessians, self.centers):
            g = A @ (w - c)
            p = float(g @ w)
            dp = g + A @ w
            val += 0.5 * (w - c) @ g + lam * p * p
            grad += g + 2.0 * lam * p * dp
            hess += A + 2.0 * lam * (np.outer(dp, dp) + 2.0 * p * A)
        k = self.size
        return val / k, grad / k, hess / k


def quadratic_ensemble(dim, clients, seed, eig_range=(0.5, 2.0), spread=1.0):
    """Random positive-definite quadratics around a shared center."""
    if dim < 1 or clients < 1:
        raise DomainError("need dim >= 1 and clients >= 1")
    rng = stream(seed, "theory-ensemble")
    shared = rng.standard_normal(dim)
    hessians, centers, datasets = [], [], []
    for _ in range(clients):
        Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        A = (Q * rng.uniform(*eig_range, size=dim)) @ Q.T
        A = 0.5 * (A + A.T)
        c = shared + spread * rng.standard_normal(dim)
        hessians.append(A)
        centers.append(c)
        datasets.append(tc.quadratic_dataset(A, c))
    return QuadraticEnsemble(hessians, centers, datasets, tc.ModelSpec.linear(dim, bias=False))


@dataclass
class BoundCheck:
    name: str
    satisfied: bool
    max_violation: float
    cases: int
    worst_margin: float
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _check(name, measured, bounds, details=None):
    measured = np.asarray(measured, dtype=np.float64)
    bounds = np.asarray(bounds, dtype=np.float64)
    if measured.size == 0:
        raise DomainError(f"{name}: nothing was measured")
    margin = measured - bounds
    worst = float(margin.max())
    return BoundCheck(name, bool(worst <= 0.0), max(0.0, worst), int(margin.size), worst,
                      details or {})


def _simulate(ens, behaviors, eta, lam, rounds, seed):
    clients = [ClientSpec(i, len(d), b) for i, (d, b) in enumerate(zip(ens.datasets, behaviors))]
    train = dict(enumerate(ens.datasets))
    sim = Simulation(ens.spec, clients, train, eta, invobj.PenaltyConfig(lam), seed, workers=1)
    sim.initialize(np.zeros(ens.spec.d_model))
    traj, records = [sim.w.copy()], []
    for _ in range(rounds):
        records.append(sim.run_round())
        traj.append(sim.w.copy())
    return traj, records


def check_stale_ratio(dim=4, clients=3, seed=0, tau_max=10, rounds=80, eta=None):
    """Stale-to-current global gradient ratio against its bound, for every logged pair."""
    ens = quadratic_ensemble(dim, clients, seed)
    L = ens.L
    eta = min(1.0, 0.5 / L) if eta is None else eta
    if eta > 1.0:
        raise DomainError("the staleness bound is stated for eta <= 1")
    behaviors = [Normal()] + [SlowCompute(3) if i % 2 else LossyLink(0.5)
                              for i in range(1, clients)]
    traj, records = _simulate(ens, behaviors, eta, 0.0, rounds, seed)
    global_grads = [np.mean(ens.grads(w), axis=0) for w in traj]
    G = max(float(np.linalg.norm(g)) for w in traj for g in ens.grads(w))
    measured, bounds = [], []
    for t in range(len(traj)):
        now = float(np.linalg.norm(global_grads[t]))
        if now * now <= theory.GRAD_FLOOR:
            continue
        for tau in range(1, tau_max + 1):
            if t - tau < 0:
                break
            measured.append(float(np.linalg.norm(global_grads[t - tau])) / now)
            bounds.append(theory.stale_ratio_bound(L, G, tau, now))
    staleness = max(e.staleness for r in records for e in r.per_client)
    return _check("stale_gradient_ratio", measured, bounds,
                  {"L": L, "G": G, "eta": eta, "max_staleness": staleness})


def affine_weight_grid(clients, upsilon, resolution):
    """Weights ``xi`` with ``xi_i >= -upsilon`` and ``sum xi = 1`` on a regular grid.

    The first ``clients - 1`` coordinates range over ``[-upsilon, 1 + (clients-1) upsilon]``;
    the grid contains every vertex of the weight polytope.
    """
    if clients < 1 or upsilon < 0 or resolution < 2:
        raise DomainError("need clients >= 1, upsilon >= 0 and resolution >= 2")
    if clients == 1:
        return np.ones((1, 1))
    axis = np.linspace(-upsilon, 1.0 + (clients - 1) * upsilon, resolution)
    head = np.array(list(itertools.product(axis, repeat=clients - 1)))
    last = 1.0 - head.sum(axis=1)
    grid = np.column_stack([head, last])
    return grid[last >= -upsilon - 1e-12]


def ood_risk_bound_corrected(risk_w, risks_at_zero, inner_products, upsilon, n_id, L, mu, w_norm):
    """OOD risk bound with the curvature term and the full inner-product spread kept.

    ``A <= R_i(0) - R_j(0) + p_i - p_j + (L - mu)/2 |w|^2`` follows from
    convexity at ``w`` and smoothness at ``w``.
    """
    r0 = np.asarray(risks_at_zero, dtype=np.float64)
    ip = np.asarray(inner_products, dtype=np.float64)
    k = 1.0 + n_id * upsilon
    spread = (r0.max() - r0.min()) + (ip.max() - ip.min()) + 0.5 * (L - mu) * w_norm ** 2
    return float(risk_w + k * spread)


def check_ood_bound(dim=4, clients=3, seed=0, upsilon=0.1, points=100, resolution=45,
                    scale=1.0):
    """Brute-force worst affine mixture at random ``w`` against both OOD bounds."""
    ens = quadratic_ensemble(dim, clients, seed)
    grid = affine_weight_grid(clients, upsilon, resolution)
    rng = stream(seed, "theory-points")
    zero_risks = ens.risks(np.zeros(dim))
    L, mu = ens.L, ens.mu
    worst_mix, stated, corrected = [], [], []
    for _ in range(points):
        w = scale * rng.standard_normal(dim)
        risks = ens.risks(w)
        inner = [float(g @ w) for g in ens.grads(w)]
        worst_mix.append(float((grid @ risks).max()))
        stated.append(theory.ood_risk_bound(risks.mean(), zero_risks, inner, upsilon, clients))
        corrected.append(ood_risk_bound_corrected(risks.mean(), zero_risks, inner, upsilon,
                                                  clients, L, mu, np.linalg.norm(w)))
    info = {"grid_points": int(len(grid)), "upsilon": upsilon, "instance_seed": seed}
    stated_check = _check("ood_risk_bound", worst_mix, stated, dict(info))
    stated_check.details["violating_points"] = int(np.sum(np.array(worst_mix) > np.array(stated)))
    return stated_check, _check("ood_risk_bound_corrected", worst_mix, corrected, dict(info))


def minimize_objective(ens, lam, w0, tol=1e-13, max_iter=200):
    """Damped Newton on the penalised objective of a quadratic ensemble."""
    w = np.array(w0, dtype=np.float64)
    for _ in range(max_iter):
        val, grad, hess = ens.objective(w, lam)
        if np.linalg.norm(grad) <= tol:
            break
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = grad
        if step @ grad <= 0:
            step = grad
        size = 1.0
        while size > 1e-12 and ens.objective(w - size * step, lam)[0] > val:
            size *= 0.5
        w = w - size * step
    return w


def exact_constants(ens, traj, lam, w_opt):
    """Constants of the ensemble: curvature exact, bounds as maxima over the iterates."""
    zero = np.zeros(ens.spec.d_model)
    G = max(float(np.linalg.norm(g)) for w in traj for g in ens.grads(w))
    c = theory.TheoryConstants(
        L=ens.L, mu=ens.mu, G=G,
        B=max(float(np.linalg.norm(w - w_opt)) for w in traj),
        beta=max(float(np.linalg.norm(w)) for w in traj),
        rho=0.0,
        phi=max(float(np.linalg.norm(cen - w_opt)) for cen in ens.centers),
        theta=[float(r) for r in ens.risks(zero)])
    return c.derive(lam)


def check_convergence(dim=4, clients=3, seed=0, T_grid=(10, 50, 100, 500), eta=0.0,
                      lam_fraction=0.5):
    """Averaged-iterate suboptimality of a synchronous run against the convergence bound.

    A pilot run at ``lam = 0`` fixes ``lambda_max``; the checked run uses
    ``lam_fraction * lambda_max``, and all constants are re-derived from its
    own iterates.  ``eta = 0`` means ``1 / L'``.
    """
    ens = quadratic_ensemble(dim, clients, seed)
    T_max = max(T_grid)
    behaviors = [Normal()] * clients
    pilot_eta = 1.0 / ens.L
    traj, _ = _simulate(ens, behaviors, pilot_eta, 0.0, T_max, seed)
    pilot = exact_constants(ens, traj, 0.0, minimize_objective(ens, 0.0, traj[-1]))
    lam = lam_fraction * pilot.lambda_max
    if eta <= 0:
        eta = 1.0 / exact_constants(ens, traj, lam, minimize_objective(ens, lam, traj[-1])).L_prime
    traj, _ = _simulate(ens, behaviors, eta, lam, T_max, seed)
    w_opt = minimize_objective(ens, lam, traj[-1])
    consts = exact_constants(ens, traj, lam, w_opt)
    f_opt = ens.objective(w_opt, lam)[0]
    measured, proof_form, statement_form = [], [], []
    running = np.cumsum(np.array(traj[1:]), axis=0)
    for T in T_grid:
        avg = running[T - 1] / T
        measured.append(ens.objective(avg, lam)[0] - f_opt)
        proof_form.append(theory.convergence_bound(consts, eta, T))
        statement_form.append(theory.convergence_bound_statement(consts, eta, T))
    details = {"lam": lam, "lambda_max": consts.lambda_max, "eta": eta,
               "eta_times_L_prime": eta * consts.L_prime, "T_grid": list(T_grid),
               "measured": measured, "bound": proof_form, "bound_statement_form": statement_form,
               "lam_within_lambda_max": bool(lam <= consts.lambda_max)}
    return _check("convergence_bound", measured, proof_form, details), consts


def check_hetero_monotone(kappas=(0.1, 0.3, 0.5, 0.7, 0.9), we_max=10.0, steps=200,
                          U=1.0, V=1.0, L=1.0, eta=1.0, ratio=1.0):
    """Heterogeneous-client contribution is nonincreasing in the environment offset at nu = 0."""
    increases = []
    for kappa in kappas:
        values = [theory.hetero_contribution_theory(kappa, 0.0, x, U, V, L, eta, ratio)
                  for x in np.linspace(0.0, we_max, steps)]
        increases.extend(np.diff(values))
    return _check("hetero_contribution_monotone", increases, np.zeros(len(increases)),
                  {"kappas": list(kappas), "we_max": we_max})


def run_theory_checks(tcfg, seed=0):
    """All bound checks for a ``[theory]`` config block, as the report document."""
    stale = check_stale_ratio(tcfg.dim, tcfg.clients, seed, tcfg.tau_max)
    ood, ood_fixed = check_ood_bound(tcfg.dim, tcfg.clients, seed, tcfg.upsilon, tcfg.points,
                                     tcfg.grid_resolution)
    conv, consts = check_convergence(tcfg.dim, tcfg.clients, seed, tuple(tcfg.T_grid), tcfg.eta)
    checks = [stale, ood, ood_fixed, conv, check_hetero_monotone()]
    return {"constants": consts.to_dict(), "lambda_max": consts.lambda_max,
            "bound_checks": [c.to_dict() for c in checks]}


def all_satisfied(report):
    return all(c["satisfied"] for c in report["bound_checks"])

