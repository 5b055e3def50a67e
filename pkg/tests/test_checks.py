import numpy as np
import pytest

from fedinv import checks
from fedinv import tensorcore as tc
from fedinv.config import TheoryConfig


def test_ensemble_objective_gradient_matches_finite_differences():
    ens = checks.quadratic_ensemble(3, 3, seed=2)
    w = np.array([0.3, -0.2, 0.5])
    val, grad, hess = ens.objective(w, 0.7)
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (ens.objective(w + e, 0.7)[0] - ens.objective(w - e, 0.7)[0]) / (2 * h)
        assert fd == pytest.approx(grad[k], rel=1e-6, abs=1e-9)
        fd_col = (ens.objective(w + e, 0.7)[1] - ens.objective(w - e, 0.7)[1]) / (2 * h)
        np.testing.assert_allclose(fd_col, hess[:, k], rtol=1e-5, atol=1e-7)


def test_ensemble_matches_dataset_risk():
    # the ensemble's analytic risks are the empirical risks of its datasets
    ens = checks.quadratic_ensemble(4, 3, seed=5)
    w = np.linspace(-1, 1, 4)
    for r, d in zip(ens.risks(w), ens.datasets):
        assert r == pytest.approx(tc.empirical_risk(w, ens.spec, d), rel=1e-10)


def test_affine_grid_has_vertices_and_constraints():
    grid = checks.affine_weight_grid(3, 0.1, 12)
    np.testing.assert_allclose(grid.sum(axis=1), 1.0)
    assert grid.min() >= -0.1 - 1e-12
    for v in ([1.2, -0.1, -0.1], [-0.1, 1.2, -0.1], [-0.1, -0.1, 1.2]):
        assert np.min(np.abs(grid - v).sum(axis=1)) < 1e-9
    assert len(checks.affine_weight_grid(3, 0.1, 45)) >= 1000


def test_stated_ood_bound_counterexample():
    # R_1 = (w-1)^2/2, R_2 = (w-2)^2/8 at w = 1 with upsilon = 0
    risks = np.array([0.0, 0.125])
    inner = [0.0, -0.25]  # R_i'(1) * 1
    from fedinv import theory
    stated = theory.ood_risk_bound(risks.mean(), [0.5, 0.5], inner, 0.0, 2)
    assert risks.max() > stated
    fixed = checks.ood_risk_bound_corrected(risks.mean(), [0.5, 0.5], inner, 0.0, 2, 1.0, 0.25,
                                            1.0)
    assert risks.max() <= fixed


@pytest.mark.parametrize("seed", range(3))
def test_corrected_ood_bound_holds(seed):
    _, fixed = checks.check_ood_bound(seed=seed, points=20, resolution=20)
    assert fixed.satisfied


def test_stale_and_convergence_checks_pass():
    assert checks.check_stale_ratio(seed=0, rounds=40).satisfied
    conv, consts = checks.check_convergence(seed=0, T_grid=(10, 50))
    assert conv.satisfied and conv.details["lam_within_lambda_max"]
    assert 0.9 <= conv.details["eta_times_L_prime"] <= 1.0


def test_report_shape():
    report = checks.run_theory_checks(TheoryConfig(points=5, grid_resolution=10, T_grid=[10]), 0)
    names = [c["name"] for c in report["bound_checks"]]
    assert names == ["stale_gradient_ratio", "ood_risk_bound", "ood_risk_bound_corrected",
                     "convergence_bound", "hetero_contribution_monotone"]
    assert report["lambda_max"] > 0
