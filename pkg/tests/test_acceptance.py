"""End-to-end acceptance checks, one test per criterion.

Every test records a PASS/FAIL line that is printed in the terminal summary,
then asserts.  Tolerances and seed counts are fixed here, never tuned per run.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from fedinv import checks, cli, config, envgen, evalkit, invobj
from fedinv import tensorcore as tc
from fedinv.errors import NumericalError
from fedinv.experiment import execute, make_simulation
from fedinv.seeding import stream

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = range(5)
INSTANCE_SEEDS = range(5)


def load(name, **overrides):
    return config.parse_config(CONFIGS / name).with_overrides(**overrides)


def backends():
    return ["compiled", "python"] if tc._compiled is not None else ["python"]


# -- 1, 2: derivatives --------------------------------------------------------

def random_draw(rng, arch):
    n = int(rng.integers(3, 30))
    d = int(rng.integers(1, 6))
    bias = bool(rng.integers(0, 2))
    X = rng.standard_normal((n, d))
    if arch == "linear":
        out = int(rng.integers(1, 3))
        spec = tc.ModelSpec.linear(d, out, bias, float(rng.uniform(0.5, 3.0)))
        data = tc.Dataset(X, rng.standard_normal((n, out)))
    elif arch == "logistic":
        k = int(rng.integers(2, 5))
        spec = tc.ModelSpec.logistic(d, k, bias)
        data = tc.Dataset(X, rng.integers(0, k, n))
    else:
        k = int(rng.integers(2, 4))
        hidden = tuple(int(h) for h in rng.integers(2, 6, size=rng.integers(1, 3)))
        loss = tc.CROSS_ENTROPY if rng.random() < 0.5 else tc.SQUARED
        spec = tc.ModelSpec.mlp(d, hidden, k, loss, bias)
        data = tc.Dataset(X, rng.integers(0, k, n))
    w = rng.standard_normal(spec.d_model) * rng.uniform(0.1, 1.0)
    return spec, data, w


def central_diff(f, x, h):
    out = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out[k] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def test_criterion_01_objective_gradient(report):
    t0 = time.perf_counter()
    worst, draws = 0.0, 0
    for backend in backends():
        previous = tc.set_backend(backend)
        try:
            for arch in ("linear", "logistic", "mlp"):
                rng = stream(1, f"acceptance-grad/{arch}/{backend}")
                for _ in range(100):
                    spec, data, w = random_draw(rng, arch)
                    lam = 0.0 if rng.random() < 0.1 else float(10 ** rng.uniform(-4, 1))
                    cfg = invobj.PenaltyConfig(lam)
                    num = central_diff(lambda p: invobj.local_objective(p, spec, data, cfg),
                                       w, 1e-6)
                    got = invobj.local_objective_grad(w, spec, data, cfg)
                    rel = np.linalg.norm(got - num) / max(np.linalg.norm(num), 1e-12)
                    worst = max(worst, rel)
                    draws += 1
        finally:
            tc.set_backend(previous)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed < 60
    report(1, ok, f"objective gradient vs central differences: worst relative error "
                  f"{worst:.2e} over {draws} draws ({'/'.join(backends())}), {elapsed:.1f}s")
    assert ok


def test_criterion_02_hessian_vector_product(report):
    t0 = time.perf_counter()
    worst, worst_sym, draws = 0.0, 0.0, 0
    for backend in backends():
        previous = tc.set_backend(backend)
        try:
            for arch in ("linear", "logistic", "mlp"):
                rng = stream(2, f"acceptance-hvp/{arch}/{backend}")
                for _ in range(100):
                    spec, data, w = random_draw(rng, arch)
                    v = rng.standard_normal(spec.d_model)
                    u = rng.standard_normal(spec.d_model)
                    h = 1e-5
                    fd = (tc.risk_grad(w + h * v, spec, data)
                          - tc.risk_grad(w - h * v, spec, data)) / (2 * h)
                    hv = tc.risk_hvp(w, spec, data, v)
                    worst = max(worst, np.linalg.norm(hv - fd) / max(np.linalg.norm(fd), 1e-12))
                    uHv = float(u @ hv)
                    vHu = float(v @ tc.risk_hvp(w, spec, data, u))
                    worst_sym = max(worst_sym, abs(uHv - vHu) / max(1.0, abs(uHv)))
                    draws += 1
        finally:
            tc.set_backend(previous)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and worst_sym <= 1e-10 and elapsed < 60
    report(2, ok, f"HVP vs gradient differences: worst relative error {worst:.2e}, symmetry "
                  f"probe {worst_sym:.1e} over {draws} draws, {elapsed:.1f}s")
    assert ok


# -- 3: FedAvg degeneration ----------------------------------------------------

def reference_fedavg_summary(sim, w0, T, eval_every, eta):
    """Plain FedAvg written from scratch: full-batch step per client, n-weighted mean."""
    ids = sorted(sim.clients)
    n = sum(len(sim.train[i]) for i in ids)
    weight = {i: len(sim.train[i]) / n for i in ids}
    id_parts = [sim.id_test[i] for i in ids if i in sim.id_test and len(sim.id_test[i])]

    def row(t, w):
        loss, pens = 0.0, []
        for i in ids:
            g = tc.risk_grad(w, sim.spec, sim.train[i])
            loss += weight[i] * tc.empirical_risk(w, sim.spec, sim.train[i])
            p = float(np.dot(g, w))
            pens.append(p * p)
        correct = sum(int(np.sum(tc.predict(w, sim.spec, d.X) == d.y)) for d in id_parts)
        id_acc = correct / sum(len(d) for d in id_parts)
        ood = sim.ood_test
        ood_acc = float(np.mean(tc.predict(w, sim.spec, ood.X) == ood.y)) if ood else math.nan
        return ",".join([str(t)] + [repr(float(x)) for x in
                                    (loss, float(np.mean(pens)), id_acc, ood_acc)])

    w = np.array(w0, dtype=np.float64)
    lines = [evalkit.SUMMARY_HEADER, row(0, w)]
    for t in range(1, T + 1):
        nxt = np.zeros_like(w)
        for i in ids:
            nxt += weight[i] * (w - eta * tc.risk_grad(w, sim.spec, sim.train[i]))
        w = nxt
        if t % eval_every == 0 or t == T:
            lines.append(row(t, w))
    return "\n".join(lines) + "\n"


def test_criterion_03_fedavg_degeneration(report, tmp_path):
    t0 = time.perf_counter()
    cfg = load("quickstart.toml", lam=0.0)
    for c in cfg.clients:
        c.behavior, c.period = "normal", 1
    cfg.schedule.T, cfg.schedule.eval_every = 200, 5
    execute(cfg, out_dir=tmp_path, estimate=False)
    produced = (tmp_path / "summary.csv").read_text()
    sim, w0 = make_simulation(cfg)
    expected = reference_fedavg_summary(sim, w0, 200, 5, cfg.schedule.eta)
    elapsed = time.perf_counter() - t0
    ok = produced == expected and elapsed < 60
    report(3, ok, f"lambda=0 all-Normal summary.csv vs plain FedAvg loop, 200 rounds: "
                  f"{'byte-identical' if produced == expected else 'DIFFERENT'}, {elapsed:.1f}s")
    assert ok


# -- 4, 10: penalty effect on the synthetic task ------------------------------

def test_criterion_04_penalty_suppression(report):
    t0 = time.perf_counter()
    pens = {}
    for lam in (0.0, 1e-3):
        pens[lam] = [execute(load("acceptance/penalty_suppression.toml", seed=s, lam=lam),
                             estimate=False).final_eval["max_penalty"] for s in SEEDS]
    base, pen = float(np.median(pens[0.0])), float(np.median(pens[1e-3]))
    elapsed = time.perf_counter() - t0
    ok = pen <= 0.1 * base and elapsed < 300
    report(4, ok, f"median final max penalty {pen:.4g} (lambda=1e-3) vs {base:.4g} (lambda=0), "
                  f"ratio {pen / base:.4f} <= 0.1, {elapsed:.0f}s")
    assert ok


def test_criterion_10_lambda_sweep(report):
    t0 = time.perf_counter()
    lams = (0.0, 1e-4, 1e-3, 1e-2, 1.0)
    med = {}
    for lam in lams:
        accs = []
        for s in SEEDS:
            try:
                res = execute(load("acceptance/lambda_sweep.toml", seed=s, lam=lam),
                              estimate=False)
                accs.append(res.final_eval["ood_acc"])
            except NumericalError:
                accs.append(math.nan)
        med[lam] = float(np.median(accs))
    elapsed = time.perf_counter() - t0
    above = all(med[lam] > med[0.0] for lam in (1e-4, 1e-3, 1e-2))
    drop = med[1e-3] - med[1.0]
    ok = above and drop >= 0.02 and elapsed < 600
    table = " ".join(f"{lam:g}:{med[lam]:.3f}" for lam in lams)
    report(10, ok, f"median OOD accuracy by lambda {table}; middle lambdas above 0: {above}, "
                   f"lambda=1 below 1e-3 by {100 * drop:.1f}pp, {elapsed:.0f}s")
    assert ok


# -- 5: coloured digits --------------------------------------------------------

def test_criterion_05_cmnist_anti_confounding(report):
    t0 = time.perf_counter()
    cfg = load("acceptance/cmnist_foreground.toml")
    have_mnist = envgen.find_mnist() is not None
    if have_mnist:
        cfg.data.source = "mnist"
    lam = cfg.schedule.lam
    fedavg = [execute(cfg.with_overrides(seed=s, lam=0.0), estimate=False).final_eval["ood_acc"]
              for s in SEEDS]
    fedipg = [execute(cfg.with_overrides(seed=s, lam=lam), estimate=False).final_eval["ood_acc"]
              for s in SEEDS]
    a, b = float(np.median(fedavg)), float(np.median(fedipg))
    elapsed = time.perf_counter() - t0
    gap_ok = b - a >= 0.08
    level_ok = b >= 0.58
    # the absolute level is required on real MNIST only; the glyph fallback needs the gap
    ok = gap_ok and (level_ok or not have_mnist) and elapsed < 1200
    report(5, ok, f"{'MNIST' if have_mnist else 'glyph fallback'}: median OOD FedIPG "
                  f"{b:.3f} vs FedAvg {a:.3f}, gap {100 * (b - a):.1f}pp (need 8), "
                  f"level >= 0.58: {level_ok}, {elapsed:.0f}s")
    assert ok


# -- 6: exit strategy ---------------------------------------------------------

ABERRANT = 19


def exit_scenario(name):
    gains, lowest = [], 0
    for s in SEEDS:
        cfg = load(f"acceptance/exit_{name}.toml", seed=s)
        cfg.schedule.pretrain.enabled = False
        kept = execute(cfg, estimate=False)
        cfg.schedule.pretrain.enabled = True
        ex = execute(cfg, estimate=False)
        normal = [kept.sim.id_test[c] for c in sorted(kept.sim.clients) if c != ABERRANT]
        acc_all = evalkit.pooled_accuracy(kept.params, kept.spec, normal)
        acc_exit = evalkit.pooled_accuracy(ex.params, ex.spec, normal)
        gains.append(acc_exit - acc_all)
        scores = ex.exit_decision.scores
        lowest += min(scores, key=lambda c: (scores[c], c)) == ABERRANT
    return float(np.median(gains)), lowest


def test_criterion_06_exit_strategy(report):
    parts, ok = [], True
    for name in ("slow", "lossy", "rotation"):
        t0 = time.perf_counter()
        gain, lowest = exit_scenario(name)
        elapsed = time.perf_counter() - t0
        good = gain >= 0.02 and lowest >= 4 and elapsed < 600
        ok &= good
        parts.append(f"{name}: gain {100 * gain:+.2f}pp, lowest {lowest}/5, {elapsed:.0f}s "
                     f"[{'ok' if good else 'fail'}]")
    report(6, ok, "exit vs no exit, ID accuracy on normal clients; " + "; ".join(parts))
    assert ok


# -- 7, 8, 9: analytical bounds ----------------------------------------------

def test_criterion_07_stale_gradient_bound(report):
    t0 = time.perf_counter()
    results = [checks.check_stale_ratio(seed=s, tau_max=10) for s in INSTANCE_SEEDS]
    violated = sum(not r.satisfied for r in results)
    cases = sum(r.cases for r in results)
    elapsed = time.perf_counter() - t0
    ok = all(r.satisfied for r in results) and elapsed < 60
    report(7, ok, f"stale gradient ratio vs bound: {cases} (t, tau) pairs over "
                  f"{len(results)} ensembles, worst margin {max(r.worst_margin for r in results):.3g}, "
                  f"{violated} ensembles with a violation, {elapsed:.1f}s")
    assert ok


def test_criterion_08_ood_bound(report):
    t0 = time.perf_counter()
    stated, corrected = zip(*(checks.check_ood_bound(seed=s, upsilon=0.1, points=100)
                              for s in INSTANCE_SEEDS))
    bad = sum(c.details["violating_points"] for c in stated)
    grid = stated[0].details["grid_points"]
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 60
    report(8, ok, f"worst affine mixture ({grid} weights, upsilon=0.1) at 100 points on "
                  f"{len(stated)} instances: {bad} violations of the stated bound "
                  f"(worst margin {max(c.worst_margin for c in stated):.3g}); corrected bound "
                  f"holds on {sum(c.satisfied for c in corrected)}/{len(corrected)}, "
                  f"{elapsed:.1f}s")
    assert ok


def test_criterion_09_convergence_bound(report):
    t0 = time.perf_counter()
    results = [checks.check_convergence(seed=s, T_grid=(10, 50, 100, 500))[0]
               for s in INSTANCE_SEEDS]
    within = all(r.details["lam_within_lambda_max"] for r in results)
    elapsed = time.perf_counter() - t0
    ok = all(r.satisfied for r in results) and within and elapsed < 120
    report(9, ok, f"f(avg w) - f(w*) vs bound at T in 10/50/100/500 on {len(results)} "
                  f"ensembles: worst margin {max(r.worst_margin for r in results):.3g}, "
                  f"lambda <= lambda_max: {within}, {elapsed:.1f}s")
    assert ok


# -- 11: determinism ------------------------------------------------------------

def output_bytes(directory):
    root = Path(directory)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.suffix in (".csv", ".json")}


def test_criterion_11_determinism(report, tmp_path):
    t0 = time.perf_counter()
    runs = [("run", "quickstart.toml"), ("run", "acceptance/exit_lossy.toml"),
            ("sweep", "quickstart.toml"), ("theory-check", "theory.toml")]
    same, compared = True, 0
    for k, (cmd, name) in enumerate(runs):
        outs = []
        for rep in range(2):
            out = tmp_path / f"{k}_{rep}"
            assert cli.main([cmd, "--config", str(CONFIGS / name), "--out", str(out),
                             "--quiet"]) == 0
            outs.append(output_bytes(out))
        same &= outs[0] == outs[1] and bool(outs[0])
        compared += len(outs[0])
    elapsed = time.perf_counter() - t0
    report(11, same, f"repeated run/sweep/theory-check with the same config and seed: "
                     f"{compared} CSV/JSON files {'byte-identical' if same else 'DIFFER'}, "
                     f"{elapsed:.0f}s")
    assert same
