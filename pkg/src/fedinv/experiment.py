"""Turn an :class:`ExperimentConfig` into data, clients and a finished run."""

import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fedinv import envgen, evalkit, invobj, theory
from fedinv import tensorcore as tc
from fedinv.errors import ConfigError, EstimationWarning, NumericalError
from fedinv.fedsim import (ClientSpec, HeterogeneousEnv, LossyLink, Normal, Simulation,
                           SlowCompute, pretrain_and_exit)
from fedinv.seeding import stream

log = logging.getLogger(__name__)


def build_envs(cfg):
    """Every environment of the experiment, in env-id order."""
    d = cfg.data
    if d.kind == "synthetic":
        return envgen.gen_synthetic_envs(cfg.num_envs, d.n_per_env, d.d_inv, d.d_spur, d.corr,
                                         d.flip_test, cfg.seed, d.inv_mean, d.inv_noise,
                                         d.spur_noise)
    if d.kind == "container":
        return envgen.read_container(d.path)
    return build_image_envs(cfg)


def raw_images(cfg, count):
    d = cfg.data
    if d.source == "mnist":
        found = envgen.find_mnist(d.mnist_dir or None)
        if found is None:
            raise ConfigError("data.source: MNIST IDX files not found "
                              "(set data.mnist_dir or FEDINV_MNIST_DIR)")
        images, labels = envgen.load_idx(*found)
        if images.shape[1] != d.image_size or images.shape[2] != d.image_size:
            raise ConfigError(f"data.image_size: MNIST images are {images.shape[1]}px")
        if count > len(labels):
            raise ConfigError(f"data.n_per_env: need {count} images, MNIST has {len(labels)}")
        order = stream(cfg.seed, "mnist-order").permutation(len(labels))[:count]
        return images[order], labels[order].astype(np.int64)
    return envgen.synthetic_digits(count, cfg.seed, size=d.image_size)


def build_image_envs(cfg):
    d = cfg.data
    n, E = d.n_per_env, cfg.num_envs
    images, labels = raw_images(cfg, n * E)
    if d.label_noise > 0:
        rng = stream(cfg.seed, "label-noise")
        flip = rng.random(len(labels)) < d.label_noise
        shift = rng.integers(1, 10, size=len(labels))
        labels = np.where(flip, (labels + shift) % 10, labels)
    corrs = list(d.corr)
    if d.flip_test:
        corrs[-1] = -corrs[-1]
    envs = []
    for e in range(E):
        raw = envgen.image_dataset(images[e * n:(e + 1) * n], labels[e * n:(e + 1) * n], env_id=e)
        envs.append(envgen.colorize(raw, d.stain_mode, d.palette_size, corrs[e], cfg.seed,
                                    block=d.block, color_map=d.color_map or None))
    return envs


def model_spec(cfg, envs):
    m = cfg.model
    input_dim = envs[0].X.shape[1]
    loss = m.loss or ("squared" if m.arch == "linear" else "cross_entropy")
    if envs[0].is_classification:
        classes = max(2, 1 + max(int(e.y.max()) for e in envs if len(e)))
        outputs = 1 if loss == "squared" and classes == 2 else classes
    else:
        outputs = envs[0].y.reshape(len(envs[0]), -1).shape[1]
    if m.arch == "linear":
        if loss != "squared":
            raise ConfigError("model.loss: linear models use squared loss")
        return tc.ModelSpec.linear(input_dim, outputs, m.bias, m.target_scale)
    if m.arch == "logistic":
        return tc.ModelSpec.logistic(input_dim, outputs, m.bias)
    return tc.ModelSpec.mlp(input_dim, m.hidden, outputs, loss, m.bias, m.target_scale)


def behavior_of(c):
    if c.behavior == "slow":
        return SlowCompute(c.period)
    if c.behavior == "lossy":
        return LossyLink(c.success_prob)
    if c.behavior == "hetero":
        return HeterogeneousEnv(f"rotation={c.rotation_deg}")
    return Normal()


def build_clients(cfg, envs):
    plan = envgen.PartitionPlan({c.id: c.env for c in cfg.clients},
                                None if cfg.data.holdout_env < 0 else cfg.data.holdout_env,
                                cfg.data.train_fraction)
    part = envgen.partition_clients(envs, plan, cfg.seed)
    plane = tuple(cfg.data.rotation_plane)
    specs = []
    for c in sorted(cfg.clients, key=lambda c: c.id):
        if c.rotation_deg:
            part.train[c.id] = envgen.rotate_env(part.train[c.id], c.rotation_deg, plane)
            part.id_test[c.id] = envgen.rotate_env(part.id_test[c.id], c.rotation_deg, plane)
        if len(part.train[c.id]) == 0:
            raise ConfigError(f"clients: client {c.id} received no training samples")
        specs.append(ClientSpec(c.id, len(part.train[c.id]), behavior_of(c)))
    return specs, part


def initial_params(cfg, spec):
    if spec.arch == "linear" and cfg.model.init_scale == 0.0:
        return np.zeros(spec.d_model)
    scale = cfg.model.init_scale or None
    return tc.init_params(spec, stream(cfg.seed, "init"), scale)


@dataclass
class RunResult:
    records: list
    summaries: list
    final_eval: dict
    exit_decision: object
    params: np.ndarray
    spec: tc.ModelSpec
    sim: Simulation
    theory: dict


def make_simulation(cfg, workers=None):
    envs = build_envs(cfg)
    spec = model_spec(cfg, envs)
    clients, part = build_clients(cfg, envs)
    s = cfg.schedule
    sim = Simulation(spec, clients, part.train, s.eta, invobj.PenaltyConfig(s.lam), cfg.seed,
                     s.contribution_L, id_test=part.id_test, ood_test=part.ood_test,
                     workers=workers)
    return sim, initial_params(cfg, spec)


def final_evaluation(sim, exit_decision=None):
    w, spec = sim.w, sim.spec
    per_client = []
    for cid in sorted(sim.clients):
        test = sim.id_test.get(cid)
        acc = evalkit.evaluate(w, spec, test).accuracy if test is not None and len(test) else math.nan
        per_client.append({"client_id": cid, "accuracy": acc,
                           "n_eval": 0 if test is None else len(test),
                           "in_cohort": cid in sim.cohort})
    pens = {cid: invobj.penalty(w, tc.risk_grad(w, spec, sim.train[cid])) for cid in sim.cohort}
    ood = math.nan
    if sim.ood_test is not None and len(sim.ood_test):
        ood = evalkit.evaluate(w, spec, sim.ood_test).accuracy
    out = {
        "per_client_id_acc": per_client,
        "ood_acc": ood,
        "exited_client_acc": [p for p in per_client if not p["in_cohort"]],
        "max_penalty": max(pens.values()),
        "cohort": list(sim.cohort),
        "rounds": sim.t,
    }
    if exit_decision is not None:
        out["exit_scores"] = {str(k): v for k, v in sorted(exit_decision.scores.items())}
    return out


def contribution_summary(records):
    per = {}
    for rec in records:
        for e in rec.per_client:
            per.setdefault(e.id, []).append(e.contribution_hat)
    return {str(cid): {"mean": float(np.mean(v)), "min": float(np.min(v)),
                       "max": float(np.max(v)), "negative": bool(np.mean(v) < 0)}
            for cid, v in sorted(per.items())}


def run_theory(sim, records, w0, seed, hvp_iters=30, solo_steps=100):
    """Constants estimated at the start and final models plus the contraction check."""
    data = [sim.train[cid] for cid in sim.cohort]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EstimationWarning)
        consts = theory.estimate_constants([w0, sim.w], data, sim.spec, lam=sim.cfg.lam,
                                           seed=seed, solo_steps=solo_steps, hvp_iters=hvp_iters)
    doc = {"constants": consts.to_dict(), "lambda_max": consts.lambda_max,
           "estimation_converged": not any(issubclass(w.category, EstimationWarning)
                                           for w in caught),
           "bound_checks": [], "contribution": contribution_summary(records)}
    if records:
        gap = sim.summarize(w0).global_loss - sim.summarize().global_loss
        report = theory.contraction_report(records, consts.mu, max(gap, 0.0))
        doc["bound_checks"].append({
            "name": "contraction_factor_at_most_one",
            "satisfied": not report.expanding_rounds,
            "max_violation": max(0.0, max(report.factors) - 1.0),
            "cases": len(report.factors),
            "expanding_rounds": len(report.expanding_rounds),
            "overshoot_rounds": len(report.overshoot_rounds),
        })
    return doc


def execute(cfg, out_dir=None, quiet=True, workers=None, estimate=True):
    """Run the configured experiment; writes outputs when ``out_dir`` is given.

    ``estimate=False`` skips the constant estimation that fills ``theory.json``.
    """
    sim, w0 = make_simulation(cfg, workers)
    s = cfg.schedule
    decision = None
    if s.pretrain.enabled:
        decision = pretrain_and_exit(sim, s.pretrain.K, s.pretrain.epsilon_exit, w0)
        if not quiet:
            log.info("exit phase kept %d/%d clients", len(decision.included), len(decision.scores))
    else:
        sim.initialize(w0)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    records, summaries = [], [sim.summarize()]
    try:
        for t in range(1, s.T + 1):
            rec = sim.run_round()
            if t % s.eval_every == 0 or t == s.T:
                summ = sim.summarize()
                rec.id_acc, rec.ood_acc = summ.id_acc, summ.ood_acc
                summaries.append(summ)
                if not quiet:
                    log.info("t=%d loss=%.6g penalty=%.4g id_acc=%.4f ood_acc=%.4f", t,
                             summ.global_loss, summ.global_penalty_mean, summ.id_acc, summ.ood_acc)
            records.append(rec)
            if out is not None and s.checkpoint_every and t % s.checkpoint_every == 0:
                tc.save_params(out / f"checkpoint_{t:06d}.params", sim.w, sim.spec)
    except NumericalError as exc:
        log.error("run aborted: %s", exc)
        if out is not None:
            evalkit.write_outputs(records, summaries, out)
        raise

    final = final_evaluation(sim, decision)
    if estimate:
        theory_doc = run_theory(sim, records, w0, cfg.seed)
    else:
        theory_doc = {"constants": None, "lambda_max": None, "bound_checks": [],
                      "contribution": contribution_summary(records)}
    if out is not None:
        evalkit.write_outputs(records, summaries, out, theory=theory_doc, final_eval=final,
                              checkpoint=(sim.w, sim.spec))
    return RunResult(records, summaries, final, decision, sim.w, sim.spec, sim, theory_doc)
