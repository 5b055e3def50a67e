"""Command line entry point: ``fedinv <subcommand> --config exp.toml``."""

import argparse
import csv
import io
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from fedinv import checks, config, envgen, evalkit, experiment, plot
from fedinv.errors import ConfigError, FedInvError, NumericalError
from fedinv.fedsim import pretrain_and_exit, thread_cap

log = logging.getLogger("fedinv")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
SWEEP_HEADER = ["lambda", "status", "rounds", "global_loss", "global_penalty_mean", "id_acc",
                "ood_acc", "max_penalty"]


def _load(args):
    cfg = config.parse_config(args.config)
    return cfg.with_overrides(seed=args.seed, out=args.out)


def _out_dir(cfg):
    out = Path(cfg.outputs.dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FedInvError(f"could not create {out}: {exc}") from exc
    return out


def cmd_gen_data(args):
    cfg = _load(args)
    out = _out_dir(cfg)
    if cfg.data.kind == "container":
        raise ConfigError("data.kind: gen-data needs a generator, not a container")
    envs = experiment.build_envs(cfg)
    envgen.write_container(out / "envs.fedinv", envs)
    log.info("wrote %d environments to %s", len(envs), out / "envs.fedinv")
    return EXIT_OK


def cmd_pretrain_score(args):
    cfg = _load(args)
    out = _out_dir(cfg)
    sim, w0 = experiment.make_simulation(cfg)
    p = cfg.schedule.pretrain
    decision = pretrain_and_exit(sim, p.K, p.epsilon_exit, w0)
    doc = {"K": p.K, "epsilon_exit": p.epsilon_exit,
           "scores": {str(k): v for k, v in sorted(decision.scores.items())},
           "included": sorted(decision.included), "excluded": sorted(decision.excluded)}
    evalkit.atomic_write(out / "exit_scores.json", evalkit.dumps_json(doc))
    log.info("kept %s, excluded %s", doc["included"], doc["excluded"])
    return EXIT_OK


def cmd_run(args):
    cfg = _load(args)
    out = _out_dir(cfg)
    evalkit.atomic_write(out / "config.toml", config.dumps(cfg))
    result = experiment.execute(cfg, out_dir=out, quiet=args.quiet)
    final = result.final_eval
    log.info("done: ood_acc=%s max_penalty=%.6g", final["ood_acc"], final["max_penalty"])
    return EXIT_OK


def _sweep_one(item):
    cfg, lam, out = item
    run_cfg = cfg.with_overrides(lam=lam, out=out)
    try:
        result = experiment.execute(run_cfg, out_dir=out)
    except NumericalError as exc:
        return lam, "diverged", None, str(exc)
    last = result.summaries[-1]
    return lam, "ok", (last.t, last.global_loss, last.global_penalty_mean, last.id_acc,
                       last.ood_acc, result.final_eval["max_penalty"]), ""


def sweep_rows(results):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for lam, status, values, _ in results:
        cells = [evalkit.fmt(v) for v in values] if values else [""] * (len(SWEEP_HEADER) - 2)
        writer.writerow([evalkit.fmt(lam), status] + cells)
    return buf.getvalue()


def cmd_sweep(args):
    cfg = _load(args)
    out = _out_dir(cfg)
    lambdas = sorted(cfg.sweep.lambdas)
    items = [(cfg, lam, str(out / f"lambda_{evalkit.fmt(lam)}")) for lam in lambdas]
    workers = min(thread_cap(), len(items))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_sweep_one, items))
    else:
        results = [_sweep_one(x) for x in items]
    for lam, status, _, msg in results:
        if status != "ok":
            log.warning("lambda=%s aborted: %s", lam, msg)
    evalkit.atomic_write(out / "sweep.csv", sweep_rows(results))
    return EXIT_OK


def cmd_theory_check(args):
    cfg = _load(args)
    out = _out_dir(cfg)
    report = checks.run_theory_checks(cfg.theory, cfg.seed)
    evalkit.atomic_write(out / "theory.json", evalkit.dumps_json(report))
    for c in report["bound_checks"]:
        log.info("%-32s %s (worst margin %.4g over %d cases)", c["name"],
                 "holds" if c["satisfied"] else "VIOLATED", c["worst_margin"], c["cases"])
    return EXIT_OK


def cmd_plot(args):
    runs = [Path(r) for r in args.runs]
    missing = [str(r) for r in runs if not (r / "summary.csv").is_file()]
    if missing:
        raise ConfigError(f"plot: no summary.csv in {', '.join(missing)}")
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    svg = plot.plot_runs(runs, args.metric)
    target = out / f"{args.metric}.svg"
    evalkit.atomic_write(target, svg)
    log.info("wrote %s", target)
    return EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate the configured environments into a container file"),
    "pretrain-score": (cmd_pretrain_score, "score clients over probe rounds and apply the exit rule"),
    "run": (cmd_run, "run one federated experiment"),
    "sweep": (cmd_sweep, "run the experiment for every penalty strength in sweep.lambdas"),
    "theory-check": (cmd_theory_check, "check the analytical bounds on quadratic ensembles"),
    "plot": (cmd_plot, "draw summary metrics of one or more run directories as SVG"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="fedinv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        if name == "plot":
            p.add_argument("runs", nargs="+", help="run directories containing summary.csv")
            p.add_argument("--metric", default="ood_acc",
                           choices=["global_loss", "global_penalty_mean", "id_acc", "ood_acc"])
        else:
            p.add_argument("--config", required=True, help="experiment TOML file")
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--quiet", action="store_true", help="only report warnings and errors")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INVALID
    handler = COMMANDS[args.command][0]
    try:
        return handler(args)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"error: {v}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FedInvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
