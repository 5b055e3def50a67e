"""Accuracy/loss evaluation and deterministic output files."""

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fedinv import tensorcore as tc
from fedinv.errors import EmptyDataset, FedInvError

ROUNDS_HEADER = "t,client_id,participated,staleness,contribution_hat,local_loss,local_penalty"
SUMMARY_HEADER = "t,global_loss,global_penalty_mean,id_acc,ood_acc"


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    mean_loss: float
    n_eval: int


def correct_count(params, spec, data):
    return int(np.count_nonzero(tc.predict(params, spec, data.X) == data.y))


def evaluate(params, spec, data):
    """Argmax accuracy (ties to the lowest class) and mean loss.

    Regression data (real targets) have no accuracy; it is reported as NaN.
    """
    if len(data) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    loss = tc.empirical_risk(params, spec, data)
    acc = correct_count(params, spec, data) / len(data) if data.is_classification else math.nan
    return EvalResult(acc, loss, len(data))


def pooled_accuracy(params, spec, parts):
    """Accuracy over the union of several datasets (NaN when there is nothing to score)."""
    parts = [p for p in parts if len(p) and p.is_classification]
    total = sum(len(p) for p in parts)
    if total == 0:
        return math.nan
    return sum(correct_count(params, spec, p) for p in parts) / total


def fmt(x):
    """Shortest round-trip decimal for floats; ints and bools as integers."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dumps_json(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def atomic_write(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise FedInvError(f"could not write {path}: {exc}") from exc


def rounds_csv(records):
    lines = [ROUNDS_HEADER]
    for rec in records:
        for e in rec.per_client:
            lines.append(",".join(fmt(v) for v in (rec.t, e.id, e.participated, e.staleness,
                                                    e.contribution_hat, e.local_loss,
                                                    e.local_penalty)))
    return "\n".join(lines) + "\n"


def summary_csv(summaries):
    lines = [SUMMARY_HEADER]
    for s in summaries:
        lines.append(",".join(fmt(v) for v in (s.t, s.global_loss, s.global_penalty_mean,
                                                s.id_acc, s.ood_acc)))
    return "\n".join(lines) + "\n"


def write_outputs(records, summaries, out_dir, theory=None, final_eval=None, checkpoint=None):
    """Write ``rounds.csv`` and ``summary.csv`` plus optional JSON and checkpoint.

    ``checkpoint`` is a ``(params, spec)`` pair saved as ``final.params``.
    Returns the list of written paths.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FedInvError(f"could not create {out}: {exc}") from exc
    written = [out / "rounds.csv", out / "summary.csv"]
    atomic_write(written[0], rounds_csv(records))
    atomic_write(written[1], summary_csv(summaries))
    if theory is not None:
        written.append(out / "theory.json")
        atomic_write(written[-1], dumps_json(theory))
    if final_eval is not None:
        written.append(out / "final_eval.json")
        atomic_write(written[-1], dumps_json(final_eval))
    if checkpoint is not None:
        written.append(out / "final.params")
        tc.save_params(written[-1], *checkpoint)
    return written
