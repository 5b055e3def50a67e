import math

import numpy as np
import pytest

from fedinv import evalkit
from fedinv import tensorcore as tc
from fedinv.errors import EmptyDataset, FedInvError
from fedinv.fedsim import ClientRound, RoundRecord, Summary


def test_perfect_classifier():
    spec = tc.ModelSpec.logistic(2, 2, bias=False)
    X = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
    y = np.array([0, 1, 0])
    w = np.array([10.0, 0.0, 0.0, 10.0])  # class k logit = 10 * x_k
    res = evalkit.evaluate(w, spec, tc.Dataset(X, y))
    assert res.accuracy == 1.0 and res.n_eval == 3


def test_constant_logits_fall_to_lowest_class():
    spec = tc.ModelSpec.logistic(2, 2, bias=False)
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 500)
    data = tc.Dataset(rng.standard_normal((500, 2)), y)
    res = evalkit.evaluate(np.zeros(spec.d_model), spec, data)
    assert res.accuracy == np.mean(y == 0)


def test_mean_loss_is_empirical_risk_bitwise():
    rng = np.random.default_rng(1)
    spec = tc.ModelSpec.mlp(3, (4,), 3)
    data = tc.Dataset(rng.standard_normal((20, 3)), rng.integers(0, 3, 20))
    w = rng.standard_normal(spec.d_model)
    assert evalkit.evaluate(w, spec, data).mean_loss == tc.empirical_risk(w, spec, data)


def test_empty_and_regression():
    spec = tc.ModelSpec.linear(2)
    data = tc.Dataset(np.zeros((3, 2)), np.array([0.5, 1.5, 2.5]))
    assert math.isnan(evalkit.evaluate(np.zeros(spec.d_model), spec, data).accuracy)
    with pytest.raises(EmptyDataset):
        evalkit.evaluate(np.zeros(spec.d_model), spec, data.subset([]))


def test_fmt_is_shortest_round_trip():
    assert evalkit.fmt(0.1) == "0.1"
    assert evalkit.fmt(True) == "1" and evalkit.fmt(np.int64(3)) == "3"
    x = 1 / 3
    assert float(evalkit.fmt(x)) == x


def test_zero_rounds_gives_header_only(tmp_path):
    evalkit.write_outputs([], [], tmp_path)
    assert (tmp_path / "rounds.csv").read_text() == evalkit.ROUNDS_HEADER + "\n"
    assert (tmp_path / "summary.csv").read_text() == evalkit.SUMMARY_HEADER + "\n"


def test_round_rows_count(tmp_path):
    recs = [RoundRecord(t, 1.0, 0.0, [ClientRound(i, True, 0, 0.1, 1.0, 0.0) for i in range(3)])
            for t in range(1, 6)]
    evalkit.write_outputs(recs, [Summary(0, 1.0, 0.0, 0.5, math.nan)], tmp_path)
    lines = (tmp_path / "rounds.csv").read_text().splitlines()
    assert len(lines) == 1 + 5 * 3
    assert lines[1] == "1,0,1,0,0.1,1.0,0.0"
    assert (tmp_path / "summary.csv").read_text().splitlines()[1] == "0,1.0,0.0,0.5,nan"


def test_json_is_sorted_and_nan_free():
    text = evalkit.dumps_json({"b": math.nan, "a": [np.float64(1.5), np.int32(2)]})
    assert text == '{\n  "a": [\n    1.5,\n    2\n  ],\n  "b": null\n}\n'


def test_write_failure_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(FedInvError, match="file"):
        evalkit.write_outputs([], [], blocker / "sub")


def test_pooled_accuracy():
    spec = tc.ModelSpec.linear(1, bias=False)
    a = tc.Dataset(np.array([[1.0], [-1.0]]), np.array([1, 1]))
    b = tc.Dataset(np.array([[1.0]]), np.array([1]))
    assert evalkit.pooled_accuracy(np.array([1.0]), spec, [a, b]) == pytest.approx(2 / 3)
    assert math.isnan(evalkit.pooled_accuracy(np.array([1.0]), spec, []))
