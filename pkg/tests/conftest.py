import numpy as np
import pytest

from fedinv import tensorcore as tc


def random_problem(rng, arch, n=12, d=3, classes=3, bias=True, loss=None):
    X = rng.standard_normal((n, d))
    if arch == "linear":
        spec = tc.ModelSpec.linear(d, outputs=2, bias=bias)
        data = tc.Dataset(X, rng.standard_normal((n, 2)))
    elif arch == "logistic":
        spec = tc.ModelSpec.logistic(d, classes, bias=bias)
        data = tc.Dataset(X, rng.integers(0, classes, n))
    else:
        spec = tc.ModelSpec.mlp(d, (4, 3), classes, loss or tc.CROSS_ENTROPY, bias=bias)
        data = tc.Dataset(X, rng.integers(0, classes, n))
    return spec, data, rng.standard_normal(spec.d_model) * 0.7


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["compiled", "python"])
def backend(request):
    if request.param == "compiled" and tc._compiled is None:
        pytest.skip("compiled kernels not built")
    previous = tc.set_backend(request.param)
    yield request.param
    tc.set_backend(previous)


ACCEPTANCE_LINES = {}


@pytest.fixture
def report():
    """Record the one-line verdict of an acceptance criterion."""
    def record(number, passed, detail):
        ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
