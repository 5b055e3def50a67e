"""Time the compiled and numpy kernels on the same problems.

Run with ``python3 benchmarks/bench_kernels.py``.  Each row reports the work
size (samples x parameters) and the best-of-N time per evaluation of loss,
gradient and Hessian-vector product for both backends.  The crossover row
is what ``tensorcore.COMPILED_WORK_LIMIT`` is set from.
"""

import argparse
import timeit

import numpy as np

from fedinv import _kernels_py
from fedinv import tensorcore as tc

try:
    from fedinv import _kernels
except ImportError:
    _kernels = None

CASES = [
    ("linear", 100, 8, ()), ("linear", 300, 8, ()), ("linear", 500, 8, ()),
    ("linear", 1000, 8, ()), ("linear", 10000, 8, ()), ("mlp", 40, 4, (8,)),
    ("mlp", 100, 4, (8,)),
    ("logistic", 600, 539, ()), ("logistic", 3000, 539, ()),
    ("mlp", 200, 20, (16,)), ("mlp", 2000, 20, (16,)), ("mlp", 600, 539, (16,)),
    ("mlp", 2700, 539, (16,)), ("mlp", 600, 539, (64,)),
]


def build(arch, n, d, hidden, rng):
    if arch == "linear":
        spec = tc.ModelSpec.linear(d)
        y = rng.standard_normal(n)
    elif arch == "logistic":
        spec = tc.ModelSpec.logistic(d, 10)
        y = rng.integers(0, 10, n)
    else:
        spec = tc.ModelSpec.mlp(d, hidden, 10)
        y = rng.integers(0, 10, n)
    data = tc.Dataset(rng.standard_normal((n, d)), y)
    w = 0.1 * rng.standard_normal(spec.d_model)
    v = rng.standard_normal(spec.d_model)
    return spec, data, w, v


def time_kernel(module, spec, data, w, v, repeat):
    Y = data.targets_for(spec)
    code = tc._LOSS_CODES[spec.loss]

    def call():
        module.dense_eval(w, spec.layer_sizes, spec.bias, code, data.X, Y, v, True)

    number = max(1, int(2e6 // (len(data) * spec.d_model)))
    return min(timeit.repeat(call, number=number, repeat=repeat)) / number


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _kernels is None:
        print("compiled kernels not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'arch':<9}{'n':>7}{'params':>8}{'work':>11}{'numpy ms':>11}{'compiled ms':>13}"
          f"{'speedup':>9}")
    for arch, n, d, hidden in CASES:
        spec, data, w, v = build(arch, n, d, hidden, rng)
        t_py = time_kernel(_kernels_py, spec, data, w, v, args.repeat)
        line = f"{arch:<9}{n:>7}{spec.d_model:>8}{n * spec.d_model:>11}{1e3 * t_py:>11.3f}"
        if _kernels is not None:
            t_c = time_kernel(_kernels, spec, data, w, v, args.repeat)
            line += f"{1e3 * t_c:>13.3f}{t_py / t_c:>9.2f}"
        print(line)
    print(f"current COMPILED_WORK_LIMIT = {tc.COMPILED_WORK_LIMIT}")


if __name__ == "__main__":
    main()
