"""Small differentiable models evaluated over flat parameter vectors.

Three architectures are supported: a linear map, a softmax (logistic)
classifier and a tanh MLP.  All of them are dense tanh networks with zero or
more hidden layers, so a single kernel evaluates loss, gradient and the exact
Hessian-vector product for every family.

Parameter layout is layer-major; inside a layer the weight matrix (row-major,
shape ``(fan_out, fan_in)``) comes first, then the bias.

Backend selection happens at import: the compiled ``fedinv._kernels``
extension is used when it imports, unless ``FEDINV_BACKEND=python`` is set.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fedinv import _kernels_py
from fedinv.errors import ContractError, EmptyDataset, FormatError

SQUARED = "squared"
CROSS_ENTROPY = "cross_entropy"
_LOSS_CODES = {SQUARED: _kernels_py.SQUARED, CROSS_ENTROPY: _kernels_py.CROSS_ENTROPY}
ARCHS = ("linear", "logistic", "mlp")

# Work size (samples x parameters) above which numpy/BLAS beats the compiled
# per-sample loop.  Picked from benchmarks/bench_kernels.py.
COMPILED_WORK_LIMIT = 4_000


def _load_compiled():
    if os.environ.get("FEDINV_BACKEND", "").lower() == "python":
        return None
    try:
        from fedinv import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()
BACKEND = "compiled" if _compiled is not None else "python"


def set_backend(name):
    """Switch between ``"compiled"`` and ``"python"``; returns the previous name."""
    global BACKEND
    if name not in ("compiled", "python"):
        raise ContractError(f"unknown backend {name!r}")
    if name == "compiled" and _compiled is None:
        raise ContractError("compiled kernels are not available in this install")
    previous, BACKEND = BACKEND, name
    return previous


@dataclass(frozen=True)
class ModelSpec:
    """Architecture plus loss.

    ``outputs`` is the number of output units (classes for cross-entropy).
    For squared loss on integer labels, targets are ``target_scale * (2y - 1)``
    with one output, or ``target_scale * onehot(y)`` with several.
    """

    arch: str
    input_dim: int
    outputs: int = 1
    hidden_dims: tuple = ()
    loss: str = SQUARED
    bias: bool = True
    target_scale: float = 1.0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ContractError(f"unknown arch {self.arch!r}")
        if self.loss not in _LOSS_CODES:
            raise ContractError(f"unknown loss {self.loss!r}")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.outputs < 1 or any(h < 1 for h in self.hidden_dims):
            raise ContractError("layer widths must be positive")
        if self.arch == "mlp" and not self.hidden_dims:
            raise ContractError("mlp needs at least one hidden layer")
        if self.arch != "mlp" and self.hidden_dims:
            raise ContractError(f"{self.arch} takes no hidden layers")
        if self.loss == CROSS_ENTROPY and self.outputs < 2:
            raise ContractError("cross-entropy needs at least two outputs")
        if not (np.isfinite(self.target_scale) and self.target_scale > 0):
            raise ContractError("target_scale must be positive")

    @classmethod
    def linear(cls, input_dim, outputs=1, bias=True, target_scale=1.0):
        return cls("linear", input_dim, outputs, (), SQUARED, bias, target_scale)

    @classmethod
    def logistic(cls, input_dim, num_classes, bias=True):
        return cls("logistic", input_dim, num_classes, (), CROSS_ENTROPY, bias)

    @classmethod
    def mlp(cls, input_dim, hidden_dims, num_classes, loss=CROSS_ENTROPY, bias=True,
            target_scale=1.0):
        return cls("mlp", input_dim, num_classes, tuple(hidden_dims), loss, bias, target_scale)

    @property
    def layer_sizes(self):
        widths = (self.input_dim, *self.hidden_dims, self.outputs)
        return tuple(zip(widths[:-1], widths[1:]))

    @property
    def d_model(self):
        return sum(a * b + (b if self.bias else 0) for a, b in self.layer_sizes)

    @property
    def tag(self):
        widths = (self.input_dim, *self.hidden_dims, self.outputs)
        return f"{self.arch}:" + "-".join(str(w) for w in widths)


@dataclass(eq=False)
class Dataset:
    """Labelled samples of one environment.

    ``y`` holds integer class labels or, for regression, real targets
    (shape ``(n,)`` or ``(n, outputs)``).
    """

    X: np.ndarray
    y: np.ndarray
    env_id: int = 0
    meta: dict = field(default_factory=dict)
    _targets: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ContractError("X must be a 2-D array")
        y = np.asarray(self.y)
        if y.shape[0] != self.X.shape[0]:
            raise ContractError("X and y disagree on the sample count")
        self.y = y if y.dtype.kind in "iu" else np.ascontiguousarray(y, dtype=np.float64)

    def __len__(self):
        return self.X.shape[0]

    @property
    def is_classification(self):
        return self.y.dtype.kind in "iu"

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx], self.env_id, dict(self.meta))

    @staticmethod
    def concat(parts, env_id=-1):
        parts = list(parts)
        if not parts:
            raise EmptyDataset("nothing to concatenate")
        return Dataset(np.concatenate([p.X for p in parts]),
                       np.concatenate([p.y for p in parts]), env_id)

    def targets_for(self, spec):
        """Targets in the layout the kernel expects for ``spec`` (cached)."""
        key = (spec.loss, spec.outputs, spec.target_scale)
        cached = self._targets.get(key)
        if cached is not None:
            return cached
        if spec.loss == CROSS_ENTROPY:
            if not self.is_classification:
                raise ContractError("cross-entropy needs integer labels")
            if len(self) and (self.y.min() < 0 or self.y.max() >= spec.outputs):
                raise ContractError("class index out of range")
            T = np.ascontiguousarray(self.y, dtype=np.intp)
        elif self.is_classification:
            s = spec.target_scale
            if spec.outputs == 1:
                T = (s * (2.0 * self.y - 1.0)).reshape(-1, 1)
            else:
                T = np.zeros((len(self), spec.outputs))
                T[np.arange(len(self)), self.y] = s
            T = np.ascontiguousarray(T)
        else:
            T = np.ascontiguousarray(self.y.reshape(len(self), -1), dtype=np.float64)
            if T.shape[1] != spec.outputs:
                raise ContractError("regression targets do not match the output width")
        self._targets[key] = T
        return T


def _check(params, spec, data, v=None):
    params = np.ascontiguousarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != spec.d_model:
        raise ContractError(f"expected {spec.d_model} parameters, got shape {params.shape}")
    if len(data) == 0:
        raise EmptyDataset("dataset has no samples")
    if data.X.shape[1] != spec.input_dim:
        raise ContractError(f"expected {spec.input_dim} features, got {data.X.shape[1]}")
    if v is not None:
        v = np.ascontiguousarray(v, dtype=np.float64)
        if v.shape != params.shape:
            raise ContractError("direction and parameters differ in dimension")
    return params, v


def _eval(params, spec, data, v=None, want_grad=True):
    params, v = _check(params, spec, data, v)
    Y = data.targets_for(spec)
    code = _LOSS_CODES[spec.loss]
    if BACKEND == "compiled" and len(data) * spec.d_model <= COMPILED_WORK_LIMIT:
        return _compiled.dense_eval(params, spec.layer_sizes, spec.bias, code, data.X, Y,
                                    v, want_grad)
    return _kernels_py.dense_eval(params, spec.layer_sizes, spec.bias, code, data.X, Y,
                                  v, want_grad)


def empirical_risk(params, spec, data):
    """Mean loss over ``data``."""
    return _eval(params, spec, data, want_grad=False)[0]


def risk_grad(params, spec, data):
    return _eval(params, spec, data)[1]


def risk_hvp(params, spec, data, v):
    """Exact Hessian-vector product by forward-over-reverse differentiation."""
    return _eval(params, spec, data, v=v, want_grad=False)[2]


def risk_grad_hvp(params, spec, data, v):
    """Loss, gradient and Hessian-vector product from one fused pass."""
    return _eval(params, spec, data, v=v)


def outputs(params, spec, X):
    params = np.ascontiguousarray(params, dtype=np.float64)
    if params.shape != (spec.d_model,):
        raise ContractError(f"expected {spec.d_model} parameters, got shape {params.shape}")
    X = np.ascontiguousarray(X, dtype=np.float64)
    return _kernels_py.forward(params, spec.layer_sizes, spec.bias, X)[-1]


def predict(params, spec, X):
    """Predicted class per row.

    With several outputs this is the argmax, ties going to the lowest index.
    A single output predicts class 1 when strictly positive, else class 0.
    """
    out = outputs(params, spec, X)
    if spec.outputs == 1:
        return (out[:, 0] > 0).astype(np.intp)
    return np.argmax(out, axis=1)


def init_params(spec, rng, scale=None):
    """Glorot-style normal initialisation with zero biases."""
    parts = []
    for fan_in, fan_out in spec.layer_sizes:
        std = np.sqrt(2.0 / (fan_in + fan_out)) if scale is None else scale
        parts.append(rng.normal(0.0, std, size=fan_in * fan_out))
        if spec.bias:
            parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def quadratic_dataset(A, center):
    """Linear least-squares data whose risk is exactly ``0.5 (w-c)^T A (w-c)``.

    ``A`` must be symmetric positive semidefinite.  Pair with
    ``ModelSpec.linear(len(center), bias=False)``.
    """
    A = np.asarray(A, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    d = c.shape[0]
    evals, Q = np.linalg.eigh(A)
    if evals.min() < -1e-12 * max(1.0, abs(evals).max()):
        raise ContractError("A must be positive semidefinite")
    X = np.sqrt(d) * (np.sqrt(np.clip(evals, 0.0, None))[:, None] * Q.T)
    return Dataset(X, X @ c)


def save_params(path, params, spec):
    """Write a checkpoint: a header line then one shortest-repr float per line."""
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.d_model,):
        raise ContractError("parameter vector does not match the model")
    lines = [f"fedinv-params v1 {spec.tag} {spec.d_model}"]
    lines.extend(repr(float(x)) for x in params)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_params(path, spec=None):
    """Read a checkpoint; returns ``(params, arch_tag)``."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty checkpoint")
    head = lines[0].split()
    if len(head) != 4 or head[:2] != ["fedinv-params", "v1"]:
        raise FormatError(f"{path}: bad checkpoint header")
    tag = head[2]
    body = [ln for ln in lines[1:] if ln.strip()]
    try:
        d = int(head[3])
        values = np.array([float(x) for x in body])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if len(body) != d:
        raise FormatError(f"{path}: header declares {d} values, found {len(body)}")
    if spec is not None and (tag != spec.tag or d != spec.d_model):
        raise FormatError(f"{path}: checkpoint is {tag}, model is {spec.tag}")
    return values, tag
