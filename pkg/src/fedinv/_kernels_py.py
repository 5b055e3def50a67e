"""Pure numpy evaluation of the dense tanh network family.

This is the fallback used when the compiled ``_kernels`` extension is not
importable, and the large-problem path of the compiled backend (BLAS wins
there).  The Hessian-vector product is the forward-over-reverse R-operator
pass, so no Hessian is ever formed.
"""

import numpy as np

SQUARED = 0
CROSS_ENTROPY = 1


def unpack(params, layer_sizes, bias):
    """Split a flat vector into per-layer ``(W, b)`` views (layer-major, W then b)."""
    out = []
    pos = 0
    for fan_in, fan_out in layer_sizes:
        W = params[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        if bias:
            b = params[pos:pos + fan_out]
            pos += fan_out
        else:
            b = None
        out.append((W, b))
    return out


def forward(params, layer_sizes, bias, X):
    acts = [X]
    layers = unpack(params, layer_sizes, bias)
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = acts[-1] @ W.T
        if b is not None:
            z += b
        if i < last:
            acts.append(np.tanh(z))
        else:
            acts.append(z)
    return acts


def _loss_terms(out, Y, loss_kind):
    """Per-batch mean loss and its derivative w.r.t. the outputs (already / n)."""
    n = out.shape[0]
    if loss_kind == SQUARED:
        r = out - Y
        loss = 0.5 * float(np.sum(r * r)) / n
        return loss, r / n, None
    m = out.max(axis=1, keepdims=True)
    e = np.exp(out - m)
    s = e.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(s[:, 0])
    rows = np.arange(n)
    loss = float(np.sum(lse - out[rows, Y])) / n
    p = e / s
    d = p.copy()
    d[rows, Y] -= 1.0
    return loss, d / n, p


def dense_eval(params, layer_sizes, bias, loss_kind, X, Y, v=None, want_grad=True):
    """Return ``(loss, grad, hvp)``; ``grad``/``hvp`` are None when not requested."""
    layers = unpack(params, layer_sizes, bias)
    acts = forward(params, layer_sizes, bias, X)
    n = X.shape[0]
    loss, dout, probs = _loss_terms(acts[-1], Y, loss_kind)
    if not want_grad and v is None:
        return loss, None, None

    grad = np.empty_like(params)
    gviews = unpack(grad, layer_sizes, bias)
    hvp = None
    if v is not None:
        hvp = np.empty_like(params)
        hviews = unpack(hvp, layer_sizes, bias)
        vlayers = unpack(v, layer_sizes, bias)
        # R-forward: directional derivatives of every activation.
        racts = [np.zeros_like(X)]
        last = len(layers) - 1
        for i, ((W, _), (V, c)) in enumerate(zip(layers, vlayers)):
            rz = acts[i] @ V.T
            if i > 0:
                rz += racts[i] @ W.T
            if c is not None:
                rz += c
            if i < last:
                racts.append((1.0 - acts[i + 1] ** 2) * rz)
            else:
                racts.append(rz)
        rout = racts[-1]
        if loss_kind == SQUARED:
            rdelta = rout / n
        else:
            rdelta = (probs * rout - probs * np.sum(probs * rout, axis=1, keepdims=True)) / n

    delta = dout
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        gW, gb = gviews[i]
        gW[...] = delta.T @ acts[i]
        if gb is not None:
            gb[...] = delta.sum(axis=0)
        if v is not None:
            hW, hb = hviews[i]
            hW[...] = rdelta.T @ acts[i]
            if i > 0:
                hW += delta.T @ racts[i]
            if hb is not None:
                hb[...] = rdelta.sum(axis=0)
        if i > 0:
            back = delta @ W
            dtanh = 1.0 - acts[i] ** 2
            if v is not None:
                V, _ = vlayers[i]
                rback = rdelta @ W + delta @ V
                rdelta = rback * dtanh - back * (2.0 * acts[i] * racts[i])
            delta = back * dtanh
    return loss, grad, hvp
