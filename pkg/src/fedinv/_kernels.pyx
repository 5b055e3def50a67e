# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-sample kernel for the dense tanh network family.

Same contract as ``fedinv._kernels_py.dense_eval``.  Every sample is pushed
through forward, R-forward, backward and R-backward passes with preallocated
scratch buffers, which removes the per-call overhead that dominates numpy on
the small models used by the simulator.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, exp, log

cnp.import_array()

cdef enum:
    SQUARED = 0


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) nogil:
    cdef Py_ssize_t j
    cdef double s = 0.0
    for j in range(n):
        s += a[j] * b[j]
    return s


def dense_eval(double[::1] params, layer_sizes, bint bias, int loss_kind,
               const double[:, ::1] X, Y, v=None, bint want_grad=True):
    cdef Py_ssize_t nl = len(layer_sizes)
    cdef Py_ssize_t n = X.shape[0]
    cdef cnp.intp_t[::1] fin = np.empty(nl, dtype=np.intp)
    cdef cnp.intp_t[::1] fout = np.empty(nl, dtype=np.intp)
    cdef cnp.intp_t[::1] woff = np.empty(nl, dtype=np.intp)
    cdef cnp.intp_t[::1] boff = np.empty(nl, dtype=np.intp)
    cdef cnp.intp_t[::1] aoff = np.empty(nl + 1, dtype=np.intp)
    cdef Py_ssize_t i, j, o, k, pos = 0, width = 0, total = 0
    for i in range(nl):
        fin[i] = layer_sizes[i][0]
        fout[i] = layer_sizes[i][1]
        woff[i] = pos
        pos += fin[i] * fout[i]
        boff[i] = pos
        if bias:
            pos += fout[i]
        width = max(width, fin[i], fout[i])
    aoff[0] = 0
    for i in range(nl):
        aoff[i + 1] = aoff[i] + fin[i]
    total = aoff[nl] + fout[nl - 1]

    cdef bint do_hvp = v is not None
    cdef bint do_grad = want_grad or do_hvp
    cdef double[::1] vv = v if do_hvp else params
    cdef cnp.ndarray grad_arr = np.zeros(params.shape[0])
    cdef cnp.ndarray hvp_arr = np.zeros(params.shape[0])
    cdef double[::1] g = grad_arr
    cdef double[::1] h = hvp_arr
    cdef double[::1] act = np.empty(total)
    cdef double[::1] ract = np.zeros(total)
    cdef double[::1] d = np.empty(width)
    cdef double[::1] rd = np.empty(width)
    cdef double[::1] d2 = np.empty(width)
    cdef double[::1] rd2 = np.empty(width)
    cdef double[::1] prob = np.empty(fout[nl - 1])

    cdef const double[:, ::1] T
    cdef const cnp.intp_t[::1] lab
    if loss_kind == SQUARED:
        T = Y
    else:
        lab = Y

    cdef double loss = 0.0, z, m, s, r, dt, back, rback, pr
    cdef Py_ssize_t s_i, K = fout[nl - 1], ofs_out = aoff[nl]
    cdef const double* W
    cdef const double* V
    cdef double* a_in
    cdef double* ra_in

    with nogil:
        for s_i in range(n):
            for j in range(fin[0]):
                act[j] = X[s_i, j]
            # forward
            for i in range(nl):
                a_in = &act[aoff[i]]
                for o in range(fout[i]):
                    W = &params[woff[i] + o * fin[i]]
                    z = _dot(W, a_in, fin[i])
                    if bias:
                        z = z + params[boff[i] + o]
                    if i < nl - 1:
                        act[aoff[i + 1] + o] = tanh(z)
                    else:
                        act[aoff[i + 1] + o] = z
            # loss and output delta
            if loss_kind == SQUARED:
                for k in range(K):
                    r = act[ofs_out + k] - T[s_i, k]
                    loss += 0.5 * r * r
                    d[k] = r
            else:
                m = act[ofs_out]
                for k in range(1, K):
                    if act[ofs_out + k] > m:
                        m = act[ofs_out + k]
                s = 0.0
                for k in range(K):
                    prob[k] = exp(act[ofs_out + k] - m)
                    s += prob[k]
                loss += m + log(s) - act[ofs_out + lab[s_i]]
                for k in range(K):
                    prob[k] = prob[k] / s
                    d[k] = prob[k]
                d[lab[s_i]] -= 1.0
            if not do_grad:
                continue
            if do_hvp:
                # R-forward (ract[0:fin0] stays zero)
                for i in range(nl):
                    a_in = &act[aoff[i]]
                    ra_in = &ract[aoff[i]]
                    for o in range(fout[i]):
                        V = &vv[woff[i] + o * fin[i]]
                        z = _dot(V, a_in, fin[i])
                        if i > 0:
                            z = z + _dot(&params[woff[i] + o * fin[i]], ra_in, fin[i])
                        if bias:
                            z = z + vv[boff[i] + o]
                        if i < nl - 1:
                            dt = act[aoff[i + 1] + o]
                            ract[aoff[i + 1] + o] = (1.0 - dt * dt) * z
                        else:
                            ract[aoff[i + 1] + o] = z
                if loss_kind == SQUARED:
                    for k in range(K):
                        rd[k] = ract[ofs_out + k]
                else:
                    pr = 0.0
                    for k in range(K):
                        pr += prob[k] * ract[ofs_out + k]
                    for k in range(K):
                        rd[k] = prob[k] * (ract[ofs_out + k] - pr)
            # backward
            for i in range(nl - 1, -1, -1):
                a_in = &act[aoff[i]]
                ra_in = &ract[aoff[i]]
                for o in range(fout[i]):
                    for j in range(fin[i]):
                        g[woff[i] + o * fin[i] + j] += d[o] * a_in[j]
                    if bias:
                        g[boff[i] + o] += d[o]
                    if do_hvp:
                        for j in range(fin[i]):
                            h[woff[i] + o * fin[i] + j] += rd[o] * a_in[j] + d[o] * ra_in[j]
                        if bias:
                            h[boff[i] + o] += rd[o]
                if i == 0:
                    break
                for j in range(fin[i]):
                    back = 0.0
                    rback = 0.0
                    for o in range(fout[i]):
                        back += d[o] * params[woff[i] + o * fin[i] + j]
                        if do_hvp:
                            rback += rd[o] * params[woff[i] + o * fin[i] + j] + d[o] * vv[woff[i] + o * fin[i] + j]
                    dt = 1.0 - a_in[j] * a_in[j]
                    d2[j] = back * dt
                    if do_hvp:
                        rd2[j] = rback * dt - back * 2.0 * a_in[j] * ra_in[j]
                for j in range(fin[i]):
                    d[j] = d2[j]
                    if do_hvp:
                        rd[j] = rd2[j]

    loss = loss / n
    if not do_grad:
        return loss, None, None
    grad_arr /= n
    if not do_hvp:
        return loss, (grad_arr if want_grad else None), None
    hvp_arr /= n
    return loss, (grad_arr if want_grad else None), hvp_arr
