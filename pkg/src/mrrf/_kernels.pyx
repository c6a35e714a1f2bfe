# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched outer product and its adjoint.

Same contract as ``mrrf._kernels_py``: ``vecs[m]`` is ``(B, n_m)`` float64,
the fused tensor is ``(B, prod n_m)`` row-major.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.float64_t f64


def outer_rows(list vecs):
    cdef Py_ssize_t nmodes = len(vecs)
    cdef Py_ssize_t batch = vecs[0].shape[0]
    cdef Py_ssize_t b, j, i, m, block, n, total
    cdef f64[:, ::1] out_v
    cdef f64[:, ::1] v
    cdef f64 a

    total = 1
    for m in range(nmodes):
        total *= vecs[m].shape[1]
    out = np.empty((batch, total), dtype=np.float64)
    out_v = out
    v = np.ascontiguousarray(vecs[0], dtype=np.float64)
    block = v.shape[1]
    for b in range(batch):
        for j in range(block):
            out_v[b, j] = v[b, j]
    # expand in place from the back so each entry is read before it is overwritten
    for m in range(1, nmodes):
        v = np.ascontiguousarray(vecs[m], dtype=np.float64)
        n = v.shape[1]
        for b in range(batch):
            for j in range(block - 1, -1, -1):
                a = out_v[b, j]
                for i in range(n):
                    out_v[b, j * n + i] = a * v[b, i]
        block *= n
    return out


def outer_rows_adjoint(g, list vecs):
    """Per-mode gradients in one right-to-left sweep.

    ``S`` holds ``g`` contracted with the trailing modes and shrinks by one
    mode per step; ``P[m]`` is the outer product of the leading modes. The
    gradient of mode ``m`` is ``sum_p P[m][p] * S[p, :]``.
    """
    cdef Py_ssize_t nmodes = len(vecs)
    cdef Py_ssize_t batch = g.shape[0]
    cdef Py_ssize_t b, p, i, m, n, lead
    cdef f64[:, ::1] s_v
    cdef f64[:, ::1] nxt_v
    cdef f64[:, ::1] p_v
    cdef f64[:, ::1] v
    cdef f64[:, ::1] gr
    cdef f64 acc, pw, sv

    vs = [np.ascontiguousarray(x, dtype=np.float64) for x in vecs]
    grads = [np.zeros_like(x) for x in vs]
    prefixes = [np.ones((batch, 1))]
    for m in range(1, nmodes):
        prefixes.append(outer_rows(vs[:m]))
    s_v = np.ascontiguousarray(g, dtype=np.float64)
    for m in range(nmodes - 1, -1, -1):
        v = vs[m]
        gr = grads[m]
        p_v = prefixes[m]
        n = v.shape[1]
        lead = p_v.shape[1]
        nxt = np.empty((batch, lead), dtype=np.float64)
        nxt_v = nxt
        for b in range(batch):
            for p in range(lead):
                pw = p_v[b, p]
                acc = 0.0
                for i in range(n):
                    sv = s_v[b, p * n + i]
                    acc = acc + sv * v[b, i]
                    gr[b, i] += pw * sv
                nxt_v[b, p] = acc
        s_v = nxt
    return grads
