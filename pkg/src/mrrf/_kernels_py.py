"""Pure numpy implementations of the hot fusion kernels.

Both functions work on row-batched operands: ``vecs[m]`` has shape
``(B, n_m)`` and the fused tensor is stored flat as ``(B, n_1 * ... * n_M)``.
"""
import string

import numpy as np


def outer_rows(vecs):
    out = vecs[0]
    batch = out.shape[0]
    for v in vecs[1:]:
        out = (out[:, :, None] * v[:, None, :]).reshape(batch, -1)
    return np.ascontiguousarray(out, dtype=np.float64)


def outer_rows_adjoint(g, vecs):
    batch = g.shape[0]
    dims = tuple(v.shape[1] for v in vecs)
    gt = g.reshape((batch,) + dims)
    letters = string.ascii_letters[: len(vecs)]
    full = "Z" + letters
    grads = []
    for m in range(len(vecs)):
        others = [i for i in range(len(vecs)) if i != m]
        spec = ",".join([full] + ["Z" + letters[i] for i in others])
        spec += "->Z" + letters[m]
        grads.append(np.einsum(spec, gt, *[vecs[i] for i in others]))
    return grads
