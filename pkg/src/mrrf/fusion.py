"""Fusion layers: concat (CF), full tensor (TF), low-rank CP (LMF) and
modality-ranked Tucker (MRRF).

Every layer maps ``M`` padded modality vectors (each starting with the
constant 1) to an ``h``-vector. Inputs may be 1-D vectors or row-batched
``(B, d_m + 1)`` matrices. The dense weight of the tensor layers is ordered
``(output, modality 1, ..., modality M)``.
"""
from __future__ import annotations

import math
import warnings

import numpy as np

from . import kernels
from . import tensor as T
from .autodiff import Parameter
from .errors import InvalidArgumentError, ShapeError

FUSION_KINDS = ("cf", "tf", "lmf", "mrrf")


def glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _batched(inputs):
    xs = [T.as_tensor(x) for x in inputs]
    single = xs[0].ndim == 1
    if any((x.ndim == 1) != single for x in xs):
        raise ShapeError("inputs must be all vectors or all row-batched matrices")
    if single:
        xs = [x[None, :] for x in xs]
    elif len({x.shape[0] for x in xs}) != 1:
        raise ShapeError(f"batch sizes differ: {[x.shape for x in xs]}")
    return xs, single


def _check_widths(xs, widths, what):
    if len(xs) != len(widths):
        raise ShapeError(f"{what}: expected {len(widths)} modalities, got {len(xs)}")
    for m, (x, w) in enumerate(zip(xs, widths)):
        if x.shape[-1] != w:
            raise ShapeError(f"{what}: modality {m} has width {x.shape[-1]}, expected {w}")


def _finish(out, single):
    return out[0] if single else out


class ConcatFusion:
    kind = "cf"

    def __init__(self, weight, padded_dims=None):
        self.weight = Parameter("fusion.weight", weight)
        self.padded_dims = tuple(padded_dims) if padded_dims is not None else None

    @classmethod
    def init(cls, padded_dims, h, rng):
        n = sum(padded_dims)
        return cls(glorot(rng, (h, n), n, h), padded_dims)

    @property
    def h(self):
        return self.weight.shape[0]

    def parameters(self):
        return [self.weight]

    def forward(self, inputs):
        return cf_forward(self, inputs)

    def record(self, tape, nodes):
        cat = tape.record("concatenate", *nodes)
        return tape.record("matvec", tape.param(self.weight), cat)


class TensorFusion:
    kind = "tf"

    def __init__(self, weight):
        weight = T.as_tensor(weight)
        if weight.ndim < 2:
            raise ShapeError(f"tensor fusion weight needs order >= 2, got {weight.shape}")
        self.weight = Parameter("fusion.weight", weight)

    @classmethod
    def init(cls, padded_dims, h, rng):
        n = math.prod(padded_dims)
        return cls(glorot(rng, (h,) + tuple(padded_dims), n, h))

    @property
    def padded_dims(self):
        return self.weight.shape[1:]

    @property
    def h(self):
        return self.weight.shape[0]

    def parameters(self):
        return [self.weight]

    def forward(self, inputs):
        return tf_forward(self, inputs)

    def record(self, tape, nodes):
        d = tape.record("outer_product", *nodes)
        flat = tape.record("flatten", d, batch_dims=d.value.ndim - len(nodes))
        return tape.record("matvec", tape.param(self.weight), flat)


class LMFLayer:
    """CP-factored tensor layer with one shared rank; the combination
    weights of the rank-1 terms live in ``output_factor``."""

    kind = "lmf"

    def __init__(self, factors, output_factor):
        factors = [T.as_tensor(f) for f in factors]
        output_factor = T.as_tensor(output_factor)
        ranks = {f.shape[0] for f in factors} | {output_factor.shape[0]}
        if len(ranks) != 1:
            raise ShapeError(f"all LMF factors must share one rank, got {sorted(ranks)}")
        self.factors = [Parameter(f"fusion.factor{m}", f) for m, f in enumerate(factors)]
        self.output_factor = Parameter("fusion.output_factor", output_factor)

    @classmethod
    def init(cls, padded_dims, rank, h, rng):
        factors = [glorot(rng, (rank, n), n, rank) for n in padded_dims]
        return cls(factors, glorot(rng, (rank, h), rank, h))

    @property
    def rank(self):
        return self.output_factor.shape[0]

    @property
    def padded_dims(self):
        return tuple(f.shape[1] for f in self.factors)

    @property
    def h(self):
        return self.output_factor.shape[1]

    def parameters(self):
        return self.factors + [self.output_factor]

    def forward(self, inputs):
        return lmf_forward(self, inputs)

    def record(self, tape, nodes):
        prod = None
        for f, x in zip(self.factors, nodes):
            u = tape.record("matvec", tape.param(f), x)
            prod = u if prod is None else tape.record("hadamard", prod, u)
        return tape.record("matvec", tape.param(self.output_factor), prod, transpose=True)


def clamp_ranks(ranks, padded_dims):
    """Clip each requested rank to its padded modality size (with a warning)."""
    if len(ranks) != len(padded_dims):
        raise InvalidArgumentError(f"{len(ranks)} ranks for {len(padded_dims)} modalities")
    out = []
    for m, (r, n) in enumerate(zip(ranks, padded_dims)):
        r = int(r)
        if r < 1:
            raise InvalidArgumentError(f"rank of modality {m} must be >= 1, got {r}")
        if r > n:
            warnings.warn(f"rank {r} of modality {m} exceeds padded size {n}; clamped to {n}",
                          stacklevel=3)
            r = n
        out.append(r)
    return tuple(out)


class MRRFLayer:
    """Tucker-factored tensor layer with a separate rank per modality.

    ``factors[m]`` is ``(d_m + 1, r_m)``; ``core`` is ``(r_1, ..., r_M, h)``.
    """

    kind = "mrrf"

    def __init__(self, factors, core):
        factors = [T.as_tensor(f) for f in factors]
        core = T.as_tensor(core)
        if core.ndim != len(factors) + 1:
            raise ShapeError(f"core {core.shape} does not match {len(factors)} factors")
        for m, f in enumerate(factors):
            if f.ndim != 2 or f.shape[1] != core.shape[m]:
                raise ShapeError(f"factor {m} {f.shape} does not match core {core.shape}")
            if f.shape[1] > f.shape[0]:
                raise InvalidArgumentError(
                    f"rank {f.shape[1]} of modality {m} exceeds padded size {f.shape[0]}")
        self.factors = [Parameter(f"fusion.factor{m}", f) for m, f in enumerate(factors)]
        self.core = Parameter("fusion.core", core)

    @classmethod
    def init(cls, padded_dims, ranks, h, rng):
        ranks = clamp_ranks(ranks, padded_dims)
        factors = [glorot(rng, (n, r), n, r) for n, r in zip(padded_dims, ranks)]
        core = glorot(rng, ranks + (h,), math.prod(ranks), h)
        return cls(factors, core)

    @property
    def ranks(self):
        return self.core.shape[:-1]

    @property
    def padded_dims(self):
        return tuple(f.shape[0] for f in self.factors)

    @property
    def h(self):
        return self.core.shape[-1]

    def parameters(self):
        return self.factors + [self.core]

    def forward(self, inputs):
        return mrrf_forward(self, inputs)

    def record(self, tape, nodes):
        zs = [tape.record("kmode_product", x, tape.param(f), k=-1, transpose=True)
              for f, x in zip(self.factors, nodes)]
        z = tape.record("outer_product", *zs)
        flat = tape.record("flatten", z, batch_dims=z.value.ndim - len(zs))
        return tape.record("matvec", tape.param(self.core), flat, transpose=True)


def cf_forward(layer, inputs):
    xs, single = _batched(inputs)
    w = layer.weight.value
    cat = np.concatenate(xs, axis=1)
    if cat.shape[1] != w.shape[1]:
        raise ShapeError(f"cf: concatenated width {cat.shape[1]} != weight columns {w.shape[1]}")
    return _finish(cat @ w.T, single)


def tf_forward(layer, inputs):
    xs, single = _batched(inputs)
    w = layer.weight.value
    _check_widths(xs, w.shape[1:], "tf")
    d = kernels.outer_rows(xs)
    return _finish(d @ w.reshape(w.shape[0], -1).T, single)


def lmf_forward(layer, inputs):
    xs, single = _batched(inputs)
    _check_widths(xs, layer.padded_dims, "lmf")
    prod = np.ones((xs[0].shape[0], layer.rank))
    for f, x in zip(layer.factors, xs):
        prod = prod * (x @ f.value.T)
    return _finish(prod @ layer.output_factor.value, single)


def mrrf_forward(layer, inputs):
    """Factored evaluation: project each modality to its rank, fuse the small
    projections, contract with the core. The dense weight is never formed."""
    xs, single = _batched(inputs)
    _check_widths(xs, layer.padded_dims, "mrrf")
    zs = [x @ f.value for f, x in zip(layer.factors, xs)]
    z = kernels.outer_rows(zs)
    core = layer.core.value
    return _finish(z @ core.reshape(-1, core.shape[-1]), single)


def reconstruct_dense(layer: MRRFLayer):
    """Dense weight ``(h, d_1 + 1, ..., d_M + 1)`` equivalent to ``layer``."""
    w = np.moveaxis(layer.core.value, -1, 0)
    for m, f in enumerate(layer.factors):
        w = T.kmode_product(w, f.value, m + 1)
    return w


def as_superdiagonal_mrrf(lmf: LMFLayer) -> MRRFLayer:
    """Embed a CP layer as a Tucker layer with a superdiagonal core.

    A mode whose padded size is below the CP rank cannot carry an ``n x r``
    factor; its factor is folded into the core (``core x_m W_m``) and
    replaced by the identity, which keeps the forward function exact.
    """
    r = lmf.rank
    m = len(lmf.factors)
    core = np.zeros((r,) * m + (lmf.h,))
    for j in range(r):
        core[(j,) * m] = lmf.output_factor.value[j]
    factors = []
    for k, f in enumerate(lmf.factors):
        w = f.value.T
        if w.shape[1] > w.shape[0]:
            core = T.kmode_product(core, w, k)
            w = np.eye(w.shape[0])
        factors.append(w)
    return MRRFLayer(factors, core)


def param_count(layer):
    """Trainable scalar count from the closed form for each layer kind."""
    if isinstance(layer, ConcatFusion):
        return layer.h * layer.weight.shape[1]
    if isinstance(layer, TensorFusion):
        return layer.h * math.prod(layer.padded_dims)
    if isinstance(layer, LMFLayer):
        return sum(layer.rank * n for n in layer.padded_dims) + layer.rank * layer.h
    if isinstance(layer, MRRFLayer):
        return mrrf_param_count(layer.padded_dims, layer.ranks, layer.h)
    raise InvalidArgumentError(f"unknown layer type {type(layer).__name__}")


def mrrf_param_count(padded_dims, ranks, h):
    return sum(n * r for n, r in zip(padded_dims, ranks)) + math.prod(ranks) * h


def tf_param_count(padded_dims, h):
    return h * math.prod(padded_dims)


def make_fusion(kind, padded_dims, h, rng, ranks=None, rank=None):
    """Build a freshly initialized fusion layer of ``kind``."""
    padded_dims = tuple(int(n) for n in padded_dims)
    if kind == "cf":
        return ConcatFusion.init(padded_dims, h, rng)
    if kind == "tf":
        return TensorFusion.init(padded_dims, h, rng)
    if kind == "lmf":
        if rank is None:
            raise InvalidArgumentError("lmf fusion needs a rank")
        return LMFLayer.init(padded_dims, int(rank), h, rng)
    if kind == "mrrf":
        ranks = padded_dims if ranks is None else tuple(ranks)
        return MRRFLayer.init(padded_dims, ranks, h, rng)
    raise InvalidArgumentError(f"unknown fusion kind {kind!r}; expected one of {FUSION_KINDS}")
