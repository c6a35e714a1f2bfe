"""Fast built-in property checks run by ``mrrf selftest``."""
import numpy as np

from . import fusion as F
from . import kernels
from . import tensor as T
from .autodiff import grad_check
from .data import SyntheticSpec, generate_synthetic
from .model import ModelConfig, build_model


def _random_mrrf(rng, m=3):
    padded = tuple(int(x) for x in rng.integers(2, 6, size=m))
    ranks = tuple(int(rng.integers(1, n + 1)) for n in padded)
    return F.MRRFLayer.init(padded, ranks, int(rng.integers(1, 5)), rng)


def check_fold_roundtrip(rng):
    t = rng.normal(size=(3, 4, 5))
    return all(np.array_equal(T.fold(T.unfold(t, k), k, t.shape), t) for k in range(3))


def check_kmode_matricized(rng):
    t = rng.normal(size=(3, 4, 5))
    m = rng.normal(size=(2, 4))
    ref = T.fold(m @ T.unfold(t, 1), 1, (3, 2, 5))
    return np.max(np.abs(T.kmode_product(t, m, 1) - ref)) < 1e-12


def check_factored_dense(rng):
    for _ in range(20):
        layer = _random_mrrf(rng)
        xs = [T.pad_one(rng.normal(size=n - 1)) for n in layer.padded_dims]
        dense = F.TensorFusion(F.reconstruct_dense(layer))
        if np.max(np.abs(F.mrrf_forward(layer, xs) - F.tf_forward(dense, xs))) >= 1e-9:
            return False
    return True


def check_lmf_embedding(rng):
    lmf = F.LMFLayer.init((3, 4, 5), 3, 2, rng)
    mr = F.as_superdiagonal_mrrf(lmf)
    xs = [rng.normal(size=(10, n)) for n in (3, 4, 5)]
    return np.max(np.abs(F.lmf_forward(lmf, xs) - F.mrrf_forward(mr, xs))) < 1e-12


def check_kernel_backends(rng):
    backends = kernels.available_backends()
    vs = [rng.normal(size=(4, n)) for n in (3, 2, 4)]
    g = rng.normal(size=(4, 24))
    ref = backends["python"]
    for mod in backends.values():
        if np.max(np.abs(mod.outer_rows(vs) - ref.outer_rows(vs))) > 1e-14:
            return False
        for a, b in zip(mod.outer_rows_adjoint(g, vs), ref.outer_rows_adjoint(g, vs)):
            if np.max(np.abs(a - b)) > 1e-12:
                return False
    return True


def check_gradients(rng):
    spec = SyntheticSpec(widths=(3, 3, 3), latent_dim=2)
    ds = generate_synthetic(spec, 4, 0)
    for fusion in F.FUSION_KINDS:
        arch = ModelConfig(fusion=fusion, embed=(2,), hidden=3, h=2, lmf_rank=2)
        model = build_model(ds.manifest, arch, 1)
        if not grad_check(model, model.batch(ds.samples[:2])).passed:
            return False
    return True


CHECKS = [
    ("fold/unfold roundtrip", check_fold_roundtrip),
    ("k-mode product equals matricized product", check_kmode_matricized),
    ("factored forward equals dense forward", check_factored_dense),
    ("cp layer embeds as superdiagonal tucker layer", check_lmf_embedding),
    ("kernel backends agree", check_kernel_backends),
    ("tape gradients match finite differences", check_gradients),
]


def run(out=print):
    rng = np.random.default_rng(12345)
    ok = True
    for name, fn in CHECKS:
        passed = bool(fn(rng))
        ok &= passed
        out(f"{'PASS' if passed else 'FAIL'} {name}")
    return ok
