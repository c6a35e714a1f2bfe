import numpy as np
import pytest

from mrrf import fusion as F
from mrrf.autodiff import (CONTRACTIONS, PRIMITIVES, Parameter, Tape, backward,
                           corrupt_adjoint, finite_diff_grad, grad_check, rel_error,
                           zero_grads)
from mrrf.errors import NumericError, ShapeError, UnsupportedOperationError


def _build(kind, rng):
    """Parameters and a forward closure exercising one primitive."""
    if kind == "matvec":
        ps = [Parameter("w", rng.normal(size=(3, 4))), Parameter("x", rng.normal(size=(2, 4)))]
        return ps, lambda t: t.record("matvec", ps[0], ps[1])
    if kind == "kmode_product":
        ps = [Parameter("t", rng.normal(size=(2, 3, 4))), Parameter("m", rng.normal(size=(5, 3)))]
        return ps, lambda t: t.record("kmode_product", ps[0], ps[1], k=1)
    if kind == "outer_product":
        ps = [Parameter(f"v{i}", rng.normal(size=(2, n))) for i, n in enumerate((2, 3, 2))]
        return ps, lambda t: t.record("outer_product", *ps)
    if kind in ("tanh", "sigmoid"):
        ps = [Parameter("x", rng.normal(size=(3, 4)))]
        return ps, lambda t: t.record(kind, ps[0])
    if kind == "relu":
        # keep away from the kink so central differences are exact
        x = rng.normal(size=(3, 4))
        x = np.where(np.abs(x) < 0.1, 0.5, x)
        ps = [Parameter("x", x)]
        return ps, lambda t: t.record("relu", ps[0])
    if kind == "concatenate":
        ps = [Parameter("a", rng.normal(size=(2, 3))), Parameter("b", rng.normal(size=(2, 2)))]
        return ps, lambda t: t.record("concatenate", *ps)
    if kind == "pad_one":
        ps = [Parameter("x", rng.normal(size=(2, 3)))]
        return ps, lambda t: t.record("pad_one", ps[0])
    if kind in ("add", "hadamard"):
        ps = [Parameter("a", rng.normal(size=(2, 3))), Parameter("b", rng.normal(size=(3,)))]
        return ps, lambda t: t.record(kind, ps[0], ps[1])
    if kind == "flatten":
        ps = [Parameter("t", rng.normal(size=(2, 3, 4)))]
        return ps, lambda t: t.record("flatten", ps[0], batch_dims=1)
    raise AssertionError(kind)


@pytest.mark.parametrize("kind", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", range(10))
def test_primitive_adjoint_matches_finite_differences(kind, seed):
    rng = np.random.default_rng(seed)
    params, fwd = _build(kind, rng)
    tape = Tape()
    out = fwd(tape)
    c = rng.uniform(-1, 1, size=out.value.shape)
    zero_grads(params)
    tape.backward(out, c)
    for p in params:
        num = finite_diff_grad(lambda: np.sum(c * fwd(Tape()).value), p, 1e-5)
        assert rel_error(p.grad, num).max() < 1e-4, p.name


def test_record_add_zero_is_identity():
    tape = Tape()
    x = tape.constant(np.array([1.0, -2.0]))
    before = len(tape)
    y = tape.record("add", x, 0)
    assert len(tape) == before + 1
    np.testing.assert_array_equal(y.value, x.value)


def test_unsupported_primitive():
    with pytest.raises(UnsupportedOperationError):
        Tape().record("softmax", np.ones(2))


def test_seed_shape_mismatch():
    p = Parameter("w", np.ones(3))
    tape = Tape()
    out = tape.record("tanh", p)
    with pytest.raises(ShapeError):
        tape.backward(out, np.ones(4))


def test_zero_seed_leaves_grads():
    p = Parameter("w", np.array([0.3, -0.2]))
    p.grad = np.array([1.0, 2.0])
    tape = Tape()
    out = tape.record("tanh", p)
    backward(tape, out, np.zeros(2))
    np.testing.assert_array_equal(p.grad, [1.0, 2.0])


def test_scalar_chain_linear():
    x = np.array([2.0, -1.0, 0.5])
    w = Parameter("w", np.array([[0.1, 0.2, 0.3]]))
    tape = Tape()
    y = tape.record("matvec", w, x)
    tape.backward(y, np.ones(1))
    np.testing.assert_array_equal(w.grad, x[None, :])


def test_backward_is_additive(rng):
    params, fwd = _build("outer_product", rng)
    tape = Tape()
    out = fwd(tape)
    s1 = rng.normal(size=out.value.shape)
    s2 = rng.normal(size=out.value.shape)
    zero_grads(params)
    tape.backward(out, s1)
    tape.backward(out, s2)
    twice = [p.grad.copy() for p in params]
    zero_grads(params)
    tape.backward(out, s1 + s2)
    for a, p in zip(twice, params):
        np.testing.assert_allclose(a, p.grad, atol=1e-12)


def test_kmode_matrix_gradient_matricized_formula(rng):
    t = rng.normal(size=(2, 3, 4))
    m = Parameter("m", rng.normal(size=(5, 3)))
    tape = Tape()
    out = tape.record("kmode_product", t, m, k=1)
    g = rng.normal(size=out.value.shape)
    tape.backward(out, g)
    from mrrf.tensor import unfold
    expected = unfold(g, 1) @ unfold(t, 1).T
    np.testing.assert_allclose(m.grad, expected, atol=1e-12)


def test_mrrf_forward_records_m_plus_two_contractions(rng):
    layer = F.MRRFLayer.init((3, 4, 5), (2, 2, 3), 2, rng)
    tape = Tape()
    nodes = [tape.constant(rng.normal(size=n)) for n in (3, 4, 5)]
    layer.record(tape, nodes)
    assert tape.count(CONTRACTIONS) == 3 + 2


def test_replay_is_bitwise(rng):
    params, fwd = _build("kmode_product", rng)
    tape = Tape()
    fwd(tape)
    tape.record("tanh", tape.records[-1].output)
    recorded = [r.output.value for r in tape.records]
    for a, b in zip(tape.replay(), recorded):
        assert np.array_equal(a, b)


def test_finite_diff_square():
    p = Parameter("x", np.array(3.0))
    assert abs(finite_diff_grad(lambda: np.sum(p.value ** 2), p, 1e-5) - 6.0) < 1e-8


def test_finite_diff_constant():
    p = Parameter("x", np.array([1.0, 2.0]))
    assert np.all(np.abs(finite_diff_grad(lambda: 4.0, p, 1e-5)) < 1e-10)


def test_finite_diff_non_finite():
    p = Parameter("x", np.array([1.0]))
    with pytest.raises(NumericError):
        finite_diff_grad(lambda: np.inf, p)


class _Linear:
    def __init__(self, rng):
        self.w = Parameter("w", rng.normal(size=(3, 4)))
        self.b = Parameter("b", rng.normal(size=3))

    def parameters(self):
        return [self.w, self.b]

    def forward_tape(self, tape, x):
        return tape.record("add", tape.record("matvec", self.w, x), self.b)


def test_grad_check_linear_tight(rng):
    rep = grad_check(_Linear(rng), rng.normal(size=(5, 4)), tol=1e-6)
    assert rep.passed, rep.lines()


def test_grad_check_flags_corrupted_adjoint(rng):
    model = _Linear(rng)
    with corrupt_adjoint("matvec"):
        rep = grad_check(model, rng.normal(size=(5, 4)))
    assert [e.name for e in rep.failures()] == ["w"]
    assert rep.lines()[0].startswith("FAIL w")


def test_grads_keep_shape_after_zero(rng):
    params, fwd = _build("matvec", rng)
    tape = Tape()
    out = fwd(tape)
    tape.backward(out, np.ones(out.value.shape))
    zero_grads(params)
    for p in params:
        assert p.grad.shape == p.value.shape and not p.grad.any()
