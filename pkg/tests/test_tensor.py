import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrrf import tensor as T
from mrrf.errors import InvalidArgumentError, ShapeError


def test_outer_product_ones():
    np.testing.assert_array_equal(T.outer_product([np.ones(2), np.ones(3)]), np.ones((2, 3)))


def test_outer_product_small():
    np.testing.assert_array_equal(T.outer_product([[1, 2], [3, 4]]), [[3, 4], [6, 8]])


def test_outer_product_matches_triple_loop(rng):
    v1, v2, v3 = rng.normal(size=3), rng.normal(size=4), rng.normal(size=2)
    out = T.outer_product([v1, v2, v3])
    assert out.shape == (3, 4, 2)
    for i, j, k in itertools.product(range(3), range(4), range(2)):
        assert out[i, j, k] == v1[i] * v2[j] * v3[k]


@pytest.mark.parametrize("bad", [[], [np.ones(2), np.array([])]])
def test_outer_product_rejects_empty(bad):
    with pytest.raises(InvalidArgumentError):
        T.outer_product(bad)


def test_kmode_identity(rng):
    t = rng.normal(size=(3, 4, 5))
    for k, n in enumerate(t.shape):
        np.testing.assert_array_equal(T.kmode_product(t, np.eye(n), k), t)


def test_kmode_ones_row_sums(rng):
    t = rng.normal(size=(3, 4, 5))
    out = T.kmode_product(t, np.ones((1, 4)), 1)
    expected = np.zeros((3, 1, 5))
    for i in range(3):
        for k in range(5):
            for j in range(4):
                expected[i, 0, k] += t[i, j, k]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_kmode_shape_rule(rng):
    out = T.kmode_product(rng.normal(size=(5, 4, 3)), rng.normal(size=(2, 4)), 1)
    assert out.shape == (5, 2, 3)


def test_kmode_mismatch_message(rng):
    with pytest.raises(ShapeError, match=r"\(5, 4, 3\).*\(2, 5\)"):
        T.kmode_product(rng.normal(size=(5, 4, 3)), rng.normal(size=(2, 5)), 1)


def test_kmode_mode_out_of_range(rng):
    with pytest.raises(InvalidArgumentError):
        T.kmode_product(rng.normal(size=(2, 2)), np.eye(2), 2)


def test_unfold_matrix_is_identity(rng):
    m = rng.normal(size=(2, 3))
    np.testing.assert_array_equal(T.unfold(m, 0), m)


def test_fold_unfold_roundtrip_every_mode(rng):
    t = rng.normal(size=(3, 4, 5))
    for k in range(3):
        assert np.array_equal(T.fold(T.unfold(t, k), k, t.shape), t)


def test_unfold_column_order_enumerated():
    t = np.arange(8.0).reshape(2, 2, 2)
    # mode 1 rows index j; columns enumerate (i, k) with k fastest
    expected = np.array([[t[i, j, k] for i in range(2) for k in range(2)] for j in range(2)])
    np.testing.assert_array_equal(T.unfold(t, 1), expected)
    np.testing.assert_array_equal(T.unfold(t, 1), [[0, 1, 4, 5], [2, 3, 6, 7]])


def test_unfold_bad_mode():
    with pytest.raises(InvalidArgumentError):
        T.unfold(np.ones((2, 2)), 2)


def test_fold_shape_mismatch():
    with pytest.raises(ShapeError):
        T.fold(np.ones((2, 5)), 0, (2, 2, 2))


def test_flatten():
    np.testing.assert_array_equal(T.flatten([[1, 2], [3, 4]]), [1, 2, 3, 4])
    v = np.array([1.0, 2.0])
    np.testing.assert_array_equal(T.flatten(v), v)
    np.testing.assert_array_equal(T.flatten(T.outer_product([[1, 2], [3, 4]])), [3, 4, 6, 8])


def test_pad_one():
    np.testing.assert_array_equal(T.pad_one([]), [1.0])
    np.testing.assert_array_equal(T.pad_one([5, 6]), [1.0, 5.0, 6.0])
    out = T.outer_product([T.pad_one([])] * 3)
    assert out.shape == (1, 1, 1) and out[0, 0, 0] == 1.0


def test_pad_one_outer_blocks(rng):
    a, b, c = rng.normal(size=2), rng.normal(size=3), rng.normal(size=4)
    d = T.outer_product([T.pad_one(a), T.pad_one(b), T.pad_one(c)])
    assert d[0, 0, 0] == 1.0
    np.testing.assert_array_equal(d[1:, 0, 0], a)
    np.testing.assert_array_equal(d[0, 1:, 0], b)
    np.testing.assert_array_equal(d[0, 0, 1:], c)
    np.testing.assert_allclose(d[1:, 1:, 0], np.outer(a, b))
    np.testing.assert_allclose(d[1:, 0, 1:], np.outer(a, c))
    np.testing.assert_allclose(d[0, 1:, 1:], np.outer(b, c))
    np.testing.assert_allclose(d[1:, 1:, 1:], np.einsum("i,j,k->ijk", a, b, c))


def test_check_shape():
    assert T.check_shape([2, 3]) == (2, 3)
    with pytest.raises(InvalidArgumentError):
        T.check_shape([2, 0])
    with pytest.raises(InvalidArgumentError):
        T.check_shape([2**40, 2**40])


shapes = st.lists(st.integers(1, 4), min_size=1, max_size=4)


@settings(max_examples=60, deadline=None)
@given(shapes, st.integers(1, 4), st.data())
def test_kmode_properties(dims, rows, data):
    rng = np.random.default_rng(len(dims) * 100 + rows)
    t = rng.normal(size=dims)
    k = data.draw(st.integers(0, len(dims) - 1))
    m = rng.normal(size=(rows, dims[k]))
    out = T.kmode_product(t, m, k)
    expected_shape = list(dims)
    expected_shape[k] = rows
    assert list(out.shape) == expected_shape
    ref = T.fold(m @ T.unfold(t, k), k, expected_shape)
    np.testing.assert_allclose(out, ref, atol=1e-12)
    assert np.array_equal(T.fold(T.unfold(t, k), k, dims), t)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=2, max_size=4), st.data())
def test_kmode_commutes_on_distinct_modes(dims, data):
    rng = np.random.default_rng(sum(dims))
    t = rng.normal(size=dims)
    j = data.draw(st.integers(0, len(dims) - 1))
    k = data.draw(st.integers(0, len(dims) - 1).filter(lambda x: x != j))
    mj = rng.normal(size=(3, dims[j]))
    mk = rng.normal(size=(2, dims[k]))
    a = T.kmode_product(T.kmode_product(t, mj, j), mk, k)
    b = T.kmode_product(T.kmode_product(t, mk, k), mj, j)
    np.testing.assert_allclose(a, b, atol=1e-12)
