import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrrf import metrics as M
from mrrf.errors import InvalidArgumentError, ShapeError


def test_mae():
    assert M.mae([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert M.mae([1, 2], [0, 0]) == 1.5
    with pytest.raises(ShapeError):
        M.mae([1, 2], [1])


def test_pearson():
    x = np.array([0.3, -1.0, 2.0, 0.5])
    assert M.pearson_corr(x, x) == pytest.approx(1.0, abs=1e-15)
    assert M.pearson_corr(-x, x) == pytest.approx(-1.0, abs=1e-15)
    assert M.pearson_corr(np.ones(4), x) is None
    with pytest.raises(InvalidArgumentError):
        M.pearson_corr([1.0], [2.0])


def test_acc2():
    t = np.array([1.0, -2.0, 0.5, -0.1])
    assert M.acc2(t, t) == 1.0
    assert M.acc2(-t, t) == 0.0
    # zero prediction counts positive; zero truth is excluded
    assert M.acc2([0.0, 0.0, 5.0], [1.0, -1.0, 0.0]) == 0.5
    assert M.acc2([1.0], [0.0]) is None


def test_acc7():
    t = np.array([-3.0, -1.0, 0.0, 2.0, 3.0])
    assert M.acc7(t, t) == 1.0
    assert M.acc7([3.7], [3.0]) == 1.0
    assert M.acc7([-0.5, 0.5, 1.49], [-1.0, 1.0, 1.0]) == 1.0


def test_f1():
    assert M.f1([1, 0, 1], [1, 0, 1], 1) == 1.0
    assert M.f1([0, 0, 0], [1, 0, 1], 1) == 0.0
    # tp=2, fp=1, fn=1
    assert M.f1([1, 1, 1, 0], [1, 1, 0, 1], 1) == pytest.approx(2 / 3, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 100), st.floats(-100, 100))
def test_pearson_affine_invariant(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=20), rng.normal(size=20)
    r = M.pearson_corr(x, y)
    assert abs(M.pearson_corr(a * x + b, y) - r) < 1e-12
    assert abs(M.pearson_corr(x, a * y + b) - r) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_acc7_bin_preserving_jitter(seed):
    rng = np.random.default_rng(seed)
    pred = rng.uniform(-4, 4, size=30)
    truth = rng.integers(-3, 4, size=30).astype(float)
    bins = np.clip(M.round_half_away(pred), -3, 3)
    # move each prediction monotonically toward its bin centre
    jittered = pred + rng.uniform(0, 1, size=30) * (bins - pred) * 0.9
    assert np.array_equal(np.clip(M.round_half_away(jittered), -3, 3), bins)
    assert M.acc7(jittered, truth) == M.acc7(pred, truth)


def test_report_fractions_in_range(rng):
    rep = M.report(rng.normal(size=(50, 1)), rng.normal(size=50))
    for v in (rep.acc2, rep.acc7, *rep.f1_per_class.values()):
        assert 0.0 <= v <= 1.0
    assert -1.0 <= rep.pearson_corr <= 1.0


def test_classification_report(rng):
    logits = rng.normal(size=(40, 3))
    truth = rng.integers(0, 3, size=40)
    rep = M.report(logits, truth, "classification")
    assert rep.accuracy == np.mean(logits.argmax(1) == truth)
    assert set(rep.f1_per_class) == {"0", "1", "2"}


def test_report_csv_roundtrip(tmp_path, rng):
    rep = M.report(rng.normal(size=(20, 1)), rng.normal(size=20))
    M.write_report(tmp_path / "m.csv", rep, "test")
    back = M.read_report(tmp_path / "m.csv")
    assert back == dict(rep.rows())


def test_undefined_written_as_flag(tmp_path):
    rep = M.report(np.ones((5, 1)), np.arange(5.0))
    M.write_report(tmp_path / "m.csv", rep)
    assert "test,pearson_corr,undefined" in (tmp_path / "m.csv").read_text()
    assert M.read_report(tmp_path / "m.csv")["pearson_corr"] is None
