import numpy as np
import pytest

from mrrf import fusion as F
from mrrf import tensor as T
from mrrf.autodiff import _sigmoid, grad_check
from mrrf.data import DatasetManifest, MultimodalSample, SyntheticSpec, generate_synthetic
from mrrf.errors import DataError, InvalidArgumentError, ShapeError
from mrrf.model import (GATES, LSTMEncoder, MeanPoolEncoder, MLPEncoder, Model, ModelConfig,
                        SeqBatch, build_model, lstm_forward, mlp_forward, model_forward)

SMALL = SyntheticSpec(widths=(3, 3, 3), latent_dim=2)


@pytest.fixture(scope="module")
def small_ds():
    return generate_synthetic(SMALL, 6, 0)


def _lstm(rng, in_w, hidden, scale=0.5):
    wx = {g: scale * rng.normal(size=(hidden, in_w)) for g in GATES}
    wh = {g: scale * rng.normal(size=(hidden, hidden)) for g in GATES}
    b = {g: scale * rng.normal(size=hidden) for g in GATES}
    return LSTMEncoder(wx, wh, b)


def test_mlp_zero_map():
    enc = MLPEncoder(np.zeros((4, 3)), np.zeros(4), np.zeros((2, 4)), np.zeros(2))
    assert not mlp_forward(enc, np.array([1.0, -2.0, 3.0])).any()


def test_mlp_linear_regime():
    enc = MLPEncoder(np.eye(3), np.zeros(3), np.eye(3), np.zeros(3))
    x = np.array([0.5, 0.0, 2.0])
    np.testing.assert_array_equal(mlp_forward(enc, x), x)


def test_mlp_shape_mismatch():
    enc = MLPEncoder(np.eye(3), np.zeros(3), np.eye(3), np.zeros(3))
    with pytest.raises(ShapeError):
        mlp_forward(enc, np.ones(4))


def test_lstm_zero_weights():
    z = {g: np.zeros((2, 3)) for g in GATES}
    enc = LSTMEncoder(z, {g: np.zeros((2, 2)) for g in GATES}, {g: np.zeros(2) for g in GATES})
    np.testing.assert_array_equal(lstm_forward(enc, np.ones((4, 3))), np.zeros(2))


def test_lstm_single_step_by_hand():
    wx = {"i": np.array([[0.5]]), "f": np.array([[-0.3]]), "o": np.array([[0.2]]),
          "g": np.array([[0.7]])}
    wh = {g: np.array([[0.9]]) for g in GATES}
    b = {"i": np.array([0.1]), "f": np.array([0.0]), "o": np.array([-0.1]), "g": np.array([0.2])}
    enc = LSTMEncoder(wx, wh, b)
    x = 2.0
    i = 1 / (1 + np.exp(-(0.5 * x + 0.1)))
    o = 1 / (1 + np.exp(-(0.2 * x - 0.1)))
    g = np.tanh(0.7 * x + 0.2)
    c = i * g  # forget gate multiplies c_0 = 0
    expected = o * np.tanh(c)
    np.testing.assert_allclose(lstm_forward(enc, [[x]]), [expected], rtol=1e-14)


def test_lstm_empty_sequence(rng):
    with pytest.raises(InvalidArgumentError):
        lstm_forward(_lstm(rng, 2, 2), np.zeros((0, 2)))


def test_lstm_state_bounds(rng):
    enc = _lstm(rng, 3, 4, scale=1.0)
    h = np.zeros(4)
    c = np.zeros(4)
    for t, x in enumerate(rng.normal(size=(20, 3)), 1):
        pre = {g: enc.wx[g].value @ x + enc.wh[g].value @ h + enc.b[g].value for g in GATES}
        gi, gf, go = _sigmoid(pre["i"]), _sigmoid(pre["f"]), _sigmoid(pre["o"])
        cand = np.tanh(pre["g"])
        assert np.all((gi > 0) & (gi < 1)) and np.all(np.abs(cand) < 1)
        c = gf * c + gi * cand
        h = go * np.tanh(c)
        assert np.all(np.abs(c) <= t)
        assert np.all(np.abs(h) < 1)


def test_lstm_tape_matches_reference(rng):
    enc = _lstm(rng, 2, 3)
    seqs = [rng.normal(size=(n, 2)) for n in (2, 5, 3)]
    data = np.zeros((3, 5, 2))
    for i, s in enumerate(seqs):
        data[i, :len(s)] = s
    from mrrf.autodiff import Tape
    out = enc.record(Tape(), SeqBatch(data, np.array([2, 5, 3]))).value
    for i, s in enumerate(seqs):
        np.testing.assert_allclose(out[i], lstm_forward(enc, s), atol=1e-14)


def test_lstm_length_five_gradients(rng):
    man = DatasetManifest(("seq",), ("sequence",), (2,))
    sample = MultimodalSample("a", "g", {"seq": rng.normal(size=(5, 2))}, 0.3)
    model = build_model(man, ModelConfig(fusion="tf", h=2, embed=(3,), sequence_encoder="lstm"), 4)
    rep = grad_check(model, model.batch([sample]))
    assert rep.passed, rep.lines()


def test_meanpool_permutation_invariant(rng, small_ds):
    model = build_model(small_ds.manifest, ModelConfig(embed=(2,), hidden=3, h=3), 0)
    s = small_ds.samples[0]
    seq = s.modalities["language"]
    flipped = MultimodalSample(s.id, s.group_id, dict(s.modalities, language=seq[::-1].copy()),
                               s.label)
    np.testing.assert_allclose(model_forward(model, flipped), model_forward(model, s),
                               atol=1e-14)


@pytest.mark.parametrize("fusion", F.FUSION_KINDS)
def test_constant_path(fusion, small_ds):
    model = build_model(small_ds.manifest, ModelConfig(fusion=fusion, embed=(2,), hidden=3, h=2,
                                                       lmf_rank=2), 1)
    for p in model.fusion.parameters():
        if p.name in ("fusion.weight", "fusion.core", "fusion.output_factor"):
            p.value[:] = 0
    model.head_b.value[:] = 0.75
    for s in small_ds.samples:
        np.testing.assert_array_equal(model_forward(model, s), [0.75])


def test_cf_model_hand_composition(small_ds):
    model = build_model(small_ds.manifest, ModelConfig(fusion="cf", embed=(2,), hidden=4, h=3), 2)
    s = small_ds.samples[1]
    a, v, lang = (e for e in model.encoders)
    xa = mlp_forward(a, s.modalities["acoustic"])
    xv = mlp_forward(v, s.modalities["visual"])
    xl = lang.weight.value @ s.modalities["language"].mean(axis=0) + lang.bias.value
    fused = model.fusion.weight.value @ np.concatenate([T.pad_one(xa), T.pad_one(xv),
                                                        T.pad_one(xl)])
    expected = model.head_w.value @ fused + model.head_b.value
    np.testing.assert_allclose(model_forward(model, s), expected, atol=1e-13)


def test_missing_modality(small_ds):
    model = build_model(small_ds.manifest, ModelConfig(embed=(2,), hidden=3, h=2), 0)
    s = small_ds.samples[0]
    broken = MultimodalSample(s.id, s.group_id,
                              {k: v for k, v in s.modalities.items() if k != "visual"}, s.label)
    with pytest.raises(DataError, match="visual"):
        model_forward(model, broken)


def test_full_rank_mrrf_equals_tf_from_dense(small_ds):
    arch = ModelConfig(fusion="mrrf", embed=(2,), hidden=3, h=3)
    mr = build_model(small_ds.manifest, arch, 5)
    tf = build_model(small_ds.manifest, ModelConfig(fusion="tf", embed=(2,), hidden=3, h=3), 5)
    state = {k: v for k, v in mr.state_dict().items() if not k.startswith("fusion.")}
    state["fusion.weight"] = F.reconstruct_dense(mr.fusion)
    tf.load_state_dict(state)
    batch = mr.batch(small_ds.samples)
    np.testing.assert_allclose(mr.predict(batch), tf.predict(batch), atol=1e-9)


def test_fusion_arity_must_match(rng):
    enc = MeanPoolEncoder.init(2, 2, rng)
    with pytest.raises(InvalidArgumentError):
        Model(("a",), ("sequence",), [enc], F.TensorFusion.init((3, 3), 1, rng),
              np.ones((1, 1)), np.zeros(1))


@pytest.mark.parametrize("encoder", ["meanpool", "lstm"])
@pytest.mark.parametrize("fusion", F.FUSION_KINDS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_end_to_end_gradients(encoder, fusion, seed, small_ds):
    arch = ModelConfig(fusion=fusion, embed=(2,), hidden=3, h=2, lmf_rank=2,
                       sequence_encoder=encoder)
    model = build_model(small_ds.manifest, arch, seed)
    rep = grad_check(model, model.batch(small_ds.samples[:2]), seed=seed)
    assert rep.passed, rep.lines()
