"""Modality encoders and the end-to-end fusion model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fusion as F
from .autodiff import Parameter, Tape, _sigmoid
from .data import DatasetManifest, philox
from .errors import DataError, InvalidArgumentError, ShapeError

ENCODER_KINDS = ("mlp", "lstm", "meanpool")


@dataclass
class SeqBatch:
    data: np.ndarray  # (B, T_max, w), zero beyond each length
    lengths: np.ndarray  # (B,)

    def mean(self):
        return self.data.sum(axis=1) / self.lengths[:, None]


@dataclass
class Batch:
    inputs: list  # one (B, w) array or SeqBatch per modality
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def collate(samples, names, kinds):
    """Stack samples into a batch, modality order ``names``."""
    inputs = []
    for name, kind in zip(names, kinds):
        vals = []
        for s in samples:
            if name not in s.modalities:
                raise DataError(f"sample {s.id!r} is missing modality {name!r}")
            vals.append(np.asarray(s.modalities[name], dtype=np.float64))
        if kind == "vector":
            inputs.append(np.stack([v.reshape(-1) for v in vals]))
        else:
            lengths = np.array([len(v) for v in vals])
            if lengths.min() < 1:
                raise InvalidArgumentError(f"modality {name!r} has an empty sequence")
            width = vals[0].shape[1]
            data = np.zeros((len(vals), lengths.max(), width))
            for i, v in enumerate(vals):
                data[i, :len(v)] = v
            inputs.append(SeqBatch(data, lengths))
    labels = np.array([s.label for s in samples], dtype=np.float64)
    return Batch(inputs, labels)


def _glorot(rng, out_w, in_w):
    return F.glorot(rng, (out_w, in_w), in_w, out_w)


class MLPEncoder:
    """Two-layer feed-forward encoder with a ReLU hidden layer."""

    kind = "mlp"

    def __init__(self, w1, b1, w2, b2, prefix="enc"):
        self.w1 = Parameter(f"{prefix}.w1", w1)
        self.b1 = Parameter(f"{prefix}.b1", b1)
        self.w2 = Parameter(f"{prefix}.w2", w2)
        self.b2 = Parameter(f"{prefix}.b2", b2)
        if self.w1.shape[0] != self.b1.shape[0] or self.w2.shape != (self.b2.shape[0], self.w1.shape[0]):
            raise ShapeError("mlp encoder: inconsistent layer shapes")

    @classmethod
    def init(cls, in_w, hidden, out_w, rng, prefix="enc"):
        return cls(_glorot(rng, hidden, in_w), np.zeros(hidden),
                   _glorot(rng, out_w, hidden), np.zeros(out_w), prefix)

    @property
    def out_width(self):
        return self.w2.shape[0]

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def record(self, tape, x):
        if isinstance(x, SeqBatch):
            raise DataError("mlp encoder expects a vector modality")
        a = tape.record("add", tape.record("matvec", tape.param(self.w1), x), tape.param(self.b1))
        hid = tape.record("relu", a)
        return tape.record("add", tape.record("matvec", tape.param(self.w2), hid), tape.param(self.b2))


def mlp_forward(enc: MLPEncoder, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != enc.w1.shape[1]:
        raise ShapeError(f"mlp: input width {x.shape[-1]} != {enc.w1.shape[1]}")
    hid = np.maximum(x @ enc.w1.value.T + enc.b1.value, 0.0)
    return hid @ enc.w2.value.T + enc.b2.value


GATES = ("i", "f", "o", "g")


class LSTMEncoder:
    """Single-layer LSTM; the embedding is the final hidden state."""

    kind = "lstm"

    def __init__(self, wx, wh, b, prefix="enc"):
        # wx, wh, b: dicts keyed by gate name
        self.wx = {g: Parameter(f"{prefix}.wx_{g}", wx[g]) for g in GATES}
        self.wh = {g: Parameter(f"{prefix}.wh_{g}", wh[g]) for g in GATES}
        self.b = {g: Parameter(f"{prefix}.b_{g}", b[g]) for g in GATES}
        hidden = self.wh["i"].shape[0]
        for g in GATES:
            if self.wh[g].shape != (hidden, hidden) or self.wx[g].shape[0] != hidden \
                    or self.b[g].shape != (hidden,):
                raise ShapeError(f"lstm encoder: inconsistent shapes for gate {g}")

    @classmethod
    def init(cls, in_w, hidden, rng, prefix="enc"):
        wx = {g: _glorot(rng, hidden, in_w) for g in GATES}
        wh = {g: _glorot(rng, hidden, hidden) for g in GATES}
        b = {g: np.zeros(hidden) for g in GATES}
        return cls(wx, wh, b, prefix)

    @property
    def out_width(self):
        return self.wh["i"].shape[0]

    def parameters(self):
        return [d[g] for g in GATES for d in (self.wx, self.wh, self.b)]

    def record(self, tape, seq):
        if not isinstance(seq, SeqBatch):
            raise DataError("lstm encoder expects a sequence modality")
        batch, steps, _ = seq.data.shape
        hsz = self.out_width
        h = tape.constant(np.zeros((batch, hsz)))
        c = tape.constant(np.zeros((batch, hsz)))
        ragged = seq.lengths.min() != seq.lengths.max()
        for t in range(steps):
            x = seq.data[:, t, :]
            pre = {}
            for g in GATES:
                s = tape.record("add", tape.record("matvec", tape.param(self.wx[g]), x),
                                tape.record("matvec", tape.param(self.wh[g]), h))
                pre[g] = tape.record("add", s, tape.param(self.b[g]))
            i = tape.record("sigmoid", pre["i"])
            f = tape.record("sigmoid", pre["f"])
            o = tape.record("sigmoid", pre["o"])
            g = tape.record("tanh", pre["g"])
            c_new = tape.record("add", tape.record("hadamard", f, c), tape.record("hadamard", i, g))
            h_new = tape.record("hadamard", o, tape.record("tanh", c_new))
            if ragged and (seq.lengths <= t).any():
                keep = (seq.lengths > t).astype(np.float64)[:, None]
                c = tape.record("add", tape.record("hadamard", keep, c_new),
                                tape.record("hadamard", 1.0 - keep, c))
                h = tape.record("add", tape.record("hadamard", keep, h_new),
                                tape.record("hadamard", 1.0 - keep, h))
            else:
                c, h = c_new, h_new
        return h


def lstm_forward(enc: LSTMEncoder, seq):
    """Final hidden state for one sequence ``(steps, w)``."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or len(seq) == 0:
        raise InvalidArgumentError("lstm needs a non-empty (steps, width) sequence")
    hsz = enc.out_width
    h = np.zeros(hsz)
    c = np.zeros(hsz)
    for x in seq:
        pre = {g: enc.wx[g].value @ x + enc.wh[g].value @ h + enc.b[g].value for g in GATES}
        i, f, o = _sigmoid(pre["i"]), _sigmoid(pre["f"]), _sigmoid(pre["o"])
        c = f * c + i * np.tanh(pre["g"])
        h = o * np.tanh(c)
    return h


class MeanPoolEncoder:
    """Linear projection of the step-average of a sequence."""

    kind = "meanpool"

    def __init__(self, weight, bias, prefix="enc"):
        self.weight = Parameter(f"{prefix}.weight", weight)
        self.bias = Parameter(f"{prefix}.bias", bias)

    @classmethod
    def init(cls, in_w, out_w, rng, prefix="enc"):
        return cls(_glorot(rng, out_w, in_w), np.zeros(out_w), prefix)

    @property
    def out_width(self):
        return self.weight.shape[0]

    def parameters(self):
        return [self.weight, self.bias]

    def record(self, tape, seq):
        if not isinstance(seq, SeqBatch):
            raise DataError("meanpool encoder expects a sequence modality")
        proj = tape.record("matvec", tape.param(self.weight), seq.mean())
        return tape.record("add", proj, tape.param(self.bias))


@dataclass
class ModelConfig:
    fusion: str = "mrrf"
    h: int = 8
    embed: tuple = (4, 4, 4)  # per-modality embedding width before padding
    hidden: int = 16  # mlp hidden width
    ranks: tuple = None  # mrrf ranks; None = full padded size
    lmf_rank: int = 4
    sequence_encoder: str = "meanpool"
    encoders: tuple = None  # explicit per-modality encoder kinds

    def encoder_kinds(self, kinds):
        if self.encoders is not None:
            if len(self.encoders) != len(kinds):
                raise InvalidArgumentError("one encoder kind per modality required")
            return tuple(self.encoders)
        return tuple("mlp" if k == "vector" else self.sequence_encoder for k in kinds)


class Model:
    """Encoders, one fusion layer and a linear head."""

    def __init__(self, names, kinds, encoders, fusion, head_w, head_b, task="regression"):
        if len(encoders) != len(names):
            raise InvalidArgumentError("one encoder per modality required")
        dims = fusion.padded_dims
        if dims is not None and len(dims) != len(encoders):
            raise InvalidArgumentError("fusion arity differs from encoder count")
        self.names = tuple(names)
        self.kinds = tuple(kinds)
        self.encoders = list(encoders)
        self.fusion = fusion
        self.head_w = Parameter("head.weight", head_w)
        self.head_b = Parameter("head.bias", head_b)
        self.task = task

    @property
    def output_dim(self):
        return self.head_w.shape[0]

    @property
    def has_lstm(self):
        return any(isinstance(e, LSTMEncoder) for e in self.encoders)

    def parameters(self):
        out = []
        for e in self.encoders:
            out.extend(e.parameters())
        out.extend(self.fusion.parameters())
        out.extend([self.head_w, self.head_b])
        return out

    def state_dict(self):
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state_dict(self, state):
        params = {p.name: p for p in self.parameters()}
        missing = set(params) - set(state)
        if missing:
            raise DataError(f"state is missing parameters {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"{name}: stored shape {value.shape} != model shape {p.shape}")
            p.value = value.copy()

    def batch(self, samples):
        return collate(samples, self.names, self.kinds)

    def forward_tape(self, tape, batch):
        embs = [tape.record("pad_one", enc.record(tape, x))
                for enc, x in zip(self.encoders, batch.inputs)]
        fused = self.fusion.record(tape, embs)
        out = tape.record("matvec", tape.param(self.head_w), fused)
        return tape.record("add", out, tape.param(self.head_b))

    def predict(self, batch):
        return self.forward_tape(Tape(), batch).value


def model_forward(model: Model, sample):
    """Prediction vector for one sample."""
    return model.predict(model.batch([sample]))[0]


def build_encoder(kind, in_w, out_w, hidden, rng, prefix):
    if kind == "mlp":
        return MLPEncoder.init(in_w, hidden, out_w, rng, prefix)
    if kind == "lstm":
        return LSTMEncoder.init(in_w, out_w, rng, prefix)
    if kind == "meanpool":
        return MeanPoolEncoder.init(in_w, out_w, rng, prefix)
    raise InvalidArgumentError(f"unknown encoder kind {kind!r}; expected one of {ENCODER_KINDS}")


def build_model(manifest: DatasetManifest, arch: ModelConfig, seed=0) -> Model:
    """Freshly initialized model for ``manifest`` following ``arch``."""
    rng = philox(seed, 0x1417)
    kinds = arch.encoder_kinds(manifest.kinds)
    embed = arch.embed
    if isinstance(embed, int):
        embed = (embed,)
    if len(embed) == 1:
        embed = tuple(embed) * manifest.n_modalities
    if len(embed) != manifest.n_modalities:
        raise InvalidArgumentError(f"{len(embed)} embedding sizes for {manifest.n_modalities} modalities")
    encoders = []
    for name, mkind, ekind, w, e in zip(manifest.modality_names, manifest.kinds, kinds,
                                        manifest.widths, embed):
        if (ekind == "mlp") != (mkind == "vector"):
            raise InvalidArgumentError(f"encoder {ekind!r} cannot read {mkind} modality {name!r}")
        encoders.append(build_encoder(ekind, w, int(e), arch.hidden, rng, f"enc.{name}"))
    padded = tuple(int(e) + 1 for e in embed)
    fusion = F.make_fusion(arch.fusion, padded, arch.h, rng, ranks=arch.ranks, rank=arch.lmf_rank)
    out_dim = 1 if manifest.label_kind == "regression" else manifest.num_classes
    head_w = _glorot(rng, out_dim, arch.h)
    return Model(manifest.modality_names, manifest.kinds, encoders, fusion,
                 head_w, np.zeros(out_dim), manifest.label_kind)
