"""Multimodal datasets: synthetic generation, CSV storage, group-aware splits,
and the text checkpoint format.

Dataset directory layout::

    manifest.txt       key = value lines (see MANIFEST_KEYS)
    labels.csv         id,group_id,label
    <modality>.csv     vector:   id,f0,...,f{w-1}
                       sequence: id,step,f0,...,f{w-1}

All files are UTF-8 with '\\n' line endings. Floats are written with
``repr`` so a save/load roundtrip is bit-exact.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidArgumentError

FORMAT_VERSION = 1
MANIFEST_KEYS = ("format_version", "modalities", "kinds", "widths", "label_kind",
                 "num_classes", "n_samples")
KINDS = ("vector", "sequence")
LABEL_KINDS = ("regression", "classification")


@dataclass
class MultimodalSample:
    id: str
    group_id: str
    modalities: dict  # name -> (w,) vector or (steps, w) sequence
    label: float


@dataclass
class DatasetManifest:
    modality_names: tuple
    kinds: tuple
    widths: tuple
    label_kind: str = "regression"
    num_classes: int = 0
    n_samples: int = 0
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.modality_names = tuple(self.modality_names)
        self.kinds = tuple(self.kinds)
        self.widths = tuple(int(w) for w in self.widths)
        if not (len(self.modality_names) == len(self.kinds) == len(self.widths)):
            raise DataError("manifest: modalities, kinds and widths differ in length")
        if any(w < 1 for w in self.widths):
            raise DataError(f"manifest: widths must be >= 1, got {self.widths}")
        for k in self.kinds:
            if k not in KINDS:
                raise DataError(f"manifest: unknown modality kind {k!r}")
        if self.label_kind not in LABEL_KINDS:
            raise DataError(f"manifest: unknown label kind {self.label_kind!r}")
        if self.format_version != FORMAT_VERSION:
            raise DataError(f"manifest: unsupported format version {self.format_version}")

    @property
    def n_modalities(self):
        return len(self.modality_names)


@dataclass
class Dataset:
    manifest: DatasetManifest
    samples: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def subset(self, indices):
        samples = [self.samples[i] for i in indices]
        man = DatasetManifest(self.manifest.modality_names, self.manifest.kinds,
                              self.manifest.widths, self.manifest.label_kind,
                              self.manifest.num_classes, len(samples))
        return Dataset(man, samples)

    def labels(self):
        return np.array([s.label for s in self.samples], dtype=np.float64)


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings.

    ``redundancy[m]`` is the share of modality ``m``'s latent signal taken from
    the common latent (1.0: fully shared, 0.0: modality-unique).
    ``interaction`` scales pairwise bilinear cross-modal terms in the label.
    """

    latent_dim: int = 3
    widths: tuple = (8, 8, 8)
    kinds: tuple = ("vector", "vector", "sequence")
    names: tuple = ("acoustic", "visual", "language")
    redundancy: tuple = (0.5, 0.5, 0.5)
    interaction: float = 0.0
    noise: float = 0.1
    task: str = "regression"
    num_classes: int = 2
    seq_len: tuple = (3, 6)
    group_size: int = 10
    loading_seed: int = 0

    def validate(self):
        m = len(self.widths)
        if not (len(self.kinds) == len(self.names) == len(self.redundancy) == m):
            raise InvalidArgumentError("synthetic spec: per-modality fields differ in length")
        if any(not 0.0 <= r <= 1.0 for r in self.redundancy):
            raise InvalidArgumentError(f"redundancy must lie in [0, 1], got {self.redundancy}")
        if self.noise < 0:
            raise InvalidArgumentError("noise must be >= 0")
        if self.latent_dim < 1 or self.group_size < 1:
            raise InvalidArgumentError("latent_dim and group_size must be >= 1")
        if self.task not in LABEL_KINDS:
            raise InvalidArgumentError(f"unknown task {self.task!r}")
        if self.task == "classification" and self.num_classes < 2:
            raise InvalidArgumentError("classification needs num_classes >= 2")
        lo, hi = self.seq_len
        if not 1 <= lo <= hi:
            raise InvalidArgumentError(f"bad seq_len range {self.seq_len}")


def philox(*key):
    """Counter-based generator keyed by up to two non-negative integers."""
    words = [int(k) & 0xFFFFFFFFFFFFFFFF for k in key] + [0] * (2 - len(key))
    return np.random.Generator(np.random.Philox(key=np.array(words, dtype=np.uint64)))


_LOADING_STREAM = 1 << 63


def _loadings(spec):
    rng = philox(spec.loading_seed, _LOADING_STREAM)
    L = spec.latent_dim
    A = [rng.normal(0.0, 1.0 / math.sqrt(L), size=(w, L)) for w in spec.widths]
    a = []
    for _ in spec.widths:
        v = rng.normal(size=L)
        a.append(v / np.linalg.norm(v))
    M = len(spec.widths)
    B = {(i, j): rng.normal(size=(L, L)) / L for i in range(M) for j in range(i + 1, M)}
    return A, a, B


def generate_synthetic(spec: SyntheticSpec, n: int, seed: int) -> Dataset:
    """Draw ``n`` samples; a pure function of ``(spec, n, seed)``.

    Per sample: common latent ``z`` and unique latents ``u_m`` (standard
    normal); modality signal ``s_m = rho_m z + (1 - rho_m) u_m``; features
    ``A_m s_m`` plus Gaussian noise (per step for sequences). The score is
    ``sum_m a_m . s_m + gamma * sum_{m<m'} s_m^T B_mm' s_m'`` plus noise.
    Every sample draws from its own stream keyed by ``(seed, index)``.
    """
    spec.validate()
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    A, a, B = _loadings(spec)
    L = spec.latent_dim
    rho = spec.redundancy
    M = len(spec.widths)
    lo, hi = spec.seq_len
    samples = []
    clean = np.empty(n)
    noisy = np.empty(n)
    for i in range(n):
        rng = philox(seed, i)
        z = rng.normal(size=L)
        u = [rng.normal(size=L) for _ in range(M)]
        s = [rho[m] * z + (1.0 - rho[m]) * u[m] for m in range(M)]
        mods = {}
        for m in range(M):
            base = A[m] @ s[m]
            if spec.kinds[m] == "vector":
                mods[spec.names[m]] = base + spec.noise * rng.normal(size=spec.widths[m])
            else:
                steps = int(rng.integers(lo, hi + 1))
                mods[spec.names[m]] = base + spec.noise * rng.normal(size=(steps, spec.widths[m]))
        score = sum(a[m] @ s[m] for m in range(M))
        score += spec.interaction * sum(s[p] @ Bpq @ s[q] for (p, q), Bpq in B.items())
        clean[i] = score
        noisy[i] = score + spec.noise * rng.normal()
        samples.append(MultimodalSample(f"s{i:06d}", f"g{i // spec.group_size:05d}", mods, 0.0))
    if spec.task == "regression":
        for smp, y in zip(samples, noisy):
            smp.label = float(y)
        num_classes = 0
    else:
        num_classes = spec.num_classes
        edges = np.quantile(clean, np.arange(1, num_classes) / num_classes)
        for smp, y in zip(samples, noisy):
            smp.label = int(np.searchsorted(edges, y, side="right"))
    man = DatasetManifest(spec.names, spec.kinds, spec.widths, spec.task, num_classes, n)
    return Dataset(man, samples)


def _fmt(x):
    return repr(float(x))


def save_dataset(dataset: Dataset, directory):
    """Write ``dataset`` under ``directory`` (created if missing)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    man = dataset.manifest
    lines = [
        f"format_version = {man.format_version}",
        f"modalities = {','.join(man.modality_names)}",
        f"kinds = {','.join(man.kinds)}",
        f"widths = {','.join(str(w) for w in man.widths)}",
        f"label_kind = {man.label_kind}",
        f"num_classes = {man.num_classes}",
        f"n_samples = {len(dataset.samples)}",
    ]
    (d / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with open(d / "labels.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "group_id", "label"])
        for s in dataset.samples:
            label = _fmt(s.label) if man.label_kind == "regression" else str(int(s.label))
            w.writerow([s.id, s.group_id, label])
    for name, kind, width in zip(man.modality_names, man.kinds, man.widths):
        with open(d / f"{name}.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            cols = [f"f{j}" for j in range(width)]
            if kind == "vector":
                w.writerow(["id"] + cols)
                for s in dataset.samples:
                    w.writerow([s.id] + [_fmt(v) for v in s.modalities[name]])
            else:
                w.writerow(["id", "step"] + cols)
                for s in dataset.samples:
                    for t, row in enumerate(s.modalities[name]):
                        w.writerow([s.id, t] + [_fmt(v) for v in row])
    return d


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: manifest not found")
    fields = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in MANIFEST_KEYS:
            raise DataError(f"{path}:{lineno}: unknown manifest key {key!r}")
        fields[key] = value
    missing = [k for k in MANIFEST_KEYS if k not in fields]
    if missing:
        raise DataError(f"{path}: missing manifest keys {missing}")
    try:
        version = int(fields["format_version"])
        if version != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported format version {version}")
        return DatasetManifest(
            fields["modalities"].split(","),
            fields["kinds"].split(","),
            [int(w) for w in fields["widths"].split(",")],
            fields["label_kind"],
            int(fields["num_classes"]),
            int(fields["n_samples"]),
            version,
        )
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _floats(path, lineno, cells):
    try:
        return [float(c) for c in cells]
    except ValueError as exc:
        raise DataError(f"{path}:{lineno}: {exc}") from exc


def load_dataset(manifest_path) -> Dataset:
    """Load a dataset given its manifest path (or the directory holding it)."""
    p = Path(manifest_path)
    if p.is_dir():
        p = p / "manifest.txt"
    man = read_manifest(p)
    d = p.parent
    label_path = d / "labels.csv"
    if not label_path.exists():
        raise DataError(f"{label_path}: file not found")
    order, groups, labels = [], {}, {}
    with open(label_path, encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header != ["id", "group_id", "label"]:
            raise DataError(f"{label_path}:1: bad header {header}")
        for lineno, row in enumerate(rows, 2):
            if len(row) != 3:
                raise DataError(f"{label_path}:{lineno}: expected 3 columns, got {len(row)}")
            sid, gid, lab = row
            if sid in labels:
                raise DataError(f"{label_path}:{lineno}: duplicate id {sid!r}")
            order.append(sid)
            groups[sid] = gid
            if man.label_kind == "regression":
                labels[sid] = _floats(label_path, lineno, [lab])[0]
            else:
                try:
                    labels[sid] = int(lab)
                except ValueError as exc:
                    raise DataError(f"{label_path}:{lineno}: {exc}") from exc
    features = {}
    for name, kind, width in zip(man.modality_names, man.kinds, man.widths):
        fpath = d / f"{name}.csv"
        if not fpath.exists():
            raise DataError(f"{fpath}: file not found")
        lead = 1 if kind == "vector" else 2
        per = {}
        with open(fpath, encoding="utf-8", newline="") as fh:
            rows = csv.reader(fh)
            header = next(rows, None)
            if header is None or len(header) != lead + width:
                raise DataError(f"{fpath}:1: header declares {0 if header is None else len(header) - lead}"
                                f" feature columns, manifest width is {width}")
            for lineno, row in enumerate(rows, 2):
                if len(row) != lead + width:
                    raise DataError(f"{fpath}:{lineno}: row has {len(row) - lead} feature columns,"
                                    f" manifest width is {width}")
                sid = row[0]
                if sid not in labels:
                    raise DataError(f"{fpath}:{lineno}: unknown sample id {sid!r}")
                vals = _floats(fpath, lineno, row[lead:])
                if kind == "vector":
                    if sid in per:
                        raise DataError(f"{fpath}:{lineno}: duplicate id {sid!r}")
                    per[sid] = np.array(vals)
                else:
                    steps = per.setdefault(sid, [])
                    try:
                        step = int(row[1])
                    except ValueError as exc:
                        raise DataError(f"{fpath}:{lineno}: {exc}") from exc
                    if step != len(steps):
                        raise DataError(f"{fpath}:{lineno}: expected step {len(steps)}, got {step}")
                    steps.append(vals)
        for sid in order:
            if sid not in per:
                raise DataError(f"{fpath}: sample {sid!r} missing")
        if kind == "sequence":
            per = {k: np.array(v).reshape(len(v), width) for k, v in per.items()}
        features[name] = per
    samples = [MultimodalSample(sid, groups[sid],
                                {name: features[name][sid] for name in man.modality_names},
                                labels[sid])
               for sid in order]
    if man.n_samples != len(samples):
        raise DataError(f"{p}: n_samples = {man.n_samples} but labels.csv has {len(samples)} rows")
    return Dataset(man, samples)


def split(dataset: Dataset, ratios=(0.6, 0.2, 0.2), seed=0):
    """Partition by ``group_id`` so no group spans two parts.

    Group counts follow ``ratios`` by largest remainder, at least one group
    per part.
    """
    ratios = [float(r) for r in ratios]
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"ratios must be positive and sum to 1, got {ratios}")
    groups = list(dict.fromkeys(s.group_id for s in dataset.samples))
    k = len(ratios)
    if len(groups) < k:
        raise DataError(f"{len(groups)} groups cannot fill {k} splits")
    perm = philox(seed, 0x5B17).permutation(len(groups))
    groups = [groups[i] for i in perm]
    exact = [r * len(groups) for r in ratios]
    counts = [max(1, int(math.floor(e))) for e in exact]
    while sum(counts) < len(groups):
        rem = [e - c for e, c in zip(exact, counts)]
        counts[int(np.argmax(rem))] += 1
    while sum(counts) > len(groups):
        over = [c - e if c > 1 else -np.inf for e, c in zip(exact, counts)]
        counts[int(np.argmax(over))] -= 1
    assign = {}
    start = 0
    for part, c in enumerate(counts):
        for g in groups[start:start + c]:
            assign[g] = part
        start += c
    idx = [[] for _ in range(k)]
    for i, s in enumerate(dataset.samples):
        idx[assign[s.group_id]].append(i)
    return tuple(dataset.subset(ix) for ix in idx)


CHECKPOINT_MAGIC = "mrrf-checkpoint 1"


def write_checkpoint(path, params, meta=None):
    """Write named tensors as text blocks: ``param <name> <shape>`` then values."""
    lines = [CHECKPOINT_MAGIC]
    for key, value in (meta or {}).items():
        if any(c.isspace() for c in str(key)) or "\n" in str(value):
            raise InvalidArgumentError(f"bad checkpoint meta entry {key!r}")
        lines.append(f"meta {key} {value}")
    for name, value in params.items():
        arr = np.asarray(value, dtype=np.float64)
        shape = ",".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"param {name} {shape}")
        lines.append(" ".join(_fmt(v) for v in arr.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_checkpoint(path):
    """Return ``(meta, params)`` from a checkpoint file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: checkpoint not found")
    lines = path.read_text(encoding="utf-8").split("\n")
    if lines[0] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}:1: not a version-1 checkpoint")
    meta, params = {}, {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if not line:
            i += 1
            continue
        parts = line.split(" ", 2)
        if parts[0] == "meta" and len(parts) == 3:
            meta[parts[1]] = parts[2]
        elif parts[0] == "param" and len(parts) == 3:
            shape = () if parts[2] == "scalar" else tuple(int(s) for s in parts[2].split(","))
            if i + 1 >= len(lines):
                raise DataError(f"{path}:{i + 1}: missing values for {parts[1]}")
            vals = _floats(path, i + 2, lines[i + 1].split())
            if len(vals) != math.prod(shape):
                raise DataError(f"{path}:{i + 2}: {parts[1]} expects {math.prod(shape)} values,"
                                f" got {len(vals)}")
            params[parts[1]] = np.array(vals).reshape(shape)
            i += 1
        else:
            raise DataError(f"{path}:{i + 1}: unrecognized line")
        i += 1
    return meta, params
