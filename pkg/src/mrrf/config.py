"""Experiment configuration files.

INI-style ``key = value`` text read with :mod:`configparser`. Sections::

    [data]    path = <dataset dir>   (or the synthetic keys below when absent)
              n, seed, latent_dim, widths, kinds, names, redundancy,
              interaction, noise, task, num_classes, seq_len, group_size,
              loading_seed, split (three ratios), split_seed
    [model]   fusion (cf|tf|lmf|mrrf), h, embed, hidden, ranks (list or "full"),
              lmf_rank, sequence_encoder (meanpool|lstm), encoders (optional list)
    [train]   epochs, batch_size, lr, seed, patience, selection (mae|accuracy),
              clip_norm
    [output]  dir
    [grid]    learning_rates, hidden_sizes, embed_sizes, ranks
              (lists; tuple-valued entries separated by ';')

Lists are comma separated.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import SyntheticSpec, generate_synthetic, load_dataset, split
from .errors import DataError
from .fusion import FUSION_KINDS
from .model import ModelConfig
from .optim import GridSpec, TrainConfig


@dataclass
class ExperimentConfig:
    data_path: str | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    n: int = 2000
    data_seed: int = 0
    split_ratios: tuple = (0.6, 0.2, 0.2)
    split_seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "out"

    def validate(self):
        if self.model.fusion not in FUSION_KINDS:
            raise DataError(f"config: fusion must be one of {FUSION_KINDS}, got {self.model.fusion!r}")
        self.train.validate()
        if self.data_path is None:
            self.synthetic.validate()
        return self

    def dataset(self):
        if self.data_path is not None:
            return load_dataset(self.data_path)
        return generate_synthetic(self.synthetic, self.n, self.data_seed)

    def splits(self, dataset=None):
        dataset = self.dataset() if dataset is None else dataset
        return split(dataset, self.split_ratios, self.split_seed)


def _ints(s):
    return tuple(int(x) for x in s.split(","))


def _floats(s):
    return tuple(float(x) for x in s.split(","))


def _strs(s):
    return tuple(x.strip() for x in s.split(","))


def _ranks(s):
    s = s.strip()
    return None if s in ("", "full") else _ints(s)


_SYNTH = {
    "latent_dim": int, "widths": _ints, "kinds": _strs, "names": _strs,
    "redundancy": _floats, "interaction": float, "noise": float, "task": str,
    "num_classes": int, "seq_len": _ints, "group_size": int, "loading_seed": int,
}
_MODEL = {
    "fusion": str, "h": int, "embed": _ints, "hidden": int, "ranks": _ranks,
    "lmf_rank": int, "sequence_encoder": str, "encoders": _strs,
}
_TRAIN = {
    "epochs": int, "batch_size": int, "lr": float, "seed": int, "patience": int,
    "selection": str, "clip_norm": float,
}


def _section(parser, name, table, path):
    out = {}
    if not parser.has_section(name):
        return out
    for key, raw in parser.items(name):
        if key not in table:
            raise DataError(f"{path}: unknown key {key!r} in [{name}]")
        try:
            out[key] = table[key](raw)
        except ValueError as exc:
            raise DataError(f"{path}: [{name}] {key}: {exc}") from exc
    return out


def parse_config(text, path="<config>"):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise DataError(f"{path}: {exc}") from exc
    known = {"data", "model", "train", "output", "grid"}
    for sec in parser.sections():
        if sec not in known:
            raise DataError(f"{path}: unknown section [{sec}]")
    data_table = dict(_SYNTH, path=str, n=int, seed=int, split=_floats, split_seed=int)
    d = _section(parser, "data", data_table, path)
    cfg = ExperimentConfig()
    base = Path(path).parent if path != "<config>" else Path(".")
    if "path" in d:
        p = Path(d.pop("path"))
        cfg.data_path = str(p if p.is_absolute() else base / p)
    cfg.n = d.pop("n", cfg.n)
    cfg.data_seed = d.pop("seed", cfg.data_seed)
    cfg.split_ratios = d.pop("split", cfg.split_ratios)
    cfg.split_seed = d.pop("split_seed", cfg.split_seed)
    cfg.synthetic = SyntheticSpec(**d)
    cfg.model = ModelConfig(**_section(parser, "model", _MODEL, path))
    cfg.train = TrainConfig(**_section(parser, "train", _TRAIN, path))
    out = _section(parser, "output", {"dir": str}, path)
    cfg.output_dir = out.get("dir", cfg.output_dir)
    return cfg.validate(), parser


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: config not found")
    cfg, _ = parse_config(path.read_text(encoding="utf-8"), path)
    return cfg


def _tuples(raw, conv):
    return [conv(part) for part in raw.split(";") if part.strip()]


def load_grid(path):
    """Experiment config plus its ``[grid]`` section."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: grid file not found")
    cfg, parser = parse_config(path.read_text(encoding="utf-8"), path)
    if not parser.has_section("grid"):
        raise DataError(f"{path}: missing [grid] section")
    table = {
        "learning_rates": lambda s: list(_floats(s)),
        "hidden_sizes": lambda s: list(_ints(s)),
        "embed_sizes": lambda s: _tuples(s, _ints),
        "ranks": lambda s: _tuples(s, _ranks),
    }
    g = _section(parser, "grid", table, path)
    return cfg, GridSpec(**g)


def _fmt(v):
    if v is None:
        return "full"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def dump_config(cfg: ExperimentConfig):
    """Render ``cfg`` in the file format accepted by :func:`parse_config`."""
    lines = ["[data]"]
    if cfg.data_path is not None:
        lines.append(f"path = {cfg.data_path}")
    else:
        lines.append(f"n = {cfg.n}")
        lines.append(f"seed = {cfg.data_seed}")
        for f in fields(SyntheticSpec):
            lines.append(f"{f.name} = {_fmt(getattr(cfg.synthetic, f.name))}")
    lines.append(f"split = {_fmt(cfg.split_ratios)}")
    lines.append(f"split_seed = {cfg.split_seed}")
    lines.append("")
    lines.append("[model]")
    for f in fields(ModelConfig):
        v = getattr(cfg.model, f.name)
        if f.name == "encoders" and v is None:
            continue
        lines.append(f"{f.name} = {_fmt(v)}")
    lines.append("")
    lines.append("[train]")
    for f in fields(TrainConfig):
        lines.append(f"{f.name} = {_fmt(getattr(cfg.train, f.name))}")
    lines.append("")
    lines.append("[output]")
    lines.append(f"dir = {cfg.output_dir}")
    return "\n".join(lines) + "\n"
