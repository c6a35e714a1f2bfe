"""End-to-end runs: train/evaluate from a config, checkpoints with enough
metadata to rebuild the model, and the per-modality compression sweep."""
from __future__ import annotations

import csv
import math
import statistics
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .config import ExperimentConfig
from .data import DatasetManifest, read_checkpoint, save_dataset, split, write_checkpoint
from .errors import DataError, InvalidArgumentError, MRRFError
from .fusion import MRRFLayer, clamp_ranks, param_count
from .model import ModelConfig, build_model
from .optim import predict_dataset, train

SPLIT_NAMES = ("train", "validation", "test")


def _join(v):
    return ",".join(str(x) for x in v)


def checkpoint_meta(cfg: ExperimentConfig, manifest: DatasetManifest, model, data_path):
    arch = cfg.model
    meta = {
        "modalities": _join(manifest.modality_names),
        "kinds": _join(manifest.kinds),
        "widths": _join(manifest.widths),
        "label_kind": manifest.label_kind,
        "num_classes": manifest.num_classes,
        "fusion": arch.fusion,
        "h": arch.h,
        "embed": _join(e.out_width for e in model.encoders),
        "hidden": arch.hidden,
        "lmf_rank": arch.lmf_rank,
        "encoders": _join(e.kind for e in model.encoders),
        "split": _join(repr(r) for r in cfg.split_ratios),
        "split_seed": cfg.split_seed,
    }
    if isinstance(model.fusion, MRRFLayer):
        meta["ranks"] = _join(model.fusion.ranks)
    if data_path is not None:
        meta["data_path"] = str(data_path)
    return meta


def model_from_checkpoint(path):
    """Rebuild a model from a checkpoint; returns ``(model, meta)``."""
    meta, params = read_checkpoint(path)
    try:
        man = DatasetManifest(meta["modalities"].split(","), meta["kinds"].split(","),
                              [int(w) for w in meta["widths"].split(",")], meta["label_kind"],
                              int(meta["num_classes"]))
        ranks = tuple(int(r) for r in meta["ranks"].split(",")) if "ranks" in meta else None
        arch = ModelConfig(fusion=meta["fusion"], h=int(meta["h"]),
                           embed=tuple(int(e) for e in meta["embed"].split(",")),
                           hidden=int(meta["hidden"]), ranks=ranks,
                           lmf_rank=int(meta["lmf_rank"]),
                           encoders=tuple(meta["encoders"].split(",")))
    except KeyError as exc:
        raise DataError(f"{path}: checkpoint metadata lacks {exc}") from exc
    model = build_model(man, arch, 0)
    model.load_state_dict(params)
    return model, meta


def run_train(cfg: ExperimentConfig, out_dir):
    """Train per ``cfg``; writes ``checkpoint.txt`` and ``train_log.csv``."""
    from .optim import write_log

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = cfg.dataset()
    data_path = cfg.data_path
    if data_path is None:
        data_path = save_dataset(dataset, out / "data")
    parts = split(dataset, cfg.split_ratios, cfg.split_seed)
    model = build_model(dataset.manifest, cfg.model, cfg.train.seed)
    result = train(model, parts[0], parts[1], cfg.train)
    write_log(out / "train_log.csv", result.log)
    meta = checkpoint_meta(cfg, dataset.manifest, model, Path(data_path).resolve())
    meta["best_epoch"] = result.best_epoch
    meta["best_val_metric"] = repr(result.best_metric)
    write_checkpoint(out / "checkpoint.txt", model.state_dict(), meta)
    return result


def evaluate(model, dataset):
    return metrics.report(predict_dataset(model, dataset), dataset.labels(), model.task)


def run_eval(checkpoint, dataset, split_name="test"):
    """Metric report of a checkpointed model on one split of ``dataset``."""
    model, meta = model_from_checkpoint(checkpoint)
    if split_name == "all":
        return evaluate(model, dataset)
    if split_name not in SPLIT_NAMES:
        raise InvalidArgumentError(f"split must be one of {SPLIT_NAMES + ('all',)}")
    ratios = tuple(float(r) for r in meta["split"].split(","))
    parts = split(dataset, ratios, int(meta["split_seed"]))
    return evaluate(model, parts[SPLIT_NAMES.index(split_name)])


SWEEP_COLUMNS = ("modality", "modality_index", "rank", "embedding_size", "seed", "status",
                 "param_count", "best_epoch", "val_metric", "test_mae", "test_corr",
                 "test_acc2", "test_acc7", "test_accuracy", "error")


@dataclass
class SweepRow:
    modality: str
    modality_index: int
    rank: int
    seed: int
    status: str
    param_count: int
    best_epoch: int | None = None
    val_metric: float | None = None
    test_mae: float | None = None
    test_corr: float | None = None
    test_acc2: float | None = None
    test_acc7: float | None = None
    test_accuracy: float | None = None
    error: str = ""

    @property
    def embedding_size(self):
        return self.rank + 1


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)

    def sorted(self):
        return SweepResult(sorted(self.rows, key=lambda r: (r.modality_index, r.rank, r.seed)))

    def summary(self):
        """Per (modality, rank): mean and sample std of test MAE over ok seeds."""
        groups = {}
        for r in self.sorted().rows:
            groups.setdefault((r.modality_index, r.modality, r.rank), []).append(r)
        out = []
        for (idx, name, rank), rows in groups.items():
            vals = [r.test_mae for r in rows if r.status == "ok"]
            mean = statistics.fmean(vals) if vals else None
            std = statistics.stdev(vals) if len(vals) > 1 else None
            out.append((name, idx, rank, rank + 1, len(vals), mean, std))
        return out

    def mean_mae(self, modality_index, rank):
        vals = [r.test_mae for r in self.rows
                if r.modality_index == modality_index and r.rank == rank and r.status == "ok"]
        return statistics.fmean(vals) if vals else math.nan


def sweep_modality(cfg: ExperimentConfig, k, ranks, seeds, dataset=None):
    """Compress modality ``k`` alone: for each rank and seed, train an MRRF model
    from scratch with every other modality at full padded rank and evaluate
    it on the test split."""
    if cfg.model.fusion != "mrrf":
        raise InvalidArgumentError("sweep requires mrrf fusion")
    if any(int(r) < 1 for r in ranks):
        raise InvalidArgumentError("sweep ranks must be >= 1")
    dataset = cfg.dataset() if dataset is None else dataset
    man = dataset.manifest
    if not 0 <= k < man.n_modalities:
        raise InvalidArgumentError(f"modality index {k} out of range")
    parts = split(dataset, cfg.split_ratios, cfg.split_seed)
    probe = build_model(man, replace(cfg.model, ranks=None), 0)
    padded = probe.fusion.padded_dims
    result = SweepResult()
    for rank in ranks:
        full = list(padded)
        full[k] = int(rank)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            eff = clamp_ranks(full, padded)
        arch = replace(cfg.model, ranks=eff)
        for seed in seeds:
            tcfg = replace(cfg.train, seed=int(seed))
            model = build_model(man, arch, int(seed))
            row = SweepRow(man.modality_names[k], k, eff[k], int(seed), "ok",
                           param_count(model.fusion))
            try:
                res = train(model, parts[0], parts[1], tcfg)
            except MRRFError as exc:
                row.status, row.error = "failed", str(exc)
                result.rows.append(row)
                continue
            rep = evaluate(model, parts[2])
            row.best_epoch, row.val_metric = res.best_epoch, res.best_metric
            row.test_mae, row.test_corr = rep.mae, rep.pearson_corr
            row.test_acc2, row.test_acc7, row.test_accuracy = rep.acc2, rep.acc7, rep.accuracy
            result.rows.append(row)
    return result.sorted()


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_sweep(path, result: SweepResult):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in result.sorted().rows:
            w.writerow([_cell(getattr(r, c)) for c in SWEEP_COLUMNS])


def write_sweep_summary(path, result: SweepResult):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["modality", "modality_index", "rank", "embedding_size", "n_ok",
                    "test_mae_mean", "test_mae_std"])
        for row in result.summary():
            w.writerow([_cell(v) for v in row])


def read_sweep(path):
    conv = {"modality_index": int, "rank": int, "seed": int, "param_count": int,
            "best_epoch": int}
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            kw = {}
            for c in SWEEP_COLUMNS:
                if c == "embedding_size":
                    continue
                v = rec[c]
                if c in ("modality", "status", "error"):
                    kw[c] = v
                elif v == "":
                    kw[c] = None
                else:
                    kw[c] = conv.get(c, float)(v)
            rows.append(SweepRow(**kw))
    return SweepResult(rows)


def embedding_sizes(rows):
    return np.array([r.embedding_size for r in rows])
