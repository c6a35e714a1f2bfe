"""Adam, the training loop with validation-based selection, and grid search."""
from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .autodiff import Tape, zero_grads
from .data import philox
from .errors import InvalidArgumentError, MRRFError, NumericError

log = logging.getLogger(__name__)


class AdamState:
    """Moment estimates keyed by parameter name."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}


def adam_step(state: AdamState, params):
    """One bias-corrected Adam update of every parameter from its ``grad``."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {p.name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p in params:
        m = state.m.get(p.name)
        if m is None or m.shape != p.shape:
            m = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        g = p.grad
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[p.name] = m
        state.v[p.name] = v
        p.value = p.value - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_global_norm(params, max_norm):
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad = p.grad * scale
    return total


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 0.01
    seed: int = 0
    patience: int = 10
    selection: str = "mae"  # "mae" (lower is better) or "accuracy"
    clip_norm: float = 5.0  # global-norm clip, LSTM models only

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 0:
            raise InvalidArgumentError("need epochs >= 1, batch_size >= 1, patience >= 0")
        if self.selection not in ("mae", "accuracy"):
            raise InvalidArgumentError(f"unknown selection metric {self.selection!r}")
        if self.lr <= 0:
            raise InvalidArgumentError("learning rate must be positive")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_metric: float


@dataclass
class TrainResult:
    model: object
    log: list
    best_epoch: int
    best_metric: float


def loss_and_seed(outputs, labels, task):
    """Mean loss over the batch and its gradient w.r.t. ``outputs``."""
    b = len(labels)
    if task == "regression":
        diff = outputs[:, 0] - labels
        seed = np.sign(diff)[:, None] / b
        return float(np.mean(np.abs(diff))), seed
    shifted = outputs - outputs.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    idx = labels.astype(int)
    loss = -float(np.mean(logp[np.arange(b), idx]))
    seed = np.exp(logp)
    seed[np.arange(b), idx] -= 1.0
    return loss, seed / b


def predict_dataset(model, dataset, batch_size=256):
    outs = []
    for start in range(0, len(dataset), batch_size):
        outs.append(model.predict(model.batch(dataset.samples[start:start + batch_size])))
    return np.concatenate(outs, axis=0)


def selection_value(model, dataset, selection):
    out = predict_dataset(model, dataset)
    truth = dataset.labels()
    if selection == "mae":
        if model.task == "regression":
            return metrics.mae(out[:, 0], truth)
        return metrics.mae(out.argmax(axis=1), truth)
    if model.task == "regression":
        value = metrics.acc2(out[:, 0], truth)
        return 0.0 if value is None else value
    return metrics.accuracy(out.argmax(axis=1), truth)


def _better(a, b, selection):
    return a < b if selection == "mae" else a > b


def train(model, train_set, val_set, config: TrainConfig) -> TrainResult:
    """Minibatch Adam with per-epoch validation, best-epoch restore and early stop."""
    config.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise InvalidArgumentError("train and validation splits must be non-empty")
    params = model.parameters()
    state = AdamState(lr=config.lr)
    clip = config.clip_norm if model.has_lstm else None
    history = []
    best_state, best_metric, best_epoch = None, None, 0
    stale = 0
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = philox(config.seed, epoch).permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            chunk = [train_set.samples[i] for i in order[start:start + config.batch_size]]
            batch = model.batch(chunk)
            tape = Tape()
            out = model.forward_tape(tape, batch)
            loss, seed = loss_and_seed(out.value, batch.labels, model.task)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}", log=history)
            total += loss * len(chunk)
            zero_grads(params)
            tape.backward(out, seed)
            if clip is not None:
                clip_global_norm(params, clip)
            try:
                adam_step(state, params)
            except NumericError as exc:
                raise NumericError(str(exc), log=history) from exc
        val = selection_value(model, val_set, config.selection)
        if not math.isfinite(val):
            raise NumericError(f"non-finite validation metric at epoch {epoch}", log=history)
        history.append(EpochLog(epoch, total / n, val))
        log.debug("epoch %d loss %.6f val %.6f", epoch, total / n, val)
        if best_metric is None or _better(val, best_metric, config.selection):
            best_metric, best_epoch, best_state = val, epoch, model.state_dict()
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break
    model.load_state_dict(best_state)
    return TrainResult(model, history, best_epoch, best_metric)


def write_log(path, history):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_metric"])
        for e in history:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_metric)])


@dataclass
class GridSpec:
    learning_rates: list = field(default_factory=list)
    hidden_sizes: list = field(default_factory=list)
    embed_sizes: list = field(default_factory=list)
    ranks: list = field(default_factory=list)

    def points(self, arch, train_cfg):
        """Cartesian product in enumeration order; empty lists keep the base value."""
        axes = [
            self.learning_rates or [train_cfg.lr],
            self.hidden_sizes or [arch.hidden],
            self.embed_sizes or [arch.embed],
            self.ranks or [arch.ranks],
        ]
        out = []
        for lr, hidden, embed, ranks in itertools.product(*axes):
            out.append((replace(arch, hidden=hidden, embed=embed, ranks=ranks),
                        replace(train_cfg, lr=lr)))
        if not out:
            raise InvalidArgumentError("grid is empty")
        return out


@dataclass
class LeaderboardEntry:
    index: int
    lr: float
    hidden: int
    embed: object
    ranks: object
    status: str
    val_metric: float | None
    best_epoch: int | None
    error: str = ""


def grid_search(grid: GridSpec, splits, arch, train_cfg, manifest, build):
    """Train one model per grid point and rank by the validation selection metric.

    ``build(manifest, arch, seed)`` constructs a model. Ties keep enumeration
    order; failed points are listed after all successful ones.
    """
    train_set, val_set = splits[0], splits[1]
    entries = []
    best = None
    for i, (a, t) in enumerate(grid.points(arch, train_cfg)):
        try:
            res = train(build(manifest, a, t.seed), train_set, val_set, t)
        except MRRFError as exc:
            entries.append(LeaderboardEntry(i, t.lr, a.hidden, a.embed, a.ranks, "failed",
                                            None, None, str(exc)))
            continue
        entries.append(LeaderboardEntry(i, t.lr, a.hidden, a.embed, a.ranks, "ok",
                                        res.best_metric, res.best_epoch))
        if best is None or _better(res.best_metric, best[2], t.selection):
            best = (a, t, res.best_metric)
    sign = 1.0 if train_cfg.selection == "mae" else -1.0
    ok = sorted((e for e in entries if e.status == "ok"),
                key=lambda e: (sign * e.val_metric, e.index))
    failed = [e for e in entries if e.status != "ok"]
    return (best[0], best[1]) if best else None, ok + failed


def write_leaderboard(path, entries):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "index", "lr", "hidden", "embed", "ranks", "status",
                    "val_metric", "best_epoch", "error"])
        for pos, e in enumerate(entries, 1):
            w.writerow([pos, e.index, repr(e.lr), e.hidden, _tuple_cell(e.embed),
                        _tuple_cell(e.ranks), e.status,
                        "" if e.val_metric is None else repr(e.val_metric),
                        "" if e.best_epoch is None else e.best_epoch, e.error])


def _tuple_cell(v):
    if v is None:
        return "full"
    if isinstance(v, (tuple, list)):
        return "x".join(str(x) for x in v)
    return str(v)
