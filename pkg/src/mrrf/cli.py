"""Command-line entry point.

Exit codes: 0 success, 1 user error (bad flags, config or data), 2 numeric
failure (divergence, failed gradient check).

Acc-2 treats a zero prediction as positive and drops zero-truth samples.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__, selftest
from .autodiff import PRIMITIVES, corrupt_adjoint, grad_check
from .config import load_config, load_grid
from .data import SyntheticSpec, generate_synthetic, load_dataset, save_dataset, split
from .errors import MRRFError, NumericError
from .experiment import (SPLIT_NAMES, run_eval, run_train, sweep_modality, write_sweep,
                         write_sweep_summary)
from .metrics import write_report
from .model import build_model
from .optim import grid_search, write_leaderboard

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _ints(s):
    return tuple(int(x) for x in s.split(","))


def _floats(s):
    return tuple(float(x) for x in s.split(","))


def _strs(s):
    return tuple(x.strip() for x in s.split(","))


def build_parser():
    p = _Parser(prog="mrrf", description="Multimodal tensor fusion toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--seed", type=int, default=0)
    d = SyntheticSpec()
    g.add_argument("--latent-dim", type=int, default=d.latent_dim)
    g.add_argument("--widths", type=_ints, default=d.widths)
    g.add_argument("--kinds", type=_strs, default=d.kinds)
    g.add_argument("--names", type=_strs, default=d.names)
    g.add_argument("--redundancy", type=_floats, default=d.redundancy)
    g.add_argument("--interaction", type=float, default=d.interaction)
    g.add_argument("--noise", type=float, default=d.noise)
    g.add_argument("--task", choices=("regression", "classification"), default=d.task)
    g.add_argument("--num-classes", type=int, default=d.num_classes)
    g.add_argument("--seq-len", type=_ints, default=d.seq_len)
    g.add_argument("--group-size", type=int, default=d.group_size)
    g.add_argument("--loading-seed", type=int, default=d.loading_seed)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out")

    e = sub.add_parser(
        "eval", help="evaluate a checkpoint on a dataset split",
        description="Writes metrics.csv. Acc-2 counts a zero prediction as positive and "
                    "leaves zero-truth samples out; Acc-7 rounds half away from zero, "
                    "then clamps to [-3, 3].")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="dataset directory (default: the one used for training)")
    e.add_argument("--split", choices=SPLIT_NAMES + ("all",), default="test")
    e.add_argument("--out", required=True)

    s = sub.add_parser("sweep", help="per-modality compression sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--modality", required=True, help="modality index or name")
    s.add_argument("--ranks", type=_ints, required=True)
    s.add_argument("--seeds", type=_ints, default=(0, 1, 2))
    s.add_argument("--out")

    gr = sub.add_parser("grid", help="hyperparameter grid search")
    gr.add_argument("--grid", required=True)
    gr.add_argument("--out")

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check")
    gc.add_argument("--config", required=True)
    gc.add_argument("--out")
    gc.add_argument("--eps", type=float, default=1e-5)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--samples", type=int, default=2)
    gc.add_argument("--break-adjoint", choices=sorted(PRIMITIVES), help=argparse.SUPPRESS)

    sub.add_parser("selftest", help="run the built-in property checks")
    return p


def _out_dir(args, cfg=None):
    out = Path(args.out if args.out else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args):
    kw = {f.name: getattr(args, f.name) for f in fields(SyntheticSpec)}
    ds = generate_synthetic(SyntheticSpec(**kw), args.n, args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out}")
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    res = run_train(cfg, out)
    print(f"best epoch {res.best_epoch} validation {cfg.train.selection} {res.best_metric!r}")
    return EXIT_OK


def cmd_eval(args):
    from .data import read_checkpoint

    data = args.data
    if data is None:
        meta, _ = read_checkpoint(args.checkpoint)
        data = meta.get("data_path")
        if data is None:
            raise UsageError("checkpoint records no dataset; pass --data")
    rep = run_eval(args.checkpoint, load_dataset(data), args.split)
    out = _out_dir(args)
    write_report(out / "metrics.csv", rep, args.split)
    for k, v in rep.rows():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = load_config(args.config)
    dataset = cfg.dataset()
    names = dataset.manifest.modality_names
    k = int(args.modality) if args.modality.isdigit() else (
        names.index(args.modality) if args.modality in names else -1)
    if not 0 <= k < len(names):
        raise UsageError(f"unknown modality {args.modality!r}; have {names}")
    cfg.model.fusion = "mrrf"
    result = sweep_modality(cfg, k, args.ranks, args.seeds, dataset=dataset)
    out = _out_dir(args, cfg)
    write_sweep(out / "sweep.csv", result)
    write_sweep_summary(out / "sweep_summary.csv", result)
    for name, _, rank, emb, n_ok, mean, std in result.summary():
        print(f"modality={name} rank={rank} embedding_size={emb} n_ok={n_ok} "
              f"test_mae_mean={mean} std={std}")
    return EXIT_OK


def cmd_grid(args):
    cfg, grid = load_grid(args.grid)
    dataset = cfg.dataset()
    parts = split(dataset, cfg.split_ratios, cfg.split_seed)
    best, board = grid_search(grid, parts, cfg.model, cfg.train, dataset.manifest, build_model)
    out = _out_dir(args, cfg)
    write_leaderboard(out / "leaderboard.csv", board)
    if best is None:
        print("every grid point failed")
        return EXIT_NUMERIC
    print(f"best: lr={best[1].lr} hidden={best[0].hidden} embed={best[0].embed} ranks={best[0].ranks}")
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = load_config(args.config)
    dataset = cfg.dataset()
    model = build_model(dataset.manifest, cfg.model, cfg.train.seed)
    batch = model.batch(dataset.samples[:max(1, args.samples)])
    if args.break_adjoint:
        with corrupt_adjoint(args.break_adjoint):
            rep = grad_check(model, batch, args.eps, args.tol)
    else:
        rep = grad_check(model, batch, args.eps, args.tol)
    out = _out_dir(args, cfg)
    lines = rep.lines()
    (out / "gradcheck.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK if rep.passed else EXIT_NUMERIC


def cmd_selftest(args):
    return EXIT_OK if selftest.run() else EXIT_NUMERIC


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "grid": cmd_grid,
    "gradcheck": cmd_gradcheck,
    "selftest": cmd_selftest,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USER
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mrrf: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except NumericError as exc:
        print(f"mrrf: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MRRFError, OSError) as exc:
        print(f"mrrf: error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
