"""Command-line entry point: build-library, train, eval, ablate, sweep, quality."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
import traceback
from dataclasses import asdict
from pathlib import Path

from .backbone import load_checkpoint
from .config import ALPHA_GRID, ConfigError, ExperimentConfig, coerce, load_config
from .evaluation import (
    MetricsRow, describe, experiment_quality, plot_data, run_ablation_matrix, run_row,
    standard_ablations, sweep, write_rows,
)
from .pipeline import Experiment

log = logging.getLogger("contrag")

# flag -> config key
FLAGS = {
    "--data": "data",
    "--split": "split",
    "--max-rows": "max_rows",
    "--seq-len": "seq_len",
    "--pred-len": "pred_len",
    "--stride": "stride",
    "--epsilon": "epsilon",
    "--descriptor": "descriptor",
    "--top-k": "top_k",
    "--exclusion-radius": "exclusion_radius",
    "--variant": "variant",
    "--tau": "tau",
    "--clip-q": "clip_q",
    "--epsilon-s": "epsilon_s",
    "--seed": "retrieval_seed",
    "--seeds": "seeds",
    "--fusion": "fusion",
    "--gate": "gate",
    "--alpha": "alpha",
    "--kernel": "kernel",
    "--lr": "learning_rate",
    "--batch-size": "batch_size",
    "--epochs": "max_epochs",
    "--patience": "patience",
    "--optimizer": "optimizer",
    "--corr": "corr_mode",
    "--out-dir": "out_dir",
    "--threads": "threads",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(2, "usage", message)


def _fail(code: int, kind: str, message: str, run_dir: Path | None = None):
    record = {"status": "error", "exit_code": code, "kind": kind, "message": message}
    print(json.dumps(record), file=sys.stderr)
    if run_dir is not None:
        with contextlib.suppress(OSError):
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "error.json").write_text(json.dumps(record, indent=2))
    raise SystemExit(code)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat TOML experiment file")
    for flag, key in FLAGS.items():
        common.add_argument(flag, dest=key, default=None)
    common.add_argument("--exclude-self", dest="exclude_self", action="store_const", const=True, default=None)
    common.add_argument("--no-exclude-self", dest="exclude_self", action="store_const", const=False)
    common.add_argument("--gate-per-stream", dest="gate_per_stream", action="store_const", const=True, default=None)
    common.add_argument("--individual", dest="individual", action="store_const", const=True, default=None)
    common.add_argument("--no-clip", dest="clip", action="store_const", const=False, default=None)
    common.add_argument("--emit", choices=["plotdata"], default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="contrag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    b = sub.add_parser("build-library", parents=[common], help="build and save the retrieval library")
    b.add_argument("--out", default=None, help="library file (default: <run dir>/library.bin)")
    sub.add_parser("train", parents=[common], help="train one model per seed")
    sub.add_parser("eval", parents=[common], help="evaluate trained checkpoints on the test split")
    sub.add_parser("ablate", parents=[common], help="run the standard ablation matrix")
    s = sub.add_parser("sweep", parents=[common], help="sweep one parameter")
    s.add_argument("--param", default="alpha")
    s.add_argument("--values", default=None, help="comma separated; default is the alpha grid")
    sub.add_parser("quality", parents=[common], help="proxy-vs-true continuation quality on test")
    return parser


_NON_CONFIG = {"command", "config", "emit", "verbose", "out", "param", "values"}


def resolve(args) -> ExperimentConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG and v is not None}
    return load_config(args.config, overrides)


def _setup_logging(verbose: bool) -> None:
    # output is plain text; NO_COLOR needs no special handling
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=float))


def _checkpoint_name(cfg: ExperimentConfig, seed: int) -> str:
    return "model.ckpt" if seed == cfg.seeds[0] else f"model-seed{seed}.ckpt"


def _experiment(cfg: ExperimentConfig, run_dir: Path) -> Experiment:
    exp = Experiment(cfg)
    if not cfg.baseline:
        exp.library(cfg, cache_path=run_dir / "library.bin")
    return exp


def cmd_build_library(cfg, args, run_dir):
    exp = Experiment(cfg)
    target = Path(args.out) if args.out else run_dir / "library.bin"
    lib = exp.library(cfg, cache_path=target)
    out = {"library": str(target), "entries": len(lib), "fingerprint": lib.fingerprint,
           "reused": exp.library_reused, "config": cfg.to_dict()}
    _write_json(run_dir / "build_report.json", out)
    return out


def cmd_train(cfg, args, run_dir):
    exp = _experiment(cfg, run_dir)
    reports = []
    for seed in cfg.seeds:
        res = exp.run(cfg, seed)
        res.model.save(run_dir / _checkpoint_name(cfg, seed))
        reports.append({"seed": seed, **res.report.to_dict()})
    lib = None if cfg.baseline or cfg.variant == "pbcc" else exp.library(cfg)
    out = {"config": cfg.to_dict(), "config_hash": cfg.hash(),
           "library_fingerprint": lib.fingerprint if lib else None, "runs": reports}
    _write_json(run_dir / "report.json", out)
    return out


def cmd_eval(cfg, args, run_dir):
    exp = _experiment(cfg, run_dir)
    mses, maes = [], []
    for seed in cfg.seeds:
        ckpt = run_dir / _checkpoint_name(cfg, seed)
        if not ckpt.exists():
            raise FileNotFoundError(f"{ckpt} missing; run `contrag train` with the same config first")
        mse, mae = exp.evaluate(load_checkpoint(ckpt), cfg)
        mses.append(mse)
        maes.append(mae)
    import numpy as np

    row = MetricsRow(
        dataset=Path(cfg.data).stem, variant=describe(cfg), horizon=cfg.pred_len,
        mse=float(np.mean(mses)), mae=float(np.mean(maes)),
        mse_std=float(np.std(mses, ddof=1)) if len(mses) > 1 else 0.0,
        mae_std=float(np.std(maes, ddof=1)) if len(maes) > 1 else 0.0,
        n_seeds=len(mses), per_seed_mse=mses, per_seed_mae=maes,
        config_hash=cfg.hash(), config=cfg.to_dict(),
    )
    write_rows([row], run_dir / "tables" / "metrics")
    return asdict(row)


def _parse_values(param: str, text):
    if text is None:
        if param != "alpha":
            raise ConfigError("--values is required unless sweeping alpha")
        return list(ALPHA_GRID)
    return [coerce(param, v) for v in text.split(",") if v.strip()]


def cmd_sweep(cfg, args, run_dir):
    values = _parse_values(args.param, args.values)
    # validate every point before running anything
    for v in values:
        cfg.replace(**{args.param: v})
    data_keys = ("seq_len", "pred_len", "max_rows", "split", "data")
    if args.param in data_keys:
        rows = []
        for v in values:
            c = cfg.replace(**{args.param: v})
            rows.append(run_row(Experiment(c), c, f"{args.param}={v}"))
    else:
        rows = sweep(Experiment(cfg), cfg, args.param, values)
    write_rows(rows, run_dir / "tables" / f"sweep_{args.param}")
    if args.emit == "plotdata":
        _write_json(run_dir / "tables" / f"plotdata_{args.param}.json", plot_data(rows, args.param))
    return [r.flat() for r in rows]


def cmd_ablate(cfg, args, run_dir):
    exp = _experiment(cfg, run_dir)
    base = cfg if not cfg.baseline else cfg.replace(variant="ratio")
    rows = run_ablation_matrix(exp, standard_ablations(base))
    write_rows(rows, run_dir / "tables" / "ablation")
    if args.emit == "plotdata":
        _write_json(run_dir / "tables" / "plotdata_ablation.json",
                    {"labels": [r.variant for r in rows], "mse": [r.mse for r in rows]})
    return [r.flat() for r in rows]


def cmd_quality(cfg, args, run_dir):
    if cfg.baseline:
        raise ConfigError("quality needs a continuation variant, not baseline")
    exp = _experiment(cfg, run_dir)
    q = experiment_quality(exp, cfg, "test")
    out = {**asdict(q), "scale": "standardized", "corr_mode": cfg.corr_mode,
           "config": cfg.to_dict(), "config_hash": cfg.hash()}
    _write_json(run_dir / "tables" / "quality.json", out)
    return out


COMMANDS = {
    "build-library": cmd_build_library,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "quality": cmd_quality,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        cfg = resolve(args)
        if not cfg.data:
            raise ConfigError("no data file given (--data or `data` in the config)")
        if not Path(cfg.data).exists():
            raise ConfigError(f"data file {cfg.data} does not exist")
    except ConfigError as exc:
        _fail(2, "config", str(exc))
    run_dir = cfg.run_dir()
    limiter = contextlib.nullcontext()
    if cfg.threads:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(cfg.threads)
    try:
        with limiter:
            result = COMMANDS[args.command](cfg, args, run_dir)
    except ConfigError as exc:
        _fail(2, "config", str(exc), run_dir)
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 1
        log.debug("%s", traceback.format_exc())
        _fail(1, type(exc).__name__, str(exc), run_dir)
    print(json.dumps({"status": "ok", "command": args.command, "run_dir": str(run_dir),
                      "result": result}, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
