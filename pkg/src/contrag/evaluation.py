"""Forecast metrics, proxy (retrieval) quality, ablation matrices and sweep tables."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import ALPHA_GRID, TAU_GRID, TOPK_GRID, ExperimentConfig
from .training import _metrics


def evaluate(model, X, Y, Z=None) -> tuple[float, float]:
    """Test MSE and MAE averaged over every window, step and channel."""
    if len(X) == 0:
        raise ValueError("empty test set")
    return _metrics(model, np.asarray(X), np.asarray(Y), None if Z is None else np.asarray(Z))


def improvement(base: float, new: float) -> float:
    """Relative error reduction in percent; positive means ``new`` is better."""
    return 100.0 * (base - new) / base


@dataclass(frozen=True)
class RetrievalQuality:
    mse: float
    mae: float
    corr: float
    n_queries: int = 0


def _pearson_flat(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    den = np.sqrt(np.dot(da, da) * np.dot(db, db))
    return 0.0 if den == 0 else float(np.clip(np.dot(da, db) / den, -1.0, 1.0))


def retrieval_quality(Z: np.ndarray, F_true: np.ndarray, corr_mode: str = "pooled") -> RetrievalQuality:
    """Agreement between continuation proxies and the true continuations.

    ``corr_mode="pooled"`` computes one Pearson coefficient over all flattened
    pairs; ``"per-query"`` averages the per-window coefficients.
    """
    Z = np.asarray(Z, dtype=np.float64)
    F_true = np.asarray(F_true, dtype=np.float64)
    if Z.shape[0] == 0:
        raise ValueError("no queries with a known continuation")
    if Z.shape != F_true.shape:
        raise ValueError(f"shape mismatch {Z.shape} vs {F_true.shape}")
    err = Z - F_true
    if corr_mode == "pooled":
        corr = _pearson_flat(Z.ravel(), F_true.ravel())
    elif corr_mode == "per-query":
        corr = float(np.mean([_pearson_flat(z.ravel(), f.ravel()) for z, f in zip(Z, F_true)]))
    else:
        raise ValueError(f"unknown corr_mode {corr_mode!r}")
    return RetrievalQuality(float(np.mean(err**2)), float(np.mean(np.abs(err))), corr, Z.shape[0])


def experiment_quality(exp, cfg: Optional[ExperimentConfig] = None, split: str = "test") -> RetrievalQuality:
    cfg = cfg or exp.cfg
    w = exp.windows[split]
    n = w.F.shape[0]
    if n == 0:
        raise ValueError(
            f"no {split} windows have a post-target continuation inside the partition "
            f"(need partition length >= 2L+T = {2 * cfg.seq_len + cfg.pred_len})"
        )
    Z = exp.proxy(cfg, split)[:n]
    return retrieval_quality(Z, w.F, cfg.corr_mode)


@dataclass
class MetricsRow:
    dataset: str
    variant: str
    horizon: int
    mse: float
    mae: float
    mse_std: float = 0.0
    mae_std: float = 0.0
    n_seeds: int = 1
    improvement_mse: Optional[float] = None
    improvement_mae: Optional[float] = None
    per_seed_mse: list = field(default_factory=list)
    per_seed_mae: list = field(default_factory=list)
    config_hash: str = ""
    config: dict = field(default_factory=dict)

    def flat(self) -> dict:
        d = asdict(self)
        d.pop("config")
        d["per_seed_mse"] = ";".join(repr(v) for v in self.per_seed_mse)
        d["per_seed_mae"] = ";".join(repr(v) for v in self.per_seed_mae)
        return d


def _std(values: Sequence[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def run_row(exp, cfg: ExperimentConfig, label: Optional[str] = None) -> MetricsRow:
    results = [exp.run(cfg, seed) for seed in cfg.seeds]
    mses = [r.test_mse for r in results]
    maes = [r.test_mae for r in results]
    return MetricsRow(
        dataset=Path(cfg.data).stem if cfg.data else "series",
        variant=label or describe(cfg),
        horizon=cfg.pred_len,
        mse=float(np.mean(mses)),
        mae=float(np.mean(maes)),
        mse_std=_std(mses),
        mae_std=_std(maes),
        n_seeds=len(results),
        per_seed_mse=mses,
        per_seed_mae=maes,
        config_hash=cfg.hash(),
        config=cfg.to_dict(),
    )


def describe(cfg: ExperimentConfig) -> str:
    if cfg.baseline:
        return "baseline"
    name = cfg.variant
    if cfg.fusion == "concat":
        name = f"concat[{name}]"
    return name


def standard_ablations(base: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    """Component and parameter ablations around an augmented base configuration."""
    return [
        ("full", base),
        ("concatenation", base.replace(fusion="concat")),
        ("random_retrieval", base.replace(variant="random_retrieval")),
        ("direct_continuation", base.replace(variant="direct_continuation")),
        ("target", base.replace(variant="target")),
        ("w/o alpha", base.replace(alpha=0.0)),
        ("w/o tau", base.replace(tau=1.0)),
        ("w/o top-k", base.replace(top_k=1)),
        ("residual", base.replace(variant="residual", descriptor="residual")),
        ("pbcc", base.replace(variant="pbcc")),
    ]


def run_ablation_matrix(exp, variants: Iterable[tuple[str, ExperimentConfig]],
                        baseline: Optional[ExperimentConfig] = None) -> list[MetricsRow]:
    """One row per variant, all on the same data and seeds, plus a leading baseline row."""
    variants = list(variants)
    if baseline is None:
        baseline = variants[0][1].replace(variant="baseline")
    base_row = run_row(exp, baseline, "baseline")
    rows = [base_row]
    for label, cfg in variants:
        if cfg.seeds != baseline.seeds:
            raise ValueError(f"variant {label!r} uses different seeds than the baseline")
        row = run_row(exp, cfg, label)
        row.improvement_mse = improvement(base_row.mse, row.mse)
        row.improvement_mae = improvement(base_row.mae, row.mae)
        rows.append(row)
    base_row.improvement_mse = 0.0
    base_row.improvement_mae = 0.0
    return rows


def sweep(exp, base: ExperimentConfig, param: str, values: Sequence) -> list[MetricsRow]:
    rows = []
    for v in values:
        cfg = base.replace(**{param: v})
        rows.append(run_row(exp, cfg, f"{param}={v}"))
    return rows


def validation_score(exp, cfg: ExperimentConfig) -> float:
    """Best-epoch validation MSE averaged over the configuration's seeds."""
    return float(np.mean([min(exp.run(cfg, seed).report.val_mse) for seed in cfg.seeds]))


def plugin_search(exp, base: ExperimentConfig, top_ks=TOPK_GRID, taus=TAU_GRID, alphas=ALPHA_GRID,
                  stage1_alpha: float = 0.9):
    """Two-stage validation search with the backbone's training settings left untouched.

    Stage one picks (k, tau) at a fixed alpha, stage two picks alpha. With k = 1 the
    result does not depend on tau, so only the first tau is run for it. Ties keep the
    earlier grid point. Returns ``(best_config, trace)``.
    """
    trace = []
    # one search at the largest k serves every smaller k
    for split in ("train", "val"):
        exp.candidates(base.replace(top_k=max(top_ks)), split)
    best, best_score = None, np.inf
    for k in top_ks:
        for tau in (taus[:1] if k == 1 else taus):
            cfg = base.replace(top_k=k, tau=tau, alpha=stage1_alpha)
            score = validation_score(exp, cfg)
            trace.append({"stage": 1, "top_k": k, "tau": tau, "alpha": stage1_alpha, "val_mse": score})
            if score < best_score:
                best, best_score = cfg, score
    stage1, stage1_score = best, best_score
    best, best_score = None, np.inf
    for a in alphas:
        cfg = stage1.replace(alpha=a)
        # the stage-one winner was already scored at stage1_alpha
        score = stage1_score if a == stage1_alpha else validation_score(exp, cfg)
        trace.append({"stage": 2, "top_k": cfg.top_k, "tau": cfg.tau, "alpha": a, "val_mse": score})
        if score < best_score:
            best, best_score = cfg, score
    return best, trace


def write_rows(rows: Sequence[MetricsRow], stem: Path) -> None:
    """Write ``stem.csv`` (flat) and ``stem.json`` (with embedded configs)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    flat = [r.flat() for r in rows]
    with stem.with_suffix(".csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(flat[0]))
        writer.writeheader()
        writer.writerows(flat)
    stem.with_suffix(".json").write_text(json.dumps([asdict(r) for r in rows], indent=2))


def plot_data(rows: Sequence[MetricsRow], x_param: str) -> dict:
    """``{"x": param, "series": {"mse": [[x, y], ...], "mae": [...]}}`` for external plotting."""
    pts = [(r.config.get(x_param), r.mse, r.mae) for r in rows]
    return {
        "x": x_param,
        "series": {
            "mse": [[x, m] for x, m, _ in pts],
            "mae": [[x, a] for x, _, a in pts],
        },
    }
