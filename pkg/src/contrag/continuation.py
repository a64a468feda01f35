"""Continuation proxy construction: weighted ratio fusion, quantile-tanh clipping,
modulation of the query and moment alignment, plus the ablation variants."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .library import RetrievalLibrary
from .search import CandidateSet, RetrievalConfig, search_batch

VARIANTS = ("ratio", "residual", "direct_continuation", "target", "random_retrieval", "pbcc")
VARIANT_ALIASES = {"dc": "direct_continuation", "random": "random_retrieval"}


@dataclass(frozen=True)
class ContinuationConfig:
    tau: float = 0.01
    clip_quantile: float = 0.9
    epsilon_s: float = 1e-8
    align_epsilon: float = 1e-8
    variant: str = "ratio"
    clip: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", VARIANT_ALIASES.get(self.variant, self.variant))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if not 0 < self.clip_quantile <= 1:
            raise ValueError("clip_quantile must lie in (0, 1]")
        if self.epsilon_s < 0:
            raise ValueError("epsilon_s must be >= 0")
        if not self.align_epsilon > 0:
            raise ValueError("align_epsilon must be > 0")


@dataclass(frozen=True, eq=False)
class AuxiliaryResult:
    Z: np.ndarray
    fused_ratio: Optional[np.ndarray]
    clipped_ratio: Optional[np.ndarray]
    clip_threshold: Optional[float]
    weights: Optional[np.ndarray]  # [C, k]
    candidates: Optional[CandidateSet] = None
    F_hat: Optional[np.ndarray] = None


def softmax_weights(corr: np.ndarray, tau: float) -> np.ndarray:
    """Temperature softmax along the last axis, shifted by the per-row maximum."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    corr = np.asarray(corr, dtype=np.float64)
    e = np.exp((corr - corr.max(axis=-1, keepdims=True)) / tau)
    return e / e.sum(axis=-1, keepdims=True)


def _gather(table: np.ndarray, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-channel weighted sum of table rows: table [N, S, C], idx/w [B, C, k] -> [B, S, C]."""
    B, C, _ = idx.shape
    out = np.empty((B, table.shape[1], C))
    for c in range(C):
        rows = table[:, :, c][idx[:, c, :]]  # [B, k, S]
        out[:, :, c] = np.einsum("bk,bks->bs", w[:, c, :], rows)
    return out


def aggregate(candidates: CandidateSet, library: RetrievalLibrary, tau: float):
    """Fuse the candidates' descriptor columns channel by channel. Returns (R_hat, weights)."""
    w = softmax_weights(candidates.corr, tau)
    R = _gather(library.values, candidates.indices[None], w[None])[0]
    return R, w


def clip(R_hat: np.ndarray, clip_quantile: float = 0.9):
    """Quantile-tanh squashing with one global threshold. Returns (R_tilde, threshold)."""
    R_hat = np.asarray(R_hat, dtype=np.float64)
    thr = float(np.quantile(np.abs(R_hat), clip_quantile))
    if thr == 0.0:
        return np.zeros_like(R_hat), 0.0
    with np.errstate(over="ignore"):  # tanh(+-inf) = +-1 is the right limit
        return thr * np.tanh(R_hat / thr), thr


def _clip_batch(R_hat: np.ndarray, q: float):
    B = R_hat.shape[0]
    thr = np.quantile(np.abs(R_hat).reshape(B, -1), q, axis=1)
    out = np.zeros_like(R_hat)
    nz = thr > 0
    t = thr[nz][:, None, None]
    with np.errstate(over="ignore"):
        out[nz] = t * np.tanh(R_hat[nz] / t)
    return out, thr


def modulate(X: np.ndarray, R_tilde: np.ndarray, epsilon_s: float = 1e-8, descriptor: str = "ratio") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape != np.shape(R_tilde):
        raise ValueError(f"shape mismatch {X.shape} vs {np.shape(R_tilde)}")
    if descriptor == "residual":
        return X + R_tilde
    # np.sign(0) == 0 here, so a zero ratio leaves X untouched
    return X + (R_tilde + epsilon_s * np.sign(R_tilde)) * X


def align(F_hat: np.ndarray, X: np.ndarray, align_epsilon: float = 1e-8) -> np.ndarray:
    """Rescale each channel of F_hat to X's temporal mean and (population) std."""
    F_hat = np.asarray(F_hat, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if F_hat.shape != X.shape:
        raise ValueError(f"shape mismatch {F_hat.shape} vs {X.shape}")
    mu_f = F_hat.mean(axis=-2, keepdims=True)
    sd_f = F_hat.std(axis=-2, keepdims=True)
    mu_x = X.mean(axis=-2, keepdims=True)
    sd_x = X.std(axis=-2, keepdims=True)
    return (F_hat - mu_f) / (sd_f + align_epsilon) * (sd_x + align_epsilon) + mu_x


def fit_length(seg: np.ndarray, L: int) -> np.ndarray:
    """Truncate or pad (repeating the last step) along the time axis of [..., S, C] to L."""
    S = seg.shape[-2]
    if S >= L:
        return seg[..., :L, :]
    pad = np.repeat(seg[..., -1:, :], L - S, axis=-2)
    return np.concatenate([seg, pad], axis=-2)


class NotFittedError(RuntimeError):
    pass


class ContinuationPredictor:
    """Wraps a linear backbone mapping a history window to its post-target continuation."""

    def __init__(self, model):
        self.model = model
        self.fitted = False

    def forecast_continuation(self, X: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise NotFittedError("continuation predictor has not been trained")
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        out = self.model.predict(X[None] if single else X)
        return out[0] if single else out


def train_pbcc_predictor(train_chains, L: int, train_cfg, val_chains=None, **backbone_kwargs) -> ContinuationPredictor:
    """Train a linear backbone on (history -> continuation) pairs with the main protocol."""
    from .backbone import LinearBackbone
    from .training import train

    H = np.stack([c.H for c in train_chains])
    F = np.stack([c.F for c in train_chains])
    if val_chains:
        Hv = np.stack([c.H for c in val_chains])
        Fv = np.stack([c.F for c in val_chains])
    else:
        Hv, Fv = H, F
    C = H.shape[2]
    model = LinearBackbone(L, L, C, seed=train_cfg.seed, **backbone_kwargs)
    model, _ = train(model, (H, F), (Hv, Fv), None, train_cfg)
    pred = ContinuationPredictor(model)
    pred.fitted = True
    return pred


def _random_candidates(starts, library, k, cfg_r: RetrievalConfig, L, T, seed, C):
    n = len(library)
    k_eff = min(k, n)
    idx = np.empty((len(starts), C, k_eff), dtype=np.int64)
    radius = cfg_r.radius(L, T) if cfg_r.exclude_self_window else 0
    for i, s in enumerate(starts):
        rng = np.random.default_rng([seed, int(s)])
        pool = np.arange(n)
        if radius > 0:
            pool = np.flatnonzero(np.abs(library.source_start - s) >= radius)
        for c in range(C):
            idx[i, c] = rng.choice(pool, size=k_eff, replace=False)
    return idx


def construct_batch(
    X: np.ndarray,
    library: Optional[RetrievalLibrary],
    retrieval_cfg: RetrievalConfig,
    cont_cfg: ContinuationConfig,
    starts=None,
    T: Optional[int] = None,
    predictor: Optional[ContinuationPredictor] = None,
    candidates: Optional[tuple[np.ndarray, np.ndarray]] = None,
    return_details: bool = False,
):
    """Build Z for a stack of query windows X [B, L, C].

    ``candidates`` may carry a precomputed ``(indices, corr)`` pair from
    ``search_batch`` so several configurations can share one search.
    """
    X = np.asarray(X, dtype=np.float64)
    B, L, C = X.shape
    v = cont_cfg.variant
    details: dict = {}
    if v == "pbcc":
        if predictor is None:
            raise NotFittedError("pbcc variant needs a trained continuation predictor")
        F_hat = predictor.forecast_continuation(X)
        Z = align(F_hat, X, cont_cfg.align_epsilon)
        return (Z, {"F_hat": F_hat}) if return_details else Z
    if library is None:
        raise ValueError(f"variant {v!r} needs a retrieval library")

    if v == "random_retrieval":
        if starts is None:
            raise ValueError("random retrieval derives its draws from query start indices")
        idx = _random_candidates(starts, library, retrieval_cfg.k, retrieval_cfg, L, T or 0, cont_cfg.seed, C)
        w = np.full(idx.shape, 1.0 / idx.shape[2])
        corr = None
    else:
        if candidates is None:
            candidates = search_batch(X, library, retrieval_cfg, starts, T)
        idx, corr = candidates
        w = softmax_weights(corr, cont_cfg.tau)
    details.update(indices=idx, corr=corr, weights=w)

    if v in ("direct_continuation", "target"):
        table = library.continuations if v == "direct_continuation" else library.targets
        if table is None:
            raise ValueError(f"variant {v!r} needs raw segments; use attach_segments()")
        if v == "target":
            table = fit_length(table, L)
        F_hat = _gather(table, idx, w)
        Z = align(F_hat, X, cont_cfg.align_epsilon)
        details.update(F_hat=F_hat)
        return (Z, details) if return_details else Z

    if v == "ratio" and library.descriptor != "ratio":
        raise ValueError("ratio variant needs a library built with the ratio descriptor")
    if v == "residual" and library.descriptor != "residual":
        raise ValueError("residual variant needs a library built with the residual descriptor")
    R_hat = _gather(library.values, idx, w)
    if cont_cfg.clip:
        R_tilde, thr = _clip_batch(R_hat, cont_cfg.clip_quantile)
    else:
        R_tilde, thr = R_hat, np.full(B, np.inf)
    F_hat = modulate(X, R_tilde, cont_cfg.epsilon_s, library.descriptor)
    Z = align(F_hat, X, cont_cfg.align_epsilon)
    details.update(R_hat=R_hat, R_tilde=R_tilde, threshold=thr, F_hat=F_hat)
    return (Z, details) if return_details else Z


def construct(
    X: np.ndarray,
    library: Optional[RetrievalLibrary],
    retrieval_cfg: RetrievalConfig,
    cont_cfg: ContinuationConfig,
    query_start: Optional[int] = None,
    T: Optional[int] = None,
    predictor: Optional[ContinuationPredictor] = None,
) -> AuxiliaryResult:
    starts = None if query_start is None else [query_start]
    Z, d = construct_batch(
        np.asarray(X)[None], library, retrieval_cfg, cont_cfg, starts, T, predictor,
        return_details=True,
    )
    cands = None
    if d.get("indices") is not None:
        corr = d["corr"][0] if d.get("corr") is not None else np.zeros(d["indices"][0].shape)
        cands = CandidateSet(d["indices"][0], corr)
    return AuxiliaryResult(
        Z=Z[0],
        fused_ratio=d["R_hat"][0] if "R_hat" in d else None,
        clipped_ratio=d["R_tilde"][0] if "R_tilde" in d else None,
        clip_threshold=float(d["threshold"][0]) if "threshold" in d else None,
        weights=d["weights"][0] if "weights" in d else None,
        candidates=cands,
        F_hat=d["F_hat"][0],
    )
