"""Channel-wise Pearson similarity search with Top-k over clamped (non-negative) correlations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .library import RetrievalLibrary, offset_last_step


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 1
    exclude_self_window: bool = True
    exclusion_radius: Optional[int] = None  # None -> L + T, resolved by the caller

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.exclusion_radius is not None and self.exclusion_radius < 0:
            raise ValueError("exclusion_radius must be >= 0")

    def radius(self, L: int, T: int) -> int:
        return L + T if self.exclusion_radius is None else self.exclusion_radius


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Per-channel neighbours: ``indices[c]`` and ``corr[c]`` sorted by descending corr."""

    indices: np.ndarray  # [C, k] int64
    corr: np.ndarray  # [C, k] float64, in [0, 1]

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def channel(self, c: int) -> list[tuple[int, float]]:
        return [(int(i), float(r)) for i, r in zip(self.indices[c], self.corr[c])]

    def __eq__(self, other):
        return (
            isinstance(other, CandidateSet)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.corr, other.corr)
        )


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("pearson needs two equal-length vectors of length >= 2")
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(np.dot(da, da))
    sb = np.sqrt(np.dot(db, db))
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return float(np.clip(np.dot(da, db) / (sa * sb), -1.0, 1.0))


def _unit_columns(W: np.ndarray) -> np.ndarray:
    """Center and L2-normalize along the time axis of [..., L, C]; zero-variance -> 0."""
    d = W - W.mean(axis=-2, keepdims=True)
    norm = np.sqrt(np.einsum("...lc,...lc->...c", d, d))
    out = np.zeros_like(d)
    np.divide(d, norm[..., None, :], out=out, where=norm[..., None, :] > 0)
    return out


class _KeyCache:
    # unit-normalized keys per channel, [C, N, L], computed once per library
    def __init__(self):
        self._store: dict[int, tuple[RetrievalLibrary, np.ndarray]] = {}

    def get(self, lib: RetrievalLibrary) -> np.ndarray:
        hit = self._store.get(id(lib))
        if hit is not None and hit[0] is lib:
            return hit[1]
        unit = np.ascontiguousarray(_unit_columns(lib.keys).transpose(2, 0, 1))
        self._store = {id(lib): (lib, unit)}
        return unit


_keys = _KeyCache()


def _top_k(row: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values, ties broken by smaller index."""
    n = row.shape[0]
    if k >= n:
        return np.argsort(-row, kind="stable")
    kth = np.partition(row, n - k)[n - k]
    above = np.flatnonzero(row > kth)
    tied = np.flatnonzero(row == kth)[: k - above.size]
    sel = np.concatenate([above, tied])
    return sel[np.lexsort((sel, -row[sel]))]


def search_batch(
    X: np.ndarray,
    library: RetrievalLibrary,
    cfg: RetrievalConfig,
    starts: Optional[Sequence[int]] = None,
    T: Optional[int] = None,
    chunk: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Search many queries at once.

    Returns ``(indices, corr)`` of shape [Nq, C, k']. Exclusion is applied when
    ``cfg.exclude_self_window`` is set and ``starts`` is given; ``T`` is needed to
    resolve the default radius of L + T.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if len(library) == 0:
        raise ValueError("empty library")
    nq, L, C = X.shape
    if (L, C) != (library.L, library.C):
        raise ValueError(f"query shape {(L, C)} does not match library {(library.L, library.C)}")
    radius = 0
    if cfg.exclude_self_window and starts is not None:
        if cfg.exclusion_radius is None and T is None:
            raise ValueError("pass T to resolve the default exclusion radius")
        radius = cfg.radius(L, T or 0)
    starts_arr = None if starts is None else np.asarray(starts, dtype=np.int64)

    unit_keys = _keys.get(library)  # [C, N, L]
    n = len(library)
    k_eff = min(cfg.k, n)
    out_idx = np.empty((nq, C, k_eff), dtype=np.int64)
    out_corr = np.empty((nq, C, k_eff), dtype=np.float64)
    for lo in range(0, nq, chunk):
        hi = min(nq, lo + chunk)
        q = _unit_columns(offset_last_step(X[lo:hi]))  # [b, L, C]
        cands = None
        if radius > 0:
            cands = []
            for s in starts_arr[lo:hi]:
                cand = np.flatnonzero(np.abs(library.source_start - s) >= radius)
                if cand.size < k_eff:
                    raise ValueError(
                        f"only {cand.size} library entries remain after exclusion for "
                        f"query start {s}, need k={k_eff}"
                    )
                cands.append(None if cand.size == n else cand)
        for c in range(C):
            keys_c = unit_keys[c]
            for r in range(hi - lo):
                # one matrix-vector product per query keeps the result independent
                # of batch composition (a batched GEMM may round differently)
                row = keys_c @ q[r, :, c]
                np.clip(row, 0.0, 1.0, out=row)
                cand = None if cands is None else cands[r]
                if cand is not None:
                    sel = cand[_top_k(row[cand], k_eff)]
                else:
                    sel = _top_k(row, k_eff)
                out_idx[lo + r, c] = sel
                out_corr[lo + r, c] = row[sel]
    return out_idx, out_corr


def search(
    X: np.ndarray,
    library: RetrievalLibrary,
    cfg: RetrievalConfig,
    query_start: Optional[int] = None,
    T: Optional[int] = None,
) -> CandidateSet:
    starts = None if query_start is None else [query_start]
    idx, corr = search_batch(np.asarray(X)[None], library, cfg, starts, T)
    return CandidateSet(idx[0], corr[0])


def precompute_candidates(queries, library: RetrievalLibrary, cfg: RetrievalConfig, T: Optional[int] = None):
    """Map each query's start index to its CandidateSet (the offline candidate cache)."""
    queries = list(queries)
    if not queries:
        return {}
    X = np.stack([q.X for q in queries])
    starts = [q.start_index for q in queries]
    if T is None:
        T = queries[0].Y_true.shape[0]
    idx, corr = search_batch(X, library, cfg, starts, T)
    return {s: CandidateSet(idx[i], corr[i]) for i, s in enumerate(starts)}


def naive_search(X, library: RetrievalLibrary, k: int, excluded=()) -> list[list[tuple[int, float]]]:
    """First-principles reference: per pair Pearson, clamp, full sort by (-corr, index)."""
    L, C = library.L, library.C
    Xo = np.asarray(X, dtype=np.float64) - np.asarray(X, dtype=np.float64)[L - 1]
    excluded = set(excluded)
    result = []
    for c in range(C):
        scored = []
        for j in range(len(library)):
            if j in excluded:
                continue
            r = pearson(Xo[:, c], library.keys[j][:, c])
            scored.append((-max(r, 0.0), j))
        scored.sort()
        result.append([(j, -negr) for negr, j in scored[:k]])
    return result
