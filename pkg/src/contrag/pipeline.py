"""End-to-end experiment: data, library, continuation proxies, training, test metrics."""

from __future__ import annotations

import dataclasses
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .backbone import LinearBackbone
from .config import ExperimentConfig
from .continuation import construct_batch, train_pbcc_predictor
from .data import RawSeries, Splits, extract_chains, load_csv, make_windows, prepare
from .library import (
    RetrievalLibrary, attach_segments, build_library, load_library, save_library,
)
from .search import search_batch
from .training import TrainReport, _metrics, train

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    seed: int
    model: LinearBackbone
    report: TrainReport
    test_mse: float
    test_mae: float


class Experiment:
    """Holds the prepared data and caches the expensive, config-independent pieces.

    Several configurations that share data/library/retrieval settings can be run on
    one instance; candidate lists and proxies are cached per relevant sub-config.
    """

    def __init__(self, cfg: ExperimentConfig, series: Optional[RawSeries] = None):
        self.cfg = cfg
        if series is None:
            series = load_csv(cfg.data)
        if cfg.max_rows:
            series = RawSeries(series.values[: cfg.max_rows], list(series.column_names))
        self.series = series
        L, T = cfg.seq_len, cfg.pred_len
        self.splits, self.stats = prepare(series, cfg.split_spec(), L, T)
        self.windows = {p.name: make_windows(p, L, T) for p in self.splits}
        self._libraries: dict = {}
        self._candidates: dict = {}
        # proxies are large ([N, L, C] per split); keep only the most recent ones
        self._proxies: OrderedDict = OrderedDict()
        self.max_cached_proxies = 6
        self._predictors: dict = {}
        self.library_reused = False

    # -- library -----------------------------------------------------------

    def _check_compatible(self, cfg: ExperimentConfig) -> None:
        keys = ("data", "split", "max_rows", "seq_len", "pred_len")
        for k in keys:
            if getattr(cfg, k) != getattr(self.cfg, k):
                raise ValueError(f"config differs from the prepared experiment in {k!r}")

    def train_series(self) -> np.ndarray:
        return self.splits.train.values

    def library(self, cfg: Optional[ExperimentConfig] = None, cache_path: Optional[Path] = None) -> RetrievalLibrary:
        cfg = cfg or self.cfg
        key = (cfg.stride, cfg.epsilon, cfg.descriptor)
        if key in self._libraries:
            return self._libraries[key]
        lib = None
        sidecar = cache_path.with_suffix(".json") if cache_path else None
        if cache_path and cache_path.exists() and sidecar.exists():
            meta = json.loads(sidecar.read_text())
            if meta.get("library_key") == cfg.library_key():
                lib = load_library(cache_path)
                if lib.fingerprint != meta.get("fingerprint"):
                    lib = None
                else:
                    lib = attach_segments(lib, self.train_series(), cfg.pred_len)
                    self.library_reused = True
        if lib is None:
            chains = extract_chains(self.splits.train, cfg.seq_len, cfg.pred_len, cfg.stride)
            lib = build_library(chains, cfg.epsilon, cfg.descriptor)
            if cache_path:
                cache_path.parent.mkdir(parents=True, exist_ok=True)
                save_library(lib, cache_path)
                sidecar.write_text(json.dumps(
                    {"library_key": cfg.library_key(), "fingerprint": lib.fingerprint}, indent=2
                ))
        self._libraries[key] = lib
        return lib

    # -- continuation proxies ---------------------------------------------------

    def _split_retrieval(self, cfg: ExperimentConfig, split: str):
        rc = cfg.retrieval()
        # only train-time queries can retrieve their own chain
        if split != "train":
            rc = dataclasses.replace(rc, exclude_self_window=False)
        return rc

    def candidates(self, cfg: ExperimentConfig, split: str):
        """Top-k (indices, corr) for every window of ``split``.

        Top-k lists for smaller k are prefixes of larger ones (ties go to the smaller
        index), so one search at the largest k serves every smaller k.
        """
        lib = self.library(cfg)
        rc = self._split_retrieval(cfg, split)
        key = (cfg.stride, cfg.epsilon, cfg.descriptor, dataclasses.replace(rc, k=1), split)
        cached = self._candidates.get(key)
        if cached is None or cached[0].shape[2] < min(rc.k, len(lib)):
            w = self.windows[split]
            cached = search_batch(w.X, lib, rc, w.starts, cfg.pred_len)
            self._candidates[key] = cached
        idx, corr = cached
        k = min(rc.k, len(lib))
        if idx.shape[2] == k:
            return idx, corr
        return np.ascontiguousarray(idx[:, :, :k]), np.ascontiguousarray(corr[:, :, :k])

    def _predictor(self, cfg: ExperimentConfig):
        key = (cfg.kernel, cfg.individual, cfg.learning_rate, cfg.batch_size,
               cfg.max_epochs, cfg.patience, cfg.optimizer, cfg.seeds[0])
        if key not in self._predictors:
            L, T = cfg.seq_len, cfg.pred_len
            chains = extract_chains(self.splits.train, L, T, cfg.stride)
            val = self.splits.val
            val_chains = extract_chains(val, L, T) if len(val) >= 2 * L + T else None
            self._predictors[key] = train_pbcc_predictor(
                chains, L, cfg.train_config(cfg.seeds[0]), val_chains,
                kernel=cfg.kernel, individual=cfg.individual,
            )
        return self._predictors[key]

    def proxy(self, cfg: ExperimentConfig, split: str, return_details: bool = False):
        """Continuation proxy Z for every window of ``split``."""
        self._check_compatible(cfg)
        cc = cfg.continuation()
        rc = self._split_retrieval(cfg, split)
        key = (split, cc, rc, cfg.stride, cfg.epsilon, cfg.descriptor)
        if cc.variant == "pbcc":
            key += (cfg.kernel, cfg.individual, cfg.learning_rate, cfg.batch_size,
                    cfg.max_epochs, cfg.patience, cfg.optimizer, cfg.seeds[0])
        if key in self._proxies and not return_details:
            self._proxies.move_to_end(key)
            return self._proxies[key]
        w = self.windows[split]
        if cc.variant == "pbcc":
            out = construct_batch(w.X, None, rc, cc, w.starts, cfg.pred_len,
                                  predictor=self._predictor(cfg), return_details=return_details)
        else:
            lib = self.library(cfg)
            cands = None if cc.variant == "random_retrieval" else self.candidates(cfg, split)
            out = construct_batch(w.X, lib, rc, cc, w.starts, cfg.pred_len,
                                  candidates=cands, return_details=return_details)
        if return_details:
            return out
        self._proxies[key] = out
        while len(self._proxies) > self.max_cached_proxies:
            self._proxies.popitem(last=False)
        return out

    # -- training / evaluation -------------------------------------------------

    def _inputs(self, cfg: ExperimentConfig, split: str):
        w = self.windows[split]
        if cfg.baseline:
            return w.X, None
        Z = self.proxy(cfg, split)
        if cfg.fusion == "concat":
            return np.concatenate([w.X, Z], axis=1), None
        return w.X, Z

    def make_model(self, cfg: ExperimentConfig, seed: int) -> LinearBackbone:
        L = cfg.seq_len * (2 if (cfg.fusion == "concat" and not cfg.baseline) else 1)
        gate = None if (cfg.baseline or cfg.fusion == "concat") else cfg.gate
        return LinearBackbone(
            L, cfg.pred_len, self.series.n_channels, kernel=cfg.kernel,
            individual=cfg.individual, gate=gate, alpha=cfg.alpha,
            gate_per_stream=cfg.gate_per_stream, seed=seed,
        )

    def run(self, cfg: Optional[ExperimentConfig] = None, seed: Optional[int] = None) -> RunResult:
        cfg = cfg or self.cfg
        self._check_compatible(cfg)
        seed = cfg.seeds[0] if seed is None else seed
        X, Z = self._inputs(cfg, "train")
        Xv, Zv = self._inputs(cfg, "val")
        Xt, Zt = self._inputs(cfg, "test")
        wtr, wv, wt = self.windows["train"], self.windows["val"], self.windows["test"]
        model = self.make_model(cfg, seed)
        aux = None if Z is None else (Z, Zv)
        model, report = train(model, (X, wtr.Y), (Xv, wv.Y), aux, cfg.train_config(seed))
        mse, mae = _metrics(model, Xt, wt.Y, Zt)
        report.config = cfg.to_dict()
        return RunResult(seed, model, report, mse, mae)

    def evaluate(self, model: LinearBackbone, cfg: Optional[ExperimentConfig] = None, split: str = "test"):
        cfg = cfg or self.cfg
        X, Z = self._inputs(cfg, split)
        return _metrics(model, X, self.windows[split].Y, Z)
