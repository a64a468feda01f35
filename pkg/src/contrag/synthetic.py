"""Seeded multivariate series with daily/weekly cycles, drift and regime changes."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def make_series(n: int = 4000, n_channels: int = 7, seed: int = 0, noise: float = 0.3) -> np.ndarray:
    """Hourly-like series: shared 24/168-step cycles with per-channel phase and amplitude,
    a slow random-walk level, and occasional level shifts."""
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64)[:, None]
    amp_d = rng.uniform(0.5, 2.0, n_channels)
    amp_w = rng.uniform(0.2, 1.0, n_channels)
    phase = rng.uniform(0, 2 * np.pi, n_channels)
    daily = amp_d * np.sin(2 * np.pi * t / 24 + phase)
    weekly = amp_w * np.sin(2 * np.pi * t / 168 + phase / 2)
    level = np.cumsum(rng.normal(0, 0.02, (n, n_channels)), axis=0)
    shifts = np.zeros((n, n_channels))
    for at in rng.choice(n, size=max(1, n // 1500), replace=False):
        shifts[at:] += rng.normal(0, 1.0, n_channels)
    base = 10.0 + rng.uniform(-3, 3, n_channels)
    return base + daily + weekly + level + shifts + rng.normal(0, noise, (n, n_channels))


def write_csv(path, values: np.ndarray, start: str = "2016-07-01") -> Path:
    """Write an ETT-style CSV: a ``date`` column followed by one column per channel."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = np.datetime64(f"{start}T00:00")
    names = [f"c{i}" for i in range(values.shape[1] - 1)] + ["OT"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *names])
        for i, row in enumerate(values):
            stamp = str(base + np.timedelta64(i, "h")).replace("T", " ")
            w.writerow([stamp, *(f"{v:.6f}" for v in row)])
    return path
