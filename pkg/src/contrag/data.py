"""CSV ingestion, train-only standardization, chronological splits and window cutting."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DataError(ValueError):
    """Raised for unreadable or structurally invalid series data."""


@dataclass(frozen=True)
class RawSeries:
    values: np.ndarray  # [total_length, C]
    column_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DataError(f"series must be 2-D [time, channels], got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("series contains missing or non-finite values")
        object.__setattr__(self, "values", v)
        if not self.column_names:
            object.__setattr__(self, "column_names", [f"c{i}" for i in range(v.shape[1])])

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


def load_csv(path, drop_first_column: bool = True) -> RawSeries:
    """Read a numeric CSV with a header row.

    The first column (a timestamp in ETT-format files) is dropped unless
    ``drop_first_column`` is False. Every remaining cell must parse as a float;
    the error message names the offending row (1-based, header is row 1) and column.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        first = 1 if drop_first_column else 0
        names = [h.strip() for h in header[first:]]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            parsed = []
            for j in range(first, len(row)):
                cell = row[j].strip()
                try:
                    x = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {j + 1} ({header[j].strip()!r}): "
                        f"cannot parse {cell!r} as a number"
                    ) from None
                if not math.isfinite(x):
                    raise DataError(
                        f"{path}: row {lineno}, column {j + 1} ({header[j].strip()!r}): "
                        f"missing or non-finite value {cell!r}"
                    )
                parsed.append(x)
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return RawSeries(np.array(rows, dtype=np.float64), names)


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "ChannelStats":
        values = np.asarray(values, dtype=np.float64)
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        constant = std == 0
        if np.any(constant):
            warnings.warn(
                f"constant channel(s) {np.flatnonzero(constant).tolist()} in the fitting "
                "partition; using std = 1",
                RuntimeWarning,
                stacklevel=2,
            )
            std = np.where(constant, 1.0, std)
        return cls(mean, std)


def standardize(series: RawSeries, stats: ChannelStats) -> RawSeries:
    return RawSeries((series.values - stats.mean) / stats.std, list(series.column_names))


# Standard ETT protocol: 12/4/4 months of hourly (or 15-minute) records. The tail of
# the file beyond 20 months is unused.
_ETT_MONTH_HOURS = 30 * 24


@dataclass(frozen=True)
class SplitSpec:
    """Chronological split definition.

    ``protocol="ratio"`` cuts ``floor(n*train)`` / remainder / ``floor(n*test)`` rows.
    ``protocol="ett-hour"`` and ``"ett-minute"`` use the fixed 12/4/4-month borders
    that the published ETT results are computed on; the ratios are then informational.
    """

    train_ratio: float = 0.7
    val_ratio: float = 0.1
    test_ratio: float = 0.2
    protocol: str = "ratio"

    def __post_init__(self):
        ratios = (self.train_ratio, self.val_ratio, self.test_ratio)
        if any(r <= 0 for r in ratios):
            raise ValueError(f"split ratios must be positive, got {ratios}")
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {sum(ratios):.6g}")
        if self.protocol not in ("ratio", "ett-hour", "ett-minute"):
            raise ValueError(f"unknown split protocol {self.protocol!r}")

    @classmethod
    def parse(cls, text: str) -> "SplitSpec":
        """Parse ``"6:2:2"``, ``"7:1:2"``, ``"ett-hour"`` or ``"ett-minute"``."""
        text = text.strip()
        if text in ("ett-hour", "ett-minute"):
            return cls(0.6, 0.2, 0.2, protocol=text)
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"split must look like 6:2:2, got {text!r}")
        nums = [float(p) for p in parts]
        # fractions (0.7:0.1:0.2), tenths (7:1:2) or percentages (70:10:20)
        total = sum(nums)
        for scale in (1.0, 10.0, 100.0):
            if abs(total - scale) <= 1e-9 * scale:
                return cls(*(n / scale for n in nums))
        raise ValueError(f"split parts must sum to 1, 10 or 100, got {text!r}")

    def borders(self, n: int, L: int) -> list[tuple[int, int]]:
        """Row ranges ``[(start, stop)]`` for train, val, test; val/test start L rows early."""
        if self.protocol == "ratio":
            n_train = math.floor(n * self.train_ratio + 1e-9)
            n_test = math.floor(n * self.test_ratio + 1e-9)
            n_val = n - n_train - n_test
            b1 = [0, n_train - L, n - n_test - L]
            b2 = [n_train, n_train + n_val, n]
        else:
            unit = _ETT_MONTH_HOURS * (4 if self.protocol == "ett-minute" else 1)
            b1 = [0, 12 * unit - L, 16 * unit - L]
            b2 = [12 * unit, 16 * unit, 20 * unit]
            if b2[2] > n:
                raise DataError(
                    f"{self.protocol} split needs {b2[2]} rows, series has {n}"
                )
        return list(zip(b1, b2))


@dataclass(frozen=True)
class Partition:
    values: np.ndarray  # [rows, C]
    start: int  # global row index of values[0]
    name: str = ""

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class Splits:
    train: Partition
    val: Partition
    test: Partition

    def __iter__(self):
        return iter((self.train, self.val, self.test))


def split(series: RawSeries, spec: SplitSpec, L: int, T: int = 1) -> Splits:
    """Chronological, non-shuffled three-way split with L rows of look-back overlap."""
    n = series.length
    parts = []
    for name, (a, b) in zip(("train", "val", "test"), spec.borders(n, L)):
        if a < 0 or b - a < L + T:
            raise DataError(
                f"{name} partition rows [{a}, {b}) too short for L={L}, T={T}"
            )
        parts.append(Partition(series.values[a:b], a, name))
    return Splits(*parts)


def prepare(series: RawSeries, spec: SplitSpec, L: int, T: int) -> tuple[Splits, ChannelStats]:
    """Split, fit standardization on the train partition and apply it to all three."""
    raw = split(series, spec, L, T)
    stats = ChannelStats.fit(raw.train.values)
    scaled = [
        Partition((p.values - stats.mean) / stats.std, p.start, p.name) for p in raw
    ]
    return Splits(*scaled), stats


@dataclass(frozen=True)
class Chain:
    H: np.ndarray  # [L, C]
    Y: np.ndarray  # [T, C]
    F: np.ndarray  # [L, C]
    start_index: int


def extract_chains(train: Partition | np.ndarray, L: int, T: int, stride: int = 1) -> list[Chain]:
    if isinstance(train, Partition):
        values, offset = train.values, train.start
    else:
        values, offset = np.asarray(train, dtype=np.float64), 0
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = values.shape[0]
    if n < 2 * L + T:
        raise DataError(f"partition of length {n} shorter than 2L+T={2 * L + T}")
    chains = []
    for s in range(0, n - (2 * L + T) + 1, stride):
        chains.append(
            Chain(
                values[s : s + L],
                values[s + L : s + L + T],
                values[s + L + T : s + 2 * L + T],
                offset + s,
            )
        )
    return chains


@dataclass(frozen=True)
class QueryWindow:
    X: np.ndarray
    Y_true: np.ndarray
    F_true: Optional[np.ndarray]
    start_index: int


@dataclass(frozen=True)
class WindowSet:
    """All (X, Y) windows of a partition at stride 1, as strided views.

    ``F`` holds the post-target continuation for the leading windows that have one
    inside the partition (``has_F`` marks them).
    """

    X: np.ndarray  # [N, L, C]
    Y: np.ndarray  # [N, T, C]
    starts: np.ndarray  # [N] global start index
    F: np.ndarray  # [N_F, L, C], N_F <= N
    name: str = ""

    def __len__(self):
        return self.X.shape[0]

    @property
    def has_F(self) -> np.ndarray:
        mask = np.zeros(len(self), dtype=bool)
        mask[: self.F.shape[0]] = True
        return mask

    def __getitem__(self, i: int) -> QueryWindow:
        f = self.F[i] if i < self.F.shape[0] else None
        return QueryWindow(self.X[i], self.Y[i], f, int(self.starts[i]))

    def __iter__(self) -> Iterator[QueryWindow]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> "WindowSet":
        # continuations survive only if every selected window has one
        idx = np.flatnonzero(idx) if np.asarray(idx).dtype == bool else np.asarray(idx)
        if len(idx) and idx.max() < self.F.shape[0]:
            F = self.F[idx]
        else:
            F = np.empty((0,) + self.X.shape[1:])
        return WindowSet(self.X[idx], self.Y[idx], self.starts[idx], F, self.name)

    def head(self, n: int) -> "WindowSet":
        return WindowSet(
            self.X[:n], self.Y[:n], self.starts[:n], self.F[: min(n, self.F.shape[0])], self.name
        )


def make_windows(part: Partition, L: int, T: int) -> WindowSet:
    """Cut every stride-1 query window; count is ``len(part) - L - T + 1``."""
    v = part.values
    n = v.shape[0]
    count = n - L - T + 1
    if count < 1:
        raise DataError(f"partition {part.name!r} of length {n} too short for L+T={L + T}")
    # sliding_window_view yields [n-w+1, C, w]; move the window axis to the middle
    X = sliding_window_view(v, L, axis=0).transpose(0, 2, 1)[:count]
    Y = sliding_window_view(v[L:], T, axis=0).transpose(0, 2, 1)[:count]
    n_f = max(0, n - 2 * L - T + 1)
    F = sliding_window_view(v[L + T :], L, axis=0).transpose(0, 2, 1)[:n_f] if n_f else np.empty((0, L, v.shape[1]))
    starts = part.start + np.arange(count)
    return WindowSet(X, Y, starts, F, part.name)
