"""Train-only retrieval library of offset-anchored history keys and continuation descriptors."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Chain

DESCRIPTORS = ("ratio", "residual")


def signed_unit(x: np.ndarray) -> np.ndarray:
    """sign(x) with sign(0) = +1, so ``x + eps * signed_unit(x)`` never vanishes."""
    return np.where(x < 0, -1.0, 1.0)


def ratio(H: np.ndarray, F: np.ndarray, epsilon: float = 1e-4) -> np.ndarray:
    """Relative change of the continuation with respect to its history."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    H = np.asarray(H, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    if H.shape != F.shape:
        raise ValueError(f"shape mismatch {H.shape} vs {F.shape}")
    return (F - H) / (H + epsilon * signed_unit(H))


def invert_ratio(H: np.ndarray, R: np.ndarray, epsilon: float) -> np.ndarray:
    return H + R * (H + epsilon * signed_unit(H))


def residual_descriptor(H: np.ndarray, F: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    if H.shape != F.shape:
        raise ValueError(f"shape mismatch {H.shape} vs {F.shape}")
    return F - H


def offset_last_step(W: np.ndarray) -> np.ndarray:
    """Subtract the final time step from every step; works on [..., L, C]."""
    W = np.asarray(W, dtype=np.float64)
    return W - W[..., -1:, :]


@dataclass(frozen=True, eq=False)
class RetrievalLibrary:
    keys: np.ndarray  # [N, L, C]
    values: np.ndarray  # [N, L, C]
    source_start: np.ndarray  # [N] int64
    epsilon: float
    descriptor: str
    fingerprint: str
    # Raw segments for the direct-continuation / target ablations. Not persisted;
    # reattach with ``attach_segments`` after loading.
    continuations: Optional[np.ndarray] = None  # [N, L, C]
    targets: Optional[np.ndarray] = None  # [N, T, C]

    def __post_init__(self):
        for arr in (self.keys, self.values, self.source_start):
            arr.setflags(write=False)

    def __len__(self):
        return self.keys.shape[0]

    @property
    def L(self) -> int:
        return self.keys.shape[1]

    @property
    def C(self) -> int:
        return self.keys.shape[2]

    def entry(self, i: int) -> tuple[np.ndarray, np.ndarray, int]:
        return self.keys[i], self.values[i], int(self.source_start[i])


def _fingerprint(H, Y, F, starts, epsilon, descriptor) -> str:
    h = hashlib.sha256()
    h.update(struct.pack("<4q", H.shape[1], H.shape[2], Y.shape[1], len(starts)))
    h.update(struct.pack("<d", epsilon))
    h.update(descriptor.encode())
    for arr in (starts.astype("<i8"), H, F):
        h.update(np.ascontiguousarray(arr, dtype="<f8" if arr.dtype.kind == "f" else None).tobytes())
    return h.hexdigest()


def build_library(
    chains: Sequence[Chain], epsilon: float = 1e-4, descriptor: str = "ratio"
) -> RetrievalLibrary:
    if not chains:
        raise ValueError("cannot build a library from zero chains")
    if descriptor not in DESCRIPTORS:
        raise ValueError(f"descriptor must be one of {DESCRIPTORS}, got {descriptor!r}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    shapes = {(c.H.shape, c.Y.shape, c.F.shape) for c in chains}
    if len(shapes) != 1:
        raise ValueError(f"chains have heterogeneous shapes: {sorted(shapes)}")
    order = sorted(range(len(chains)), key=lambda i: chains[i].start_index)
    H = np.stack([chains[i].H for i in order]).astype(np.float64)
    Y = np.stack([chains[i].Y for i in order]).astype(np.float64)
    F = np.stack([chains[i].F for i in order]).astype(np.float64)
    starts = np.array([chains[i].start_index for i in order], dtype=np.int64)
    if descriptor == "ratio":
        values = ratio(H, F, epsilon)
    else:
        values = residual_descriptor(H, F)
    return RetrievalLibrary(
        keys=offset_last_step(H),
        values=values,
        source_start=starts,
        epsilon=float(epsilon),
        descriptor=descriptor,
        fingerprint=_fingerprint(H, Y, F, starts, epsilon, descriptor),
        continuations=F,
        targets=Y,
    )


def attach_segments(lib: RetrievalLibrary, series: np.ndarray, T: int) -> RetrievalLibrary:
    """Re-cut raw targets/continuations for each entry from the (standardized) series."""
    L = lib.L
    s = lib.source_start
    idx_y = s[:, None] + L + np.arange(T)
    idx_f = s[:, None] + L + T + np.arange(L)
    return RetrievalLibrary(
        lib.keys, lib.values, lib.source_start, lib.epsilon, lib.descriptor,
        lib.fingerprint, continuations=series[idx_f], targets=series[idx_y],
    )


# Binary layout (little endian):
#   magic "CRLB" | u16 version | u8 descriptor | u8 float width (4|8)
#   u32 L | u32 C | u64 N | f64 epsilon | 32-byte sha256 fingerprint
#   N records of key[L*C] then value[L*C], row-major
#   N int64 source_start values
MAGIC = b"CRLB"
VERSION = 1
_HEADER = struct.Struct("<4sHBBIIQd32s")


class LibraryFormatError(ValueError):
    pass


def save_library(lib: RetrievalLibrary, path, float32: bool = False) -> None:
    width = 4 if float32 else 8
    dtype = "<f4" if float32 else "<f8"
    header = _HEADER.pack(
        MAGIC, VERSION, DESCRIPTORS.index(lib.descriptor), width,
        lib.L, lib.C, len(lib), lib.epsilon, bytes.fromhex(lib.fingerprint),
    )
    body = np.concatenate(
        [lib.keys.reshape(len(lib), -1), lib.values.reshape(len(lib), -1)], axis=1
    ).astype(dtype)
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())
        fh.write(lib.source_start.astype("<i8").tobytes())


def load_library(path) -> RetrievalLibrary:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise LibraryFormatError(f"{path}: truncated header")
    magic, version, desc, width, L, C, N, eps, fp = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise LibraryFormatError(f"{path}: bad magic {magic!r}, not a library file")
    if version != VERSION:
        raise LibraryFormatError(f"{path}: unsupported library version {version}")
    if width not in (4, 8) or desc >= len(DESCRIPTORS):
        raise LibraryFormatError(f"{path}: corrupt header")
    n_body = N * 2 * L * C * width
    expected = _HEADER.size + n_body + 8 * N
    if len(raw) < expected:
        raise LibraryFormatError(
            f"{path}: truncated, header declares {N} entries ({expected} bytes), file has {len(raw)}"
        )
    body = np.frombuffer(raw, dtype="<f4" if width == 4 else "<f8", count=N * 2 * L * C,
                         offset=_HEADER.size).astype(np.float64).reshape(N, 2, L, C)
    starts = np.frombuffer(raw, dtype="<i8", count=N, offset=_HEADER.size + n_body).astype(np.int64)
    return RetrievalLibrary(
        keys=body[:, 0].copy(),
        values=body[:, 1].copy(),
        source_start=starts,
        epsilon=eps,
        descriptor=DESCRIPTORS[desc],
        fingerprint=fp.hex(),
    )
