"""Moving-average decomposition plus linear maps, with an optional auxiliary stream
fused into the seasonal and trend components."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import uniform_filter1d

from . import fusion
from .fusion import GateParams


def decompose(X: np.ndarray, kernel: int = 25) -> tuple[np.ndarray, np.ndarray]:
    """Split [..., L, C] into (seasonal, trend) with a replicate-padded centered moving average."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be a positive odd integer, got {kernel}")
    X = np.asarray(X, dtype=np.float64)
    if kernel == 1:
        return np.zeros_like(X), X.copy()
    # mode="nearest" repeats the edge rows, i.e. the replicate padding
    trend = uniform_filter1d(X, kernel, axis=-2, mode="nearest")
    return X - trend, trend


class LinearBackbone:
    """Seasonal/trend linear forecaster on [B, L, C] inputs.

    Weights act along time and are shared across channels unless ``individual``.
    Passing ``gate="static"|"dynamic"`` makes the model accept an auxiliary
    window Z of the same shape as X.
    """

    def __init__(
        self,
        seq_len: int,
        pred_len: int,
        n_channels: int,
        kernel: int = 25,
        individual: bool = False,
        gate: Optional[str] = None,
        alpha: float = 0.75,
        gate_per_stream: bool = False,
        seed: int = 0,
    ):
        if kernel < 1 or kernel % 2 == 0:
            raise ValueError(f"kernel must be a positive odd integer, got {kernel}")
        self.seq_len = seq_len
        self.pred_len = pred_len
        self.n_channels = n_channels
        self.kernel = kernel
        self.individual = individual
        self.gate_mode = gate
        self.gate_per_stream = gate_per_stream
        rng = np.random.default_rng(seed)
        shape = (n_channels, pred_len, seq_len) if individual else (pred_len, seq_len)
        bshape = (n_channels, pred_len) if individual else (pred_len,)
        bound = 1.0 / seq_len
        self.params: dict[str, np.ndarray] = {
            "W_s": rng.uniform(-bound, bound, size=shape),
            "b_s": np.zeros(bshape),
            "W_t": rng.uniform(-bound, bound, size=shape),
            "b_t": np.zeros(bshape),
        }
        self.gates: dict[str, GateParams] = {}
        if gate is not None:
            streams = ("s", "t") if gate_per_stream else ("",)
            for name in streams:
                gp = GateParams(mode=gate, alpha=alpha, n_channels=n_channels)
                self.gates[name] = gp
                for k, arr in gp.arrays().items():
                    self.params[f"gate{name}.{k}"] = arr

    @property
    def augmented(self) -> bool:
        return self.gate_mode is not None

    @property
    def alpha(self) -> Optional[float]:
        return next(iter(self.gates.values())).alpha if self.gates else None

    def set_alpha(self, alpha: float) -> None:
        fusion.check_alpha(alpha)
        for gp in self.gates.values():
            gp.alpha = alpha

    def _gate_for(self, stream: str) -> GateParams:
        return self.gates[stream] if self.gate_per_stream else self.gates[""]

    def _linear(self, W, b, x):
        # x: [B, L, C] -> [B, T, C]
        if self.individual:
            return np.einsum("ctl,blc->btc", W, x) + b.T[None]
        B, L, C = x.shape
        flat = x.transpose(0, 2, 1).reshape(B * C, L)
        out = flat @ W.T + b
        return out.reshape(B, C, -1).transpose(0, 2, 1)

    def _features(self, X, Z, decomposed):
        if decomposed is not None:
            return decomposed
        s, t = decompose(X, self.kernel)
        if Z is None:
            return s, t, None, None
        sz, tz = decompose(Z, self.kernel)
        return s, t, sz, tz

    def forward(self, X, Z=None, decomposed=None, return_cache: bool = False):
        """Predict [B, T, C] from X [B, L, C] (and Z when augmented).

        ``decomposed`` may pass precomputed ``(s, t, sz, tz)``.
        """
        if decomposed is None:
            X = np.asarray(X, dtype=np.float64)
            if X.ndim != 3 or X.shape[1:] != (self.seq_len, self.n_channels):
                raise ValueError(
                    f"expected input [B, {self.seq_len}, {self.n_channels}], got {X.shape}"
                )
        if Z is not None and not self.augmented and decomposed is None:
            raise ValueError("auxiliary input given but the model has no gate parameters")
        if self.augmented and Z is None and (decomposed is None or decomposed[2] is None):
            raise ValueError("augmented model needs an auxiliary input Z")
        s, t, sz, tz = self._features(X, Z, decomposed)
        cache = {"s": s, "t": t}
        if sz is not None:
            gs = fusion.gate(s, sz, self._gate_for("s"))
            gt = fusion.gate(t, tz, self._gate_for("t"))
            s_f = fusion.fuse(s, sz, gs, self._gate_for("s").alpha)
            t_f = fusion.fuse(t, tz, gt, self._gate_for("t").alpha)
            cache.update(sz=sz, tz=tz, gs=gs, gt=gt)
        else:
            s_f, t_f = s, t
        cache.update(s_f=s_f, t_f=t_f)
        p = self.params
        Y = self._linear(p["W_s"], p["b_s"], s_f) + self._linear(p["W_t"], p["b_t"], t_f)
        return (Y, cache) if return_cache else Y

    def predict(self, X, Z=None) -> np.ndarray:
        return self.forward(X, Z)

    def _linear_grads(self, dY, x):
        if self.individual:
            return np.einsum("btc,blc->ctl", dY, x), dY.sum(axis=0).T
        B, T, C = dY.shape
        dflat = dY.transpose(0, 2, 1).reshape(B * C, T)
        xflat = x.transpose(0, 2, 1).reshape(B * C, -1)
        return dflat.T @ xflat, dflat.sum(axis=0)

    def _input_grad(self, W, dY):
        if self.individual:
            return np.einsum("ctl,btc->blc", W, dY)
        B, T, C = dY.shape
        dflat = dY.transpose(0, 2, 1).reshape(B * C, T)
        return (dflat @ W).reshape(B, C, -1).transpose(0, 2, 1)

    def loss_and_grads(self, X, Y, Z=None, decomposed=None, scale: float = 1.0):
        """MSE loss (times ``scale``) and its gradient for every parameter."""
        pred, cache = self.forward(X, Z, decomposed, return_cache=True)
        Y = np.asarray(Y, dtype=np.float64)
        err = pred - Y
        loss = scale * float(np.mean(err * err))
        dY = (2.0 * scale / err.size) * err
        grads = {}
        grads["W_s"], grads["b_s"] = self._linear_grads(dY, cache["s_f"])
        grads["W_t"], grads["b_t"] = self._linear_grads(dY, cache["t_f"])
        if "sz" in cache:
            ds_f = self._input_grad(self.params["W_s"], dY)
            dt_f = self._input_grad(self.params["W_t"], dY)
            parts = [
                ("s", fusion.fuse_backward(ds_f, cache["s"], cache["sz"], cache["gs"], self._gate_for("s"))),
                ("t", fusion.fuse_backward(dt_f, cache["t"], cache["tz"], cache["gt"], self._gate_for("t"))),
            ]
            for stream, g in parts:
                prefix = f"gate{stream}." if self.gate_per_stream else "gate."
                for k in self._gate_for(stream).arrays():
                    key = prefix + k
                    grads[key] = grads[key] + g[k] if key in grads else g[k]
        return loss, grads

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path) -> "LinearBackbone":
        return load_checkpoint(path)


# Checkpoint layout (little endian):
#   magic "CRCK" | u16 version | u32 L | u32 T | u32 C | u32 kernel
#   u8 individual | u8 gate mode (0 none, 1 static, 2 dynamic) | u8 per-stream | f64 alpha
#   u32 number of tensors, then per tensor: u16 name length, name (utf-8),
#   u8 ndim, u32 dims..., float64 data (row-major)
CKPT_MAGIC = b"CRCK"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHIIIIBBBd")


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: LinearBackbone, path) -> None:
    mode = {None: 0, "static": 1, "dynamic": 2}[model.gate_mode]
    alpha = model.alpha if model.alpha is not None else 1.0
    chunks = [
        _CKPT_HEADER.pack(
            CKPT_MAGIC, CKPT_VERSION, model.seq_len, model.pred_len, model.n_channels,
            model.kernel, int(model.individual), mode, int(model.gate_per_stream), alpha,
        ),
        struct.pack("<I", len(model.params)),
    ]
    for name in sorted(model.params):
        arr = np.asarray(model.params[name], dtype="<f8")
        raw = name.encode()
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> LinearBackbone:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size + 4:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, L, T, C, kernel, indiv, mode, per_stream, alpha = _CKPT_HEADER.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    gate = {0: None, 1: "static", 2: "dynamic"}[mode]
    model = LinearBackbone(L, T, C, kernel=kernel, individual=bool(indiv), gate=gate,
                           alpha=alpha, gate_per_stream=bool(per_stream))
    pos = _CKPT_HEADER.size
    (n,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    try:
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos : pos + ln].decode()
            pos += ln
            (ndim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 8 * size > len(raw):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            arr = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            if name not in model.params:
                raise CheckpointError(f"{path}: unexpected tensor {name!r}")
            model.params[name][...] = arr
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return model
