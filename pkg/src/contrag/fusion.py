"""Gated fusion of a main and an auxiliary feature stream with a residual coefficient.

Features are arrays whose second-to-last axis is time, e.g. [B, L, C].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

GATE_MODES = ("static", "dynamic")


@dataclass
class GateParams:
    mode: str = "static"
    alpha: float = 0.75
    n_channels: int = 1
    g: np.ndarray = field(default_factory=lambda: np.array(0.0))
    phi_W: Optional[np.ndarray] = None  # [C, 2C]
    phi_b: Optional[np.ndarray] = None  # [C]

    def __post_init__(self):
        if self.mode not in GATE_MODES:
            raise ValueError(f"gate mode must be one of {GATE_MODES}, got {self.mode!r}")
        check_alpha(self.alpha)
        C = self.n_channels
        if self.mode == "dynamic":
            if self.phi_W is None:
                self.phi_W = np.zeros((C, 2 * C))
            if self.phi_b is None:
                self.phi_b = np.zeros(C)

    def arrays(self) -> dict[str, np.ndarray]:
        if self.mode == "static":
            return {"g": self.g}
        return {"phi_W": self.phi_W, "phi_b": self.phi_b}


def check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")


def summaries(main: np.ndarray, aux: np.ndarray) -> np.ndarray:
    """Temporal means of both streams, concatenated: [..., 2C]."""
    return np.concatenate([main.mean(axis=-2), aux.mean(axis=-2)], axis=-1)


def gate(main: np.ndarray, aux: np.ndarray, params: GateParams) -> np.ndarray:
    if np.shape(main) != np.shape(aux):
        raise ValueError(f"feature shapes differ: {np.shape(main)} vs {np.shape(aux)}")
    if params.mode == "static":
        return np.asarray(expit(params.g))
    z = summaries(main, aux) @ params.phi_W.T + params.phi_b
    return expit(z)[..., None, :]


def fuse(main: np.ndarray, aux: np.ndarray, gamma, alpha: float) -> np.ndarray:
    """Return alpha*main + (1-alpha)*(gamma*main + (1-gamma)*aux).

    Evaluated as ``main - (1-alpha)(1-gamma)(main - aux)`` so that alpha = 1 and
    aux == main both return ``main`` bit-for-bit; a mixing weight of exactly 1 on
    aux returns ``aux`` bit-for-bit.
    """
    check_alpha(alpha)
    main = np.asarray(main, dtype=np.float64)
    aux = np.asarray(aux, dtype=np.float64)
    if main.shape != aux.shape:
        raise ValueError(f"feature shapes differ: {main.shape} vs {aux.shape}")
    d = (1.0 - alpha) * (1.0 - np.asarray(gamma, dtype=np.float64))
    if d.ndim == 0:
        if d == 0.0:
            return main
        if d == 1.0:
            return aux
        return main - d * (main - aux)
    out = main - d * (main - aux)
    return np.where(d == 1.0, aux, np.where(d == 0.0, main, out))


def main_weight(gamma, alpha: float):
    return alpha + (1.0 - alpha) * np.asarray(gamma)


def fuse_backward(
    upstream: np.ndarray, main: np.ndarray, aux: np.ndarray, gamma, params: GateParams
) -> dict[str, np.ndarray]:
    """Gradients of ``sum(upstream * fuse(main, aux, gate(main, aux)))``."""
    alpha = params.alpha
    gamma = np.asarray(gamma)
    d = (1.0 - alpha) * (1.0 - gamma)
    diff = main - aux
    d_main = upstream * (1.0 - d)
    d_aux = upstream * d
    # d X'/d gamma = (1 - alpha) * (main - aux)
    g_gamma = upstream * ((1.0 - alpha) * diff)
    grads = {}
    if params.mode == "static":
        s = float(gamma)
        grads["g"] = np.asarray(g_gamma.sum() * s * (1.0 - s))
    else:
        dz = g_gamma.sum(axis=-2) * (gamma[..., 0, :] * (1.0 - gamma[..., 0, :]))  # [..., C]
        u = summaries(main, aux)
        dz2 = dz.reshape(-1, dz.shape[-1])
        grads["phi_W"] = dz2.T @ u.reshape(-1, u.shape[-1])
        grads["phi_b"] = dz2.sum(axis=0)
        du = dz @ params.phi_W  # [..., 2C]
        C = dz.shape[-1]
        L = main.shape[-2]
        d_main = d_main + du[..., None, :C] / L
        d_aux = d_aux + du[..., None, C:] / L
    grads["main"] = d_main
    grads["aux"] = d_aux
    return grads
