"""Mini-batch training with Adam or SGD, early stopping on validation MSE."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)


def loss_mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((target - pred) ** 2))


def loss_mae(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(target - pred)))


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k in sorted(grads):
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            update = self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            np.subtract(params[k], update, out=params[k])


class SGD:
    def __init__(self, lr=1e-3):
        self.lr = lr

    def step(self, params, grads) -> None:
        for k in sorted(grads):
            np.subtract(params[k], self.lr * grads[k], out=params[k])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    optimizer: str = "adam"
    seed: int = 2021

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")

    def make_optimizer(self):
        return Adam(self.learning_rate) if self.optimizer == "adam" else SGD(self.learning_rate)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    best_epoch: int = -1
    seconds: float = 0.0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def curves(self) -> tuple:
        """Everything except wall-clock time, for determinism comparisons."""
        return (tuple(self.train_loss), tuple(self.val_mse), tuple(self.val_mae), self.best_epoch)


class TrainingDiverged(RuntimeError):
    pass


def predict_batched(model, X, Z=None, chunk: int = 1024) -> np.ndarray:
    out = []
    for lo in range(0, X.shape[0], chunk):
        z = None if Z is None else Z[lo : lo + chunk]
        out.append(model.forward(np.asarray(X[lo : lo + chunk]), z))
    return np.concatenate(out, axis=0)


def _metrics(model, X, Y, Z, chunk: int = 1024) -> tuple[float, float]:
    se = 0.0
    ae = 0.0
    n = 0
    for lo in range(0, X.shape[0], chunk):
        z = None if Z is None else Z[lo : lo + chunk]
        err = model.forward(np.asarray(X[lo : lo + chunk]), z) - Y[lo : lo + chunk]
        se += float(np.sum(err * err))
        ae += float(np.sum(np.abs(err)))
        n += err.size
    return se / n, ae / n


def train(model, train_data, val_data, auxiliary=None, cfg: Optional[TrainConfig] = None):
    """Fit ``model`` in place and return ``(model, TrainReport)``.

    ``train_data``/``val_data`` are ``(X, Y)`` pairs; ``auxiliary`` is an optional
    ``(Z_train, Z_val)`` pair of precomputed continuation proxies.
    """
    cfg = cfg or TrainConfig()
    X, Y = train_data
    Xv, Yv = val_data
    Z, Zv = auxiliary if auxiliary is not None else (None, None)
    if X.shape[0] == 0 or Xv.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty")
    if (Z is not None) != model.augmented:
        raise ValueError("auxiliary streams must be given exactly when the model is augmented")

    rng = np.random.default_rng(cfg.seed)
    opt = cfg.make_optimizer()
    report = TrainReport(config=asdict(cfg))
    best = None
    best_mse = np.inf
    bad_epochs = 0
    t0 = time.perf_counter()
    n = X.shape[0]
    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            zb = None if Z is None else Z[idx]
            loss, grads = model.loss_and_grads(X[idx], Y[idx], zb)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(f"non-finite loss/gradient at epoch {epoch + 1}")
            opt.step(model.params, grads)
            losses.append(loss)
        vmse, vmae = _metrics(model, Xv, Yv, Zv)
        report.train_loss.append(float(np.mean(losses)))
        report.val_mse.append(vmse)
        report.val_mae.append(vmae)
        log.info("epoch %d train %.6f val mse %.6f mae %.6f", epoch + 1, report.train_loss[-1], vmse, vmae)
        if vmse < best_mse:
            best_mse = vmse
            best = {k: v.copy() for k, v in model.params.items()}
            report.best_epoch = epoch + 1
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    if best is not None:
        for k, v in best.items():
            model.params[k][...] = v
    report.seconds = time.perf_counter() - t0
    return model, report
