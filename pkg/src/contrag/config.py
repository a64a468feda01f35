"""Flat experiment configuration, parsed from TOML and overridden by CLI flags."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .continuation import VARIANT_ALIASES, VARIANTS, ContinuationConfig
from .data import SplitSpec
from .library import DESCRIPTORS
from .search import RetrievalConfig
from .training import TrainConfig

ALPHA_GRID = (0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.9, 0.95, 1.0)
TOPK_GRID = (1, 3, 5, 7, 9)
TAU_GRID = (0.01, 0.05, 0.1, 0.15, 1.0, 5.0, 10.0)

# fields that do not influence numbers and stay out of the config hash
_UNHASHED = {"out_dir", "threads"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # data
    data: str = ""
    split: str = "7:1:2"
    max_rows: int = 0  # 0 = whole file
    seq_len: int = 336
    pred_len: int = 96
    # library
    stride: int = 1
    epsilon: float = 1e-4
    descriptor: str = "ratio"
    # retrieval
    top_k: int = 1
    exclude_self: bool = True
    exclusion_radius: int = -1  # -1 = seq_len + pred_len
    # continuation
    variant: str = "ratio"  # or "baseline" for the plain backbone
    tau: float = 0.01
    clip_q: float = 0.9
    clip: bool = True
    epsilon_s: float = 1e-8
    align_epsilon: float = 1e-8
    retrieval_seed: int = 0
    # fusion / backbone
    fusion: str = "gate"  # gate | concat
    gate: str = "static"
    alpha: float = 0.75
    gate_per_stream: bool = False
    kernel: int = 25
    individual: bool = False
    # training
    learning_rate: float = 0.005
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    optimizer: str = "adam"
    seeds: tuple = (2021,)
    # evaluation / runtime
    corr_mode: str = "pooled"
    out_dir: str = "out"
    threads: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "variant", VARIANT_ALIASES.get(self.variant, self.variant))
        try:
            self.validate()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self) -> None:
        SplitSpec.parse(self.split)
        if self.seq_len < 2 or self.pred_len < 1:
            raise ConfigError("seq_len must be >= 2 and pred_len >= 1")
        if self.descriptor not in DESCRIPTORS:
            raise ConfigError(f"descriptor must be one of {DESCRIPTORS}")
        if self.variant != "baseline" and self.variant not in VARIANTS:
            raise ConfigError(f"variant must be baseline or one of {VARIANTS}")
        if self.variant == "residual" and self.descriptor != "residual":
            object.__setattr__(self, "descriptor", "residual")
        if self.fusion not in ("gate", "concat"):
            raise ConfigError("fusion must be gate or concat")
        if self.gate not in ("static", "dynamic"):
            raise ConfigError("gate must be static or dynamic")
        if self.corr_mode not in ("pooled", "per-query"):
            raise ConfigError("corr_mode must be pooled or per-query")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.stride < 1 or self.max_rows < 0:
            raise ConfigError("stride must be >= 1 and max_rows >= 0")
        if self.exclusion_radius < -1:
            raise ConfigError("exclusion_radius must be >= 0 (or -1 for L+T)")
        # component-level invariants
        self.retrieval()
        self.continuation()
        self.train_config(self.seeds[0])
        from .fusion import check_alpha

        check_alpha(self.alpha)

    # -- component views ---------------------------------------------------

    @property
    def baseline(self) -> bool:
        return self.variant == "baseline"

    def split_spec(self) -> SplitSpec:
        return SplitSpec.parse(self.split)

    def retrieval(self) -> RetrievalConfig:
        r = None if self.exclusion_radius < 0 else self.exclusion_radius
        return RetrievalConfig(k=self.top_k, exclude_self_window=self.exclude_self, exclusion_radius=r)

    def continuation(self) -> ContinuationConfig:
        v = "ratio" if self.baseline else self.variant
        return ContinuationConfig(
            tau=self.tau, clip_quantile=self.clip_q, epsilon_s=self.epsilon_s,
            align_epsilon=self.align_epsilon, variant=v, clip=self.clip, seed=self.retrieval_seed,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            max_epochs=self.max_epochs, patience=self.patience,
            optimizer=self.optimizer, seed=seed,
        )

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        d["data_sha256"] = data_digest(self.data)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def library_key(self) -> str:
        keys = ("split", "max_rows", "seq_len", "pred_len", "stride", "epsilon", "descriptor")
        d = {k: getattr(self, k) for k in keys}
        d["data_sha256"] = data_digest(self.data)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def run_dir(self) -> Path:
        return Path(self.out_dir) / self.hash()


_digest_cache: dict[tuple, str] = {}


def data_digest(path: str) -> str:
    if not path:
        return ""
    p = Path(path)
    if not p.exists():
        return f"missing:{path}"
    st = p.stat()
    key = (str(p.resolve()), st.st_size, st.st_mtime_ns)
    if key not in _digest_cache:
        _digest_cache[key] = hashlib.sha256(p.read_bytes()).hexdigest()
    return _digest_cache[key]


_FIELD_TYPES = {f.name: f for f in fields(ExperimentConfig)}


def coerce(name: str, value):
    """Convert a TOML or command-line value to the field's type; unknown keys are errors."""
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {name!r}")
    default = _FIELD_TYPES[name].default
    try:
        if name == "seeds":
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            if isinstance(value, (int,)):
                value = [value]
            return tuple(int(v) for v in value)
        if isinstance(default, bool):
            if isinstance(value, str):
                low = value.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return low in ("true", "1", "yes")
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {value!r} for {name!r}") from None


def load_config(path=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    values: dict = {}
    if path:
        with open(path, "rb") as fh:
            try:
                raw = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        for k, v in raw.items():
            if isinstance(v, dict):
                raise ConfigError(f"nested table [{k}] not allowed; the schema is flat")
            values[k] = coerce(k, v)
        base = Path(path).parent
        if values.get("data") and not Path(values["data"]).is_absolute():
            candidate = base / values["data"]
            if candidate.exists():
                values["data"] = str(candidate)
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = coerce(k, v)
    return ExperimentConfig(**values)
