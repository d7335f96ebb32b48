"""Line-oriented ``key = value`` experiment configs."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .policies import KINDS, PolicyConfig
from .stream import StreamConfig
from .vqvae import TrainConfig

MODES = ("stream", "train", "bench")


class ConfigError(ValueError):
    pass


class UnknownKeyError(ConfigError):
    pass


class MissingKeyError(ConfigError):
    pass


class ConfigTypeError(ConfigError):
    pass


@dataclass
class ExperimentConfig:
    mode: str
    seed: int = 0
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    policies: list = field(default_factory=lambda: ["vanilla-ema", "cvq-online"])
    out: str = "runs"
    thresholds: Optional[str] = None
    # policy
    gamma: float = 0.99
    epsilon: float = 1e-3
    sampler: str = "random"
    ema_decay: float = 0.99
    reset_threshold: Optional[float] = None
    metric: str = "euclidean"
    loss_metric: str = "euclidean"
    base: str = "ema"
    codebook_lr: float = 1.0
    usage_first: bool = True
    reinit_first: bool = True
    # codebook
    K: int = 128
    init_std: Optional[float] = None
    # stream
    n_clusters: int = 64
    n_q: int = 8
    cluster_std: float = 0.1
    drift_rate: float = 0.0
    center_scale: float = 5.0
    steps: int = 2000
    batch: int = 1024
    height: int = 1
    width: int = 1
    log_every: int = 100
    eval_size: int = 8192
    # train
    dataset: Optional[str] = None
    n_train: int = 4096
    epochs: int = 10
    train_batch: int = 64
    learning_rate: float = 2.0
    beta: float = 0.25
    hidden: int = 256
    latent_h: int = 4
    latent_w: int = 4
    contrastive: bool = False
    contrastive_weight: float = 1e-3
    tau: float = 0.1
    n_neg: int = 16
    contrastive_negatives_only: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.policies:
            raise ConfigError("at least one policy is required")
        for p in self.policies:
            if p not in KINDS:
                raise ConfigError(f"unknown policy {p!r}; expected one of {KINDS}")
        positive = ("K", "n_q", "n_clusters", "batch", "height", "width", "log_every", "eval_size",
                    "n_train", "train_batch", "hidden", "latent_h", "latent_w", "n_neg")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("steps", "epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.init_std is not None and self.init_std <= 0:
            raise ConfigError("init_std must be positive")
        if self.loss_metric not in ("euclidean", "cosine"):
            raise ConfigError(f"unknown loss_metric {self.loss_metric!r}")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        try:
            self.policy(self.policies[0])
            self.stream_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.mode == "train":
            if self.dataset is None:
                raise MissingKeyError("train mode requires 'dataset'")
            if not Path(self.dataset).exists():
                raise ConfigError(f"dataset not found: {self.dataset}")

    @property
    def resolved_init_std(self) -> float:
        if self.init_std is not None:
            return self.init_std
        return 1.0 if self.mode == "train" else 0.02

    def policy(self, kind: str) -> PolicyConfig:
        return PolicyConfig(
            kind=kind, gamma=self.gamma, epsilon=self.epsilon, sampler=self.sampler,
            ema_decay=self.ema_decay, reset_threshold=self.reset_threshold, metric=self.metric,
            base=self.base, codebook_lr=self.codebook_lr, usage_first=self.usage_first,
            reinit_first=self.reinit_first,
        )

    def stream_config(self, seed: int | None = None) -> StreamConfig:
        return StreamConfig(
            n_clusters=self.n_clusters, n_q=self.n_q, cluster_std=self.cluster_std,
            drift_rate=self.drift_rate, center_scale=self.center_scale,
            seed=self.seed if seed is None else seed,
        )

    def train_config(self, kind: str) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch=self.train_batch, learning_rate=self.learning_rate,
            beta=self.beta, policy=self.policy(kind), seed=self.seed, K=self.K, hidden=self.hidden,
            h=self.latent_h, w=self.latent_w, n_q=self.n_q, init_std=self.resolved_init_std,
            contrastive=self.contrastive, contrastive_weight=self.contrastive_weight, tau=self.tau,
            n_neg=self.n_neg, contrastive_negatives_only=self.contrastive_negatives_only,
            loss_metric=self.loss_metric,
        )

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_LISTS = {"seeds": int, "policies": str}
_OPTIONAL = {"thresholds": str, "reset_threshold": float, "init_std": float, "dataset": str}


def _scalar(key: str, raw: str, kind):
    if kind is bool:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigTypeError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigTypeError(f"{key}: expected {kind.__name__}, got {raw!r}") from None


def _convert(key: str, raw: str):
    if key in _LISTS:
        items = [s.strip() for s in raw.split(",") if s.strip()]
        return [_scalar(key, s, _LISTS[key]) for s in items]
    if key in _OPTIONAL:
        if raw.lower() in ("none", "auto", ""):
            return None
        return _scalar(key, raw, _OPTIONAL[key])
    kind = {"int": int, "float": float, "bool": bool, "str": str}[_FIELDS[key].type]
    return _scalar(key, raw, kind)


def parse_config(text: str, **overrides) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise UnknownKeyError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "mode" not in values:
        raise MissingKeyError("missing required key 'mode'")
    return ExperimentConfig(**values)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path, **overrides) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), **overrides)
