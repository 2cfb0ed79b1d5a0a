"""Experiment configuration: dataclasses plus strict JSON (de)serialisation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from typing import Optional

SCHEMA_VERSION = 1
ALGORITHMS = ("page", "fedavg", "fedprox")
DEFAULT_PROX_MU = 0.01


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class PartitionSpec:
    scheme: str = "dirichlet"  # dirichlet | lognormal | uniform
    delta: float = 0.3
    sigma: float = 0.3
    train_fraction: float = 0.7


@dataclass
class DataConfig:
    kind: str = "synthetic"
    dims: int = 10
    classes: int = 5
    a: float = 1.0
    b: float = 1.0
    mean_train: int = 210
    mean_test: int = 90
    server_test_size: int = 2000
    # None keeps the generator's own clients
    partition: Optional[PartitionSpec] = None


@dataclass
class ModelConfig:
    hidden: list[int] = field(default_factory=list)
    activation: str = "tanh"


@dataclass
class LocalConfig:
    epochs: int = 5
    learning_rate: float = 0.05
    batch_size: int = 32
    # None: 0 for page/fedavg, DEFAULT_PROX_MU for fedprox
    prox_mu: Optional[float] = None


@dataclass
class BoundsConfig:
    alpha: list[int] = field(default_factory=lambda: [1, 10])
    eta: list[float] = field(default_factory=lambda: [1e-4, 0.5])


@dataclass
class AgentConfig:
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    l_actor: float = 1e-4
    l_critic: float = 1e-3
    beta: float = 0.01
    gamma: float = 0.99
    buffer_capacity: int = 10_000
    batch_size: int = 64
    noise_std0: float = 0.2
    noise_decay: float = 0.99
    warmup_steps: int = 1
    updates_per_round: int = 1
    reward_clip: float = 100.0
    optimizer: str = "adam"
    soft_update: str = "lagged"


@dataclass
class StopConfig:
    enabled: bool = True
    window: int = 20
    tol: float = 0.005


@dataclass
class FreezeConfig:
    """Replaces both agents by constant actions: uniform weights, fixed (alpha, eta)."""

    alpha: int = 5
    eta: float = 0.05


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    algorithm: str = "page"
    num_clients: int = 20
    rounds: int = 1000
    seed: int = 0
    runs: int = 3
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    local: LocalConfig = field(default_factory=LocalConfig)
    fedavg_weighting: str = "size"  # size | uniform
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    server_agent: AgentConfig = field(default_factory=AgentConfig)
    client_agent: AgentConfig = field(default_factory=AgentConfig)
    kappa_g: float = 1.0
    kappa_l: float = 1.0
    # losses f_i in the server reward: "server" (uploaded models on D_CS) or "local" (own test split)
    server_reward_losses: str = "server"
    stop: StopConfig = field(default_factory=StopConfig)
    freeze: Optional[FreezeConfig] = None
    server_eval_subsample: Optional[int] = None
    checkpoint: bool = False
    timing: bool = False

    def validate(self) -> "ExperimentConfig":
        validate(self)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes).validate()

    @property
    def prox_mu(self) -> float:
        if self.local.prox_mu is not None:
            return self.local.prox_mu
        return DEFAULT_PROX_MU if self.algorithm == "fedprox" else 0.0


def _check(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def validate(cfg: ExperimentConfig) -> None:
    _check(cfg.schema_version == SCHEMA_VERSION, "schema_version", f"unsupported version {cfg.schema_version}")
    _check(cfg.algorithm in ALGORITHMS, "algorithm", f"must be one of {ALGORITHMS}")
    _check(cfg.num_clients >= 1, "num_clients", "must be >= 1")
    _check(cfg.rounds >= 1, "rounds", "must be >= 1")
    _check(cfg.runs >= 1, "runs", "must be >= 1")
    d = cfg.data
    _check(d.kind == "synthetic", "data.kind", "only 'synthetic' is available")
    _check(d.dims >= 1, "data.dims", "must be >= 1")
    _check(d.classes >= 2, "data.classes", "must be >= 2")
    _check(d.a >= 0, "data.a", "must be >= 0")
    _check(d.b >= 0, "data.b", "must be >= 0")
    _check(min(d.mean_train, d.mean_test, d.server_test_size) >= 1, "data", "sample sizes must be >= 1")
    if d.partition is not None:
        p = d.partition
        _check(p.scheme in ("dirichlet", "lognormal", "uniform"), "data.partition.scheme", "unknown scheme")
        _check(p.delta > 0, "data.partition.delta", "must be > 0")
        _check(p.sigma > 0, "data.partition.sigma", "must be > 0")
        _check(0 < p.train_fraction < 1, "data.partition.train_fraction", "must lie in (0, 1)")
    _check(cfg.model.activation in ("tanh", "relu"), "model.activation", "must be tanh or relu")
    _check(all(h >= 1 for h in cfg.model.hidden), "model.hidden", "layer sizes must be >= 1")
    loc = cfg.local
    _check(loc.epochs >= 1, "local.epochs", "must be >= 1")
    _check(loc.learning_rate > 0, "local.learning_rate", "must be > 0")
    _check(loc.batch_size >= 1, "local.batch_size", "must be >= 1")
    _check(loc.prox_mu is None or loc.prox_mu >= 0, "local.prox_mu", "must be >= 0")
    _check(cfg.fedavg_weighting in ("size", "uniform"), "fedavg_weighting", "must be 'size' or 'uniform'")
    a, e = cfg.bounds.alpha, cfg.bounds.eta
    _check(len(a) == 2 and 1 <= a[0] <= a[1], "bounds.alpha", "need [min, max] with 1 <= min <= max")
    _check(len(e) == 2 and 0 < e[0] <= e[1], "bounds.eta", "need [min, max] with 0 < min <= max")
    for name in ("server_agent", "client_agent"):
        ag: AgentConfig = getattr(cfg, name)
        _check(ag.l_actor > 0 and ag.l_critic > 0, name, "learning rates must be > 0")
        _check(0 < ag.beta <= 1, f"{name}.beta", "must lie in (0, 1]")
        _check(0 <= ag.gamma < 1, f"{name}.gamma", "must lie in [0, 1)")
        _check(1 <= ag.batch_size <= ag.buffer_capacity, f"{name}.batch_size", "need 1 <= batch_size <= buffer_capacity")
        _check(ag.noise_std0 >= 0, f"{name}.noise_std0", "must be >= 0")
        _check(0 < ag.noise_decay <= 1, f"{name}.noise_decay", "must lie in (0, 1]")
        _check(ag.warmup_steps >= 0, f"{name}.warmup_steps", "must be >= 0")
        _check(ag.updates_per_round >= 0, f"{name}.updates_per_round", "must be >= 0")
        _check(all(h >= 1 for h in ag.hidden), f"{name}.hidden", "layer sizes must be >= 1")
        _check(ag.reward_clip > 0, f"{name}.reward_clip", "must be > 0")
        _check(ag.optimizer in ("adam", "sgd"), f"{name}.optimizer", "must be adam or sgd")
        _check(ag.soft_update in ("lagged", "updated"), f"{name}.soft_update", "must be lagged or updated")
    _check(cfg.kappa_g > 0, "kappa_g", "must be > 0")
    _check(cfg.kappa_l > 0, "kappa_l", "must be > 0")
    _check(cfg.server_reward_losses in ("local", "server"), "server_reward_losses", "must be 'local' or 'server'")
    _check(cfg.stop.window >= 2, "stop.window", "must be >= 2")
    _check(cfg.stop.tol >= 0, "stop.tol", "must be >= 0")
    if cfg.freeze is not None:
        _check(cfg.freeze.alpha >= 1, "freeze.alpha", "must be >= 1")
        _check(cfg.freeze.eta > 0, "freeze.eta", "must be > 0")
    if cfg.server_eval_subsample is not None:
        _check(cfg.server_eval_subsample >= 1, "server_eval_subsample", "must be >= 1")


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(path, "expected an object")
        return _build(tp, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, "expected a list")
        (inner,) = typing.get_args(tp)
        return [_coerce(inner, v, f"{path}[{k}]") for k, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, "expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, "expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, "expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, "expected a string")
        return value
    raise ConfigError(path, f"unsupported type {tp!r}")


def _build(cls, raw: dict, path: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    kwargs = {}
    for key, value in raw.items():
        sub = f"{path}.{key}" if path else key
        kwargs[key] = _coerce(hints[key], value, sub)
    return cls(**kwargs)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be a JSON object")
    cfg = _build(ExperimentConfig, raw)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON: {exc}") from exc
    return config_from_dict(raw)
