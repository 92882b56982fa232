"""Experiment configuration: JSON-backed dataclasses with strict parsing.

One experiment per file. Every field round-trips losslessly through
``to_dict``/``from_dict`` (and therefore through JSON), unknown keys are
rejected, and ``config_hash`` fingerprints the canonical serialized form
so trial records can name the exact configuration they came from.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .datasets import KINDS

OPTIMIZER_VARIANTS = ("madam", "mult_sign", "exp_sign", "sgd", "adam", "lars")
DECAY_MODES = ("none", "plateau")


class ConfigError(ValueError):
    """Configuration violates the schema or a documented range."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _from_dict(cls, data: dict, what: str):
    _require(isinstance(data, dict), f"{what} must be a mapping, got {type(data).__name__}")
    names = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    unknown = set(data) - names
    _require(not unknown, f"unknown {what} keys: {sorted(unknown)}")
    return cls(**data)


@dataclass(frozen=True)
class TaskConfig:
    """Dataset choice: a synthetic generator or a CSV file.

    ``kind`` is one of the generators or "csv" (with ``params["path"]``);
    ``seed`` drives data generation only, so grid cells that vary the
    optimizer all see the same points. ``params`` holds kind-specific
    generator arguments such as ``classes`` or ``target_scale``.
    """

    kind: str = "two_moons"
    n_train: int = 400
    n_test: int = 200
    noise: float = 0.1
    seed: int = 7
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        _require(self.kind in KINDS + ("csv",), f"unknown task kind {self.kind!r}")
        _require(self.n_train >= 2, f"n_train must be >= 2, got {self.n_train}")
        _require(self.n_test >= 1, f"n_test must be >= 1, got {self.n_test}")
        _require(self.noise >= 0, f"noise must be >= 0, got {self.noise}")
        if self.kind == "csv":
            _require("path" in self.params, 'csv task needs params["path"]')


@dataclass(frozen=True)
class ModelConfig:
    """Hidden widths and leaky-relu slope; in/out widths come from the task."""

    hidden: list = field(default_factory=lambda: [32, 32])
    leak: float = 0.1

    def __post_init__(self):
        _require(len(self.hidden) >= 1, "at least one hidden layer required")
        _require(all(isinstance(h, int) and h >= 1 for h in self.hidden),
                 f"hidden widths must be positive integers, got {self.hidden}")
        _require(0.0 <= self.leak < 1.0, f"leak must lie in [0, 1), got {self.leak}")


@dataclass(frozen=True)
class OptimizerConfig:
    """Update rule and its hyperparameters.

    ``eta`` is the learning rate for every variant. ``eta_star`` (max
    perturbation) and ``beta`` (second-moment averaging) apply to madam;
    ``sigma_multiplier`` scales each tensor's initialization scale into
    its weight clamp sigma*; momentum/beta1/beta2/eps/l2 configure the
    additive baselines.
    """

    variant: str = "madam"
    eta: float = 0.01
    eta_star: float | None = None
    beta: float = 0.999
    sigma_multiplier: float = 3.0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 0.0

    def __post_init__(self):
        _require(self.variant in OPTIMIZER_VARIANTS,
                 f"unknown optimizer variant {self.variant!r}")
        _require(self.eta > 0, f"eta must be positive, got {self.eta}")
        if self.eta_star is not None:
            _require(self.eta_star >= self.eta,
                     f"eta_star must be >= eta, got {self.eta_star}")
        _require(0.0 <= self.beta < 1.0, f"beta must lie in [0, 1), got {self.beta}")
        _require(1.0 <= self.sigma_multiplier <= 5.0,
                 f"sigma_multiplier must lie in [1, 5], got {self.sigma_multiplier}")
        _require(self.l2 >= 0, f"l2 must be >= 0, got {self.l2}")

    def resolved_eta_star(self) -> float:
        return 8.0 * self.eta if self.eta_star is None else self.eta_star


@dataclass(frozen=True)
class LnsConfig:
    """Ladder settings for the natively compressed path (madam only)."""

    bits: int = 12
    eta0: float = 0.001
    eta_floor: float | None = None

    def __post_init__(self):
        _require(isinstance(self.bits, int) and self.bits >= 2,
                 f"bits must be an integer >= 2, got {self.bits}")
        _require(self.eta0 > 0, f"eta0 must be positive, got {self.eta0}")
        if self.eta_floor is not None:
            _require(self.eta_floor >= self.eta0,
                     f"eta_floor must be >= eta0, got {self.eta_floor}")

    def resolved_floor(self) -> float:
        return self.eta0 if self.eta_floor is None else self.eta_floor


@dataclass(frozen=True)
class ScheduleConfig:
    """Epoch budget, batching, and the decay-on-plateau rule.

    A plateau is ``patience`` consecutive evaluations that fail to
    improve the best eval loss by a relative ``min_rel_improvement``;
    when it fires, eta divides by ``decay_factor`` (down to the ladder
    floor on the compressed path).
    """

    epochs: int = 200
    batch_size: int = 32
    decay: str = "plateau"
    decay_factor: float = 10.0
    patience: int = 5
    min_rel_improvement: float = 1e-3

    def __post_init__(self):
        _require(self.epochs >= 0, f"epochs must be >= 0, got {self.epochs}")
        _require(self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}")
        _require(self.decay in DECAY_MODES, f"decay must be one of {DECAY_MODES}")
        _require(self.decay_factor > 1.0,
                 f"decay_factor must exceed 1, got {self.decay_factor}")
        _require(self.patience >= 1, f"patience must be >= 1, got {self.patience}")
        _require(self.min_rel_improvement >= 0,
                 f"min_rel_improvement must be >= 0, got {self.min_rel_improvement}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one trial needs; see the README for the file schema."""

    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    lns: LnsConfig | None = None
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if self.lns is not None:
            _require(self.optimizer.variant == "madam",
                     "the compressed (lns) path requires the madam optimizer")
            from ..lns import steps_on_ladder
            try:
                rungs = steps_on_ladder(self.optimizer.eta, self.lns.eta0)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            _require(rungs >= 1, "eta must be at least eta0")

    def to_dict(self) -> dict:
        out = {
            "task": asdict(self.task),
            "model": asdict(self.model),
            "optimizer": asdict(self.optimizer),
            "lns": None if self.lns is None else asdict(self.lns),
            "schedule": asdict(self.schedule),
            "seed": self.seed,
            "out_dir": self.out_dir,
        }
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        _require(isinstance(data, dict), "config must be a mapping")
        known = {"task", "model", "optimizer", "lns", "schedule", "seed", "out_dir"}
        unknown = set(data) - known
        _require(not unknown, f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(
                task=_from_dict(TaskConfig, data.get("task", {}), "task"),
                model=_from_dict(ModelConfig, data.get("model", {}), "model"),
                optimizer=_from_dict(OptimizerConfig, data.get("optimizer", {}), "optimizer"),
                lns=None if data.get("lns") is None
                else _from_dict(LnsConfig, data["lns"], "lns"),
                schedule=_from_dict(ScheduleConfig, data.get("schedule", {}), "schedule"),
                seed=int(data.get("seed", 0)),
                out_dir=data.get("out_dir"),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def replace(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    return ExperimentConfig.from_json(text)
