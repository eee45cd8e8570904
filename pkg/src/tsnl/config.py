"""Experiment configuration: YAML file -> validated dataclasses.

Unknown keys anywhere in the file are rejected with their dotted path.
See ``configs/`` for complete examples and README for the schema.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .abc import AbcConfig
from .models import MODEL_NAMES
from .nde import FlowConfig, TrainConfig
from .samplers import McmcConfig

METHODS = ("tsnl", "snl", "smc-abc", "bpf-mcmc")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    name: str
    params: dict = field(default_factory=dict)


@dataclass
class TsnlConfig:
    L: int | None = None          # None: choose from the ACF of y_obs
    L_max: int = 20
    tau: float = 0.2
    rounds: int = 3
    strategy: str = "all"


@dataclass
class SnlConfig:
    rounds: int = 3
    strategy: str = "all"


@dataclass
class BpfMcmcConfig:
    n_particles: int | None = None    # None: derived from the budget
    steps: int = 1000
    proposal_scale: float = 0.1
    burn_in: float = 0.2


@dataclass
class ValLossConfig:
    T_grid: list = field(default_factory=lambda: [10, 20, 40])
    n_sims: int = 100
    L: int = 5


@dataclass
class AcfConfig:
    n_sequences: int = 10
    L_max: int = 20


@dataclass
class ExperimentConfig:
    model: ModelConfig
    methods: list = field(default_factory=lambda: ["tsnl"])
    ground_truth: list | None = None
    T: int = 200
    budgets: list = field(default_factory=lambda: [100])   # simulations (length-T trajectories) per run
    trials: int = 1
    seed: int = 0
    out: str = "results"
    record_wall_clock: bool = True
    workers: int = 1
    rank_samples: int = 100
    tsnl: TsnlConfig = field(default_factory=TsnlConfig)
    snl: SnlConfig = field(default_factory=SnlConfig)
    bpf: BpfMcmcConfig = field(default_factory=BpfMcmcConfig)
    abc: AbcConfig = field(default_factory=AbcConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    valloss: ValLossConfig = field(default_factory=ValLossConfig)
    acf: AcfConfig = field(default_factory=AcfConfig)

    def validate(self) -> "ExperimentConfig":
        if self.model.name not in MODEL_NAMES:
            raise ConfigError(f"model: unknown name {self.model.name!r} (choose from {', '.join(MODEL_NAMES)})")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"methods: unknown method {m!r} (choose from {', '.join(METHODS)})")
        if not self.methods:
            raise ConfigError("methods: at least one method required")
        if self.T < 1:
            raise ConfigError("T: must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials: must be >= 1")
        if not self.budgets or any(int(b) < 1 for b in self.budgets):
            raise ConfigError("budgets: need a non-empty list of positive integers")
        if any(b2 <= b1 for b1, b2 in zip(self.budgets, self.budgets[1:])):
            raise ConfigError(f"budgets: must be strictly increasing, got {self.budgets}")
        if self.tsnl.strategy not in ("all", "last", "best") or self.snl.strategy not in ("all", "last", "best"):
            raise ConfigError("strategy: must be one of all, last, best")
        if self.tsnl.L is not None and self.tsnl.L < 1:
            raise ConfigError("tsnl.L: must be >= 1")
        if sorted(set(self.valloss.T_grid)) != list(self.valloss.T_grid):
            raise ConfigError("valloss.T_grid: must be strictly increasing")
        return self


_NESTED = {"tsnl": TsnlConfig, "snl": SnlConfig, "bpf": BpfMcmcConfig, "abc": AbcConfig, "flow": FlowConfig,
           "train": TrainConfig, "mcmc": McmcConfig, "valloss": ValLossConfig, "acf": AcfConfig}


def _build(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            raise ConfigError(f"{where}.{k}: unknown key" if where else f"{k}: unknown key")
    try:
        return cls(**data)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where}: {err}") from err


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    raw = dict(raw)
    if "model" not in raw:
        raise ConfigError("model: required key missing")
    model = raw.pop("model")
    if isinstance(model, str):
        model = ModelConfig(model)
    else:
        model = _build(ModelConfig, model, "model")
    if "method" in raw:
        if "methods" in raw:
            raise ConfigError("method: give either method or methods, not both")
        raw["methods"] = [raw.pop("method")]
    if isinstance(raw.get("methods"), str):
        raw["methods"] = [raw["methods"]]
    kwargs = {}
    for key, cls in _NESTED.items():
        if key in raw:
            kwargs[key] = _build(cls, raw.pop(key), key)
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for k in raw:
        if k not in top:
            raise ConfigError(f"{k}: unknown key")
    try:
        cfg = ExperimentConfig(model=model, **raw, **kwargs)
    except TypeError as err:
        raise ConfigError(str(err)) from err
    return cfg.validate()


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as err:
            raise ConfigError(f"invalid YAML: {err}") from err
    return config_from_dict(raw or {})
