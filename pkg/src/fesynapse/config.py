"""Experiment configuration: one JSON document describes a complete run.

Every field has an explicit default, and the effective configuration (after
command-line overrides) is written next to the results, so a run can be
repeated from its output directory alone.  Unknown keys are rejected rather
than ignored, since a misspelt key would otherwise silently fall back to a
default.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .device import DeviceParams, PulseProtocol
from .snn import EncodingParams, LearnRuleParams, NeuronParams

EXPERIMENTS = ("calibrate", "curves", "domain-sweep", "train-eval", "binary-fraction-sweep")
INIT_MODES = ("weak-pulse", "all-s0", "random")


class ConfigError(ValueError):
    """The configuration is malformed or inconsistent."""


@dataclass(frozen=True)
class CurveConfig:
    v_start: float = 2.0
    v_stop: float = 4.0
    v_step: float = 0.02
    trials: int = 500
    # devices pooled when deriving the synapse from simulated curves
    n_devices: int = 20
    method: str = "exact"
    # target curves for comparison/calibration; empty = packaged reference
    target_csv: str = ""


@dataclass(frozen=True)
class CalibrationConfig:
    trials: int = 300
    n_devices: int = 6
    max_evals: int = 600


@dataclass(frozen=True)
class DomainSweepConfig:
    n_list: tuple = (1, 2, 5, 10, 20, 50, 100, 200)
    trials: int = 500
    reliability: float = 0.95
    min_gap: float = 0.1
    sustain: int = 3
    method: str = "exact"


@dataclass(frozen=True)
class SynapseConfig:
    v_weak: float = 2.82
    v_strong: float = 3.6
    weight_map: tuple = (0.0, 0.5, 1.0)
    # a saved tri-state SynapseModel; empty = derive from simulated curves
    model_path: str = ""


@dataclass(frozen=True)
class NetworkConfig:
    init: str = "weak-pulse"
    binary_fraction: float = 0.0
    checkpoint_every: int = 0  # patterns; 0 = final checkpoint only


@dataclass(frozen=True)
class DataConfig:
    images: str = "data/mnist/mnist10k-images-idx3-ubyte.gz"
    labels: str = "data/mnist/mnist10k-labels-idx1-ubyte.gz"
    n_train: int = 1000
    n_test: int = 1000


@dataclass(frozen=True)
class SweepConfig:
    fractions: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "train-eval"
    seed: int = 0
    repeats: int = 3
    out: str = "runs/out"
    device: DeviceParams = field(default_factory=DeviceParams)
    protocol: PulseProtocol = field(default_factory=PulseProtocol)
    curves: CurveConfig = field(default_factory=CurveConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    domain_sweep: DomainSweepConfig = field(default_factory=DomainSweepConfig)
    synapse: SynapseConfig = field(default_factory=SynapseConfig)
    neuron: NeuronParams = field(default_factory=NeuronParams)
    rule: LearnRuleParams = field(default_factory=LearnRuleParams)
    encoding: EncodingParams = field(default_factory=EncodingParams)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.network.init not in INIT_MODES:
            raise ConfigError(f"network.init must be one of {INIT_MODES}")
        if not 0.0 <= self.network.binary_fraction <= 1.0:
            raise ConfigError("network.binary_fraction must lie in [0, 1]")
        if any(not 0.0 <= f <= 1.0 for f in self.sweep.fractions) or not self.sweep.fractions:
            raise ConfigError("sweep.fractions must be a non-empty list in [0, 1]")
        if self.curves.method not in ("steps", "exact") or self.domain_sweep.method not in ("steps", "exact"):
            raise ConfigError("method must be 'steps' or 'exact'")
        if self.curves.trials < 1 or self.curves.n_devices < 1:
            raise ConfigError("curves.trials and curves.n_devices must be >= 1")
        if any(int(n) < 1 for n in self.domain_sweep.n_list):
            raise ConfigError("domain_sweep.n_list entries must be >= 1")

    # -- serialisation ------------------------------------------------------------

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        try:
            return _build(cls, d, "")
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        return cls.from_dict(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        """Short hash of everything that affects results (the output path does not)."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, d: dict, where: str):
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(d) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where or 'top level'}")
    kwargs = {}
    for name, value in d.items():
        default = _default(fields[name])
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(default):
            if not isinstance(value, dict):
                raise ConfigError(f"{path} must be an object")
            kwargs[name] = _build(type(default), value, path)
        elif isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{path} must be a list")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = _coerce(value, default, path)
    return cls(**kwargs)


def _default(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


def _coerce(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path} must be a string")
    return value
