"""YAML run configurations for the command-line interface.

A run file has a mandatory ``seed`` and optional sections::

    seed: 0
    out: runs/mnist
    data: runs/mnist/dataset.npz     # dataset written by ``fnn gen``
    checkpoint: runs/mnist/checkpoint.fnn
    dataset:   {kind: mnist, path: data/mnist, n_train: 2000, n_test: 500, encoding: onsite}
    architecture: {input_size: 784, layer_sizes: [64, 32, 10]}
    train:     {learning_rate: 0.005, broadening: 0.005, epochs: 15, head: ldos}
    matsubara: {temperature: 0.005, n0: 20}
    dmft:      {mixing: 0.5, tolerance: 1.0e-6}
    sweep:     {parameter: kappa, start: 0.1, stop: 1.0, num: 10, samples_per_point: 4}
    diagnose:  {probe: 8, fermi_energy: 1.0e-6}

``dataset.params`` is passed to the generator of the chosen kind.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .dmft import DmftConfig
from .training import TrainConfig

DATASET_KINDS = ("mnist", "chern", "fk")
SWEEP_PARAMETERS = ("kappa", "t_prime", "u")


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSpec:
    kind: str = "mnist"
    path: Optional[str] = None
    n_train: int = 100
    n_test: int = 50
    encoding: str = "onsite"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.encoding not in ("onsite", "external_ldos"):
            raise ConfigError(f"unknown encoding {self.encoding!r}")
        if self.n_train < 0 or self.n_test < 0:
            raise ConfigError("sample counts must be non-negative")


@dataclass
class ArchitectureConfig:
    input_size: int = 784
    layer_sizes: list = field(default_factory=lambda: [64, 32, 10])
    intra: object = "full"
    inter: object = "full"
    geometries: Optional[list] = None

    def build(self):
        from .model import ArchitectureSpec
        return ArchitectureSpec(self.input_size, list(self.layer_sizes), self.intra, self.inter,
                                None if self.geometries is None else [None if g is None else list(g)
                                                                      for g in self.geometries])


@dataclass
class MatsubaraConfig:
    temperature: float = 0.005
    n0: int = 20


@dataclass
class SweepSpec:
    parameter: str = "kappa"
    start: float = 0.1
    stop: float = 1.0
    num: int = 10
    samples_per_point: int = 1
    disorder: bool = False
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"unknown sweep parameter {self.parameter!r}")
        if self.num < 1 or self.samples_per_point < 1:
            raise ConfigError("sweep needs at least one point and one sample per point")


@dataclass
class DiagnoseSpec:
    probe: int = 4
    fermi_energy: float = 1e-6


@dataclass
class RunConfig:
    seed: int
    out: str = "runs/default"
    data: Optional[str] = None
    checkpoint: Optional[str] = None
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    matsubara: MatsubaraConfig = field(default_factory=MatsubaraConfig)
    dmft: DmftConfig = field(default_factory=DmftConfig)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    diagnose: DiagnoseSpec = field(default_factory=DiagnoseSpec)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def validate(self, command: str) -> "RunConfig":
        """Check that the files the command will read exist."""
        needs = {"gen": ["dataset.path"] if self.dataset.kind == "mnist" else [],
                 "train": ["data"], "eval": ["data", "checkpoint"], "sweep": ["checkpoint"],
                 "diagnose": ["data", "checkpoint"]}.get(command)
        if needs is None:
            raise ConfigError(f"unknown command {command!r}")
        for name in needs:
            value = self.dataset.path if name == "dataset.path" else getattr(self, name)
            if value is None or not Path(value).exists():
                raise ConfigError(f"{name} = {value!r} does not exist")
        return self


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


_SECTIONS = {"dataset": DatasetSpec, "architecture": ArchitectureConfig, "train": TrainConfig,
             "matsubara": MatsubaraConfig, "dmft": DmftConfig, "sweep": SweepSpec,
             "diagnose": DiagnoseSpec}


def _build(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")
    values = {k: tuple(v) if k == "ef_bracket" and v is not None else v for k, v in values.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    if "seed" not in data or data["seed"] is None:
        raise ConfigError("a seed is mandatory")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value or {}, key)
        elif key in ("seed", "out", "data", "checkpoint"):
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown top-level key {key!r}")
    kwargs["seed"] = int(kwargs["seed"])
    return RunConfig(**kwargs)


def parse(text: str) -> RunConfig:
    return from_dict(yaml.safe_load(text))


def load(path) -> RunConfig:
    return parse(Path(path).read_text())
