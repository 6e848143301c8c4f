"""Experiment configuration, loadable from flat ``key = value`` files."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from qmoney.photonics import AbstractDevice, DetailedDevice

DEFAULT_L_GRID = (10_000, 30_000, 100_000, 300_000, 1_000_000, 3_600_000)
DEFAULT_CURVE_GRID = tuple(range(100_000, 5_000_001, 100_000))


@dataclass
class ExperimentConfig:
    """Inputs shared by the optimizer, calibration and experiment commands.

    ``eps`` and ``eps_strict`` fix the operating points for the configured
    ``beta`` and for the strict ``beta = 0`` analysis; ``None`` means
    optimize.  Device keys default to an abstract device that reproduces
    ``eta`` and ``beta`` exactly.
    """

    eta: float = 0.0336
    beta: float = 0.033
    eps: float | None = 0.0018
    eps_strict: float | None = 0.0015
    mu: float = 0.25
    forge_target: float = 1e-7
    eps_step: float = 1e-5
    l_grid: tuple[int, ...] = DEFAULT_L_GRID
    curve_grid: tuple[int, ...] = DEFAULT_CURVE_GRID
    rounds: int = 10
    seed: int = 0
    cap_T: int = 10
    fresh_notes: bool = True
    workers: int = 1
    output: str | None = None
    device: str = "abstract"
    eta_c: float | None = None
    e_flip: float | None = None
    eta_det: float = DetailedDevice.eta_det
    p_dark: float = DetailedDevice.p_dark
    visibility: float = DetailedDevice.visibility
    split_loss: float = DetailedDevice.split_loss
    samples: int = 1_000_000

    def __post_init__(self):
        self.l_grid = tuple(int(x) for x in self.l_grid)
        self.curve_grid = tuple(int(x) for x in self.curve_grid)
        if not self.l_grid or not self.curve_grid:
            raise ValueError("grids must be non-empty")
        if any(x < 1 for x in self.l_grid + self.curve_grid):
            raise ValueError("grid values must be >= 1")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.device not in ("abstract", "detailed"):
            raise ValueError(f"device must be 'abstract' or 'detailed', got {self.device!r}")

    def device_model(self) -> AbstractDevice | DetailedDevice:
        if self.device == "detailed":
            return self.detailed_device()
        return AbstractDevice(
            eta_c=self.eta if self.eta_c is None else self.eta_c,
            e_flip=self.beta if self.e_flip is None else self.e_flip,
        )

    def detailed_device(self) -> DetailedDevice:
        return DetailedDevice(self.eta_det, self.p_dark, self.visibility, self.split_loss)

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> ExperimentConfig:
        values = parse_kv(Path(path).read_text())
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict[str, Any]) -> ExperimentConfig:
        kwargs = {}
        known = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = coerce(known[key].type, raw)
        return cls(**kwargs)


def parse_kv(text: str) -> dict[str, str]:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def coerce(type_name: str, raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if "None" in type_name and text.lower() in ("none", "auto", ""):
        return None
    if type_name.startswith("tuple"):
        return tuple(int(float(x)) for x in text.replace(" ", "").split(",") if x)
    if type_name.startswith("bool"):
        return text.lower() in ("1", "true", "yes", "on")
    if type_name.startswith("int"):
        return int(float(text))
    if type_name.startswith("float"):
        return float(text)
    return text
