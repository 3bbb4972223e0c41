"""Domain types for the process-parameter generator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PARAM_NAMES = (
    "Injection Speed 1", "Injection Speed 2", "Injection Speed 3",
    "Injection Pressure 1", "Injection Pressure 2", "Injection Pressure 3",
    "Injection Position 1", "Injection Position 2", "Injection Position 3",
    "Hold Time",
)

ENV_NAMES = ("factory_temperature", "factory_humidity",
             "machine_temperature", "machine_humidity")

GOOD, DEFECTIVE = 0, 1

# plausibility bounds for environment readings, degC / %RH
TEMP_BOUNDS = (-30.0, 80.0)


@dataclass(frozen=True)
class EnvCondition:
    cls: int  # 0 = good, 1 = defective
    factory_temperature: float
    factory_humidity: float
    machine_temperature: float
    machine_humidity: float

    def __post_init__(self):
        if self.cls not in (GOOD, DEFECTIVE):
            raise ValueError("class must be 0 (good) or 1 (defective)")
        for h in (self.factory_humidity, self.machine_humidity):
            if not 0.0 <= h <= 100.0:
                raise ValueError(f"humidity {h} outside [0, 100]")
        for t in (self.factory_temperature, self.machine_temperature):
            if not TEMP_BOUNDS[0] <= t <= TEMP_BOUNDS[1]:
                raise ValueError(f"temperature {t} outside plausible bounds {TEMP_BOUNDS}")

    def env_vector(self) -> np.ndarray:
        return np.array([self.factory_temperature, self.factory_humidity,
                         self.machine_temperature, self.machine_humidity])


@dataclass(frozen=True)
class ProcessParams:
    """The ten generated process-condition values, in machine units."""
    values: tuple[float, ...]
    clamped_fields: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.values) != len(PARAM_NAMES):
            raise ValueError(f"expected {len(PARAM_NAMES)} values")
        if self.hold_time < 0:
            raise ValueError("hold_time must be >= 0")

    @property
    def hold_time(self) -> float:
        return self.values[PARAM_NAMES.index("Hold Time")]

    def as_vector(self) -> np.ndarray:
        return np.asarray(self.values)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(PARAM_NAMES, self.values))

    def render(self) -> str:
        return "\n".join(f"{name}: {value:.2f}" for name, value in self.as_dict().items())


class Normalizer:
    """Per-feature min-max scaling to [-1, 1]."""

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        if np.any(hi <= lo):
            raise ValueError("each feature needs max > min")
        self.lo, self.hi = lo, hi

    @classmethod
    def fit(cls, data: np.ndarray) -> "Normalizer":
        return cls(data.min(axis=0), data.max(axis=0))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return (z + 1.0) / 2.0 * (self.hi - self.lo) + self.lo
