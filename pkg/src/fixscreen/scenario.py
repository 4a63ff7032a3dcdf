"""Defect configurations and frequency/actuation sweep plans."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .io import stable_hash

CRACK = "crack"
LOOSENING = "loosening"

TIP = math.pi           # interface angle farthest from sensor 0
SIDE = math.pi / 2      # a quarter turn from the tip

CRACK_POSITIONS = (math.pi / 2, 3 * math.pi / 4, math.pi)
CRACK_DIAMETERS = (0.5e-3, 1.0e-3, 1.5e-3, 2.0e-3)
LOOSENING_POSITIONS = (TIP, SIDE)
LOOSENING_THICKNESSES = (0.25e-3, 0.5e-3, 1.0e-3)
LOOSENING_ARCS = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class DefectSpec:
    """A single fixation defect at the implant-marrow interface.

    ``angle`` is the angular position on the interface (radians). A crack uses
    ``diameter``; a loosening layer uses ``thickness`` and ``arc_length``, the
    fraction of the full interface circle it covers.
    """

    kind: str
    angle: float
    diameter: float | None = None
    thickness: float | None = None
    arc_length: float | None = None

    def __post_init__(self):
        if self.kind == CRACK:
            if self.diameter is None or self.diameter < 0:
                raise ValueError("crack diameter must be given and non-negative")
        elif self.kind == LOOSENING:
            if self.thickness is None or self.thickness < 0:
                raise ValueError("loosening thickness must be given and non-negative")
            if self.arc_length is None or not 0 < self.arc_length <= 1:
                raise ValueError("loosening arc_length must lie in (0, 1]")
        else:
            raise ValueError(f"unknown defect kind {self.kind!r}")

    @classmethod
    def crack(cls, angle: float, diameter: float) -> "DefectSpec":
        return cls(CRACK, angle, diameter=diameter)

    @classmethod
    def loosening(cls, angle: float, thickness: float, arc_length: float) -> "DefectSpec":
        return cls(LOOSENING, angle, thickness=thickness, arc_length=arc_length)

    @property
    def size(self) -> float:
        return self.diameter if self.kind == CRACK else self.thickness

    def extent_outward(self, interface_radius: float) -> float:
        """Largest distance from the center reached by the defect."""
        if self.kind == CRACK:
            return interface_radius + self.diameter / 2
        return interface_radius + self.thickness

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "DefectSpec":
        return cls(**d)

    def label(self) -> str:
        deg = math.degrees(self.angle)
        if self.kind == CRACK:
            return f"crack@{deg:g}deg d={self.diameter * 1e3:g}mm"
        return (f"loosening@{deg:g}deg t={self.thickness * 1e3:g}mm "
                f"arc={self.arc_length:g}")


@dataclass(frozen=True)
class Scenario:
    """A numbered configuration; ``defect`` is None for the healthy baseline."""

    config_id: int
    defect: DefectSpec | None

    @property
    def name(self) -> str:
        return f"c{self.config_id:03d}"

    @property
    def label(self) -> str:
        return "healthy" if self.defect is None else self.defect.kind

    def to_dict(self) -> dict:
        return {"config_id": self.config_id, "name": self.name, "label": self.label,
                "defect": None if self.defect is None else self.defect.to_dict()}


def default_scenario_grid(
    crack_positions=CRACK_POSITIONS,
    crack_diameters=CRACK_DIAMETERS,
    loosening_positions=LOOSENING_POSITIONS,
    loosening_thicknesses=LOOSENING_THICKNESSES,
    loosening_arcs=LOOSENING_ARCS,
) -> list[Scenario]:
    """Healthy baseline (config 0), then loosening, then cracks.

    Loops nest position -> size parameters in declaration order, so the
    numbering is stable for a given set of parameter lists.
    """
    defects = [
        DefectSpec.loosening(pos, t, arc)
        for pos in loosening_positions
        for t in loosening_thicknesses
        for arc in loosening_arcs
    ]
    defects += [DefectSpec.crack(pos, d) for pos in crack_positions for d in crack_diameters]
    return [Scenario(0, None)] + [Scenario(i + 1, d) for i, d in enumerate(defects)]


@dataclass(frozen=True)
class SweepPlan:
    """Frequencies (Hz) and the actuator/receiver sensor indices to use."""

    frequencies: tuple[float, ...]
    actuators: tuple[int, ...]
    receivers: tuple[int, ...]
    sensor_count: int = field(default=8)

    def __post_init__(self):
        object.__setattr__(self, "frequencies", tuple(float(f) for f in self.frequencies))
        object.__setattr__(self, "actuators", tuple(int(a) for a in self.actuators))
        object.__setattr__(self, "receivers", tuple(int(r) for r in self.receivers))
        f = np.asarray(self.frequencies)
        if f.size == 0 or np.any(f <= 0) or np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be positive and strictly increasing")
        for name in ("actuators", "receivers"):
            idx = getattr(self, name)
            if not idx or len(set(idx)) != len(idx):
                raise ValueError(f"{name} must be a non-empty list of distinct indices")
            if min(idx) < 0 or max(idx) >= self.sensor_count:
                raise ValueError(f"{name} contains an index outside 0..{self.sensor_count - 1}")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.actuators) * len(self.receivers), len(self.frequencies)

    def row(self, actuator_pos: int, receiver_pos: int) -> int:
        return actuator_pos * len(self.receivers) + receiver_pos

    def channel(self, row: int) -> tuple[int, int]:
        """(actuator, receiver) sensor indices of a matrix row."""
        a, r = divmod(row, len(self.receivers))
        return self.actuators[a], self.receivers[r]

    def with_stride(self, stride: int) -> "SweepPlan":
        """Keep every ``stride``-th frequency, ending on the last one."""
        if stride < 1:
            raise ValueError("stride must be >= 1")
        freqs = self.frequencies[::-1][::stride][::-1]
        return SweepPlan(freqs, self.actuators, self.receivers, self.sensor_count)

    def to_dict(self) -> dict:
        return {"frequencies": list(self.frequencies), "actuators": list(self.actuators),
                "receivers": list(self.receivers), "sensor_count": self.sensor_count}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepPlan":
        return cls(d["frequencies"], d["actuators"], d["receivers"], d.get("sensor_count", 8))

    @property
    def plan_hash(self) -> str:
        return stable_hash(self.to_dict())


def default_sweep_plan(sensor_count: int = 8, stride: int = 1) -> SweepPlan:
    """1..300 kHz in 1 kHz steps, every sensor both actuating and receiving."""
    if sensor_count < 2:
        raise ValueError("sensor_count must be at least 2")
    sensors = tuple(range(sensor_count))
    plan = SweepPlan(tuple(1000.0 * k for k in range(1, 301)), sensors, sensors, sensor_count)
    return plan.with_stride(stride) if stride != 1 else plan


def case_count(grid, plan: SweepPlan) -> int:
    """Configurations (healthy included) x actuations x frequencies."""
    return len(grid) * len(plan.actuators) * len(plan.frequencies)
