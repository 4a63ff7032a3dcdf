"""Materials, concentric thigh geometry, rasterization, defects and sensors.

The phantom is a disk: skin and fat over muscle, a compact-bone ring filled
with marrow, and a titanium implant at the center. Everything is rasterized
onto a uniform square grid whose cell centers sit at integer multiples of the
spacing, so the origin is always a cell center and the raster is exactly
symmetric under 90 degree rotations and axis reflections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .scenario import DefectSpec

EXTERIOR = -1

# Region order doubles as the material index stored in the raster.
REGIONS = ("skin", "fat", "muscle", "compact_bone", "bone_marrow", "implant", "water")
SKIN, FAT, MUSCLE, BONE, MARROW, IMPLANT, WATER = range(len(REGIONS))

# Tolerance for "on the boundary" comparisons of squared distances; keeps the
# raster identical under exact grid symmetries despite trig round-off.
_TIE_RTOL = 1e-9


def derive_pwave_speed(youngs_modulus: float, poisson: float, density: float) -> float:
    """Plane P-wave speed sqrt(E(1-nu) / (rho(1+nu)(1-2nu)))."""
    if not density > 0:
        raise ValueError(f"density must be positive, got {density!r}")
    if not youngs_modulus > 0:
        raise ValueError(f"Young's modulus must be positive, got {youngs_modulus!r}")
    if not 0 <= poisson < 0.5:
        raise ValueError(f"Poisson's ratio must lie in [0, 0.5), got {poisson!r}")
    num = youngs_modulus * (1.0 - poisson)
    den = density * (1.0 + poisson) * (1.0 - 2.0 * poisson)
    return math.sqrt(num / den)


@dataclass(frozen=True)
class Material:
    """A homogeneous medium.

    Either give ``youngs_modulus`` and ``poisson`` (the speed is derived) or
    give ``speed`` directly, as for water.
    """

    name: str
    density: float
    youngs_modulus: float | None = None
    poisson: float | None = None
    speed: float | None = None

    def __post_init__(self):
        if not self.density > 0:
            raise ValueError(f"{self.name}: density must be positive")
        if self.speed is None:
            if self.youngs_modulus is None or self.poisson is None:
                raise ValueError(f"{self.name}: need either speed or (youngs_modulus, poisson)")
            derive_pwave_speed(self.youngs_modulus, self.poisson, self.density)
        elif not self.speed > 0:
            raise ValueError(f"{self.name}: speed must be positive")

    @property
    def pwave_speed(self) -> float:
        if self.speed is not None:
            return float(self.speed)
        return derive_pwave_speed(self.youngs_modulus, self.poisson, self.density)

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


# Soft tissue and bone rows are the tabulated literature values; titanium and
# water are handbook values.
DEFAULT_MATERIALS = {
    "muscle": Material("muscle", 1090.0, 2.762e9, 0.4),
    "skin": Material("skin", 1109.0, 2.900e9, 0.29),
    "fat": Material("fat", 911.0, 1.889e9, 0.29),
    "compact_bone": Material("compact_bone", 1376.0, 17e9, 0.29),
    "bone_marrow": Material("bone_marrow", 115.0, 0.520e9, 0.29),
    "implant": Material("titanium", 4506.0, 116e9, 0.32),
    "water": Material("water", 1000.0, speed=1480.0),
}


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry of the layered disk, in meters and radians."""

    outer_radius: float = 75e-3
    skin_thickness: float = 2e-3
    fat_thickness: float = 10e-3
    bone_outer_radius: float = 16e-3
    bone_thickness: float = 6e-3
    implant_radius: float = 6e-3
    sensor_count: int = 8
    sensor_aperture: float = math.radians(10.0)
    materials: dict = field(default_factory=lambda: dict(DEFAULT_MATERIALS))

    def __post_init__(self):
        self.validate()

    @property
    def marrow_radius(self) -> float:
        return self.bone_outer_radius - self.bone_thickness

    @property
    def muscle_radius(self) -> float:
        return self.outer_radius - self.fat_thickness - self.skin_thickness

    def boundaries(self) -> list[tuple[int, float]]:
        """(region, outer radius) pairs from the center outwards."""
        return [
            (IMPLANT, self.implant_radius),
            (MARROW, self.marrow_radius),
            (BONE, self.bone_outer_radius),
            (MUSCLE, self.muscle_radius),
            (FAT, self.outer_radius - self.skin_thickness),
            (SKIN, self.outer_radius),
        ]

    def validate(self) -> None:
        for name in ("outer_radius", "skin_thickness", "fat_thickness",
                     "bone_outer_radius", "bone_thickness", "implant_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        radii = [r for _, r in self.boundaries()]
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError(f"region radii are not strictly nested: {radii}")
        if self.sensor_count < 2:
            raise ValueError("sensor_count must be at least 2")
        if not 0 < self.sensor_aperture < 2 * math.pi / self.sensor_count:
            raise ValueError("sensor_aperture must be positive and smaller than the sensor spacing")
        missing = [r for r in REGIONS if r not in self.materials]
        if missing:
            raise ValueError(f"material table lacks entries for {missing}")

    def material_list(self) -> tuple[Material, ...]:
        return tuple(self.materials[r] for r in REGIONS)

    def sensor_angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.sensor_count) / self.sensor_count

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "outer_radius", "skin_thickness", "fat_thickness", "bone_outer_radius",
            "bone_thickness", "implant_radius", "sensor_count", "sensor_aperture")}
        d["materials"] = {k: m.to_dict() for k, m in self.materials.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        mats = dict(DEFAULT_MATERIALS)
        for region, md in d.pop("materials", {}).items():
            md = dict(md)
            mats[region] = Material(md.pop("name", region), **md)
        return cls(materials=mats, **d)


@dataclass(frozen=True)
class Sensor:
    index: int
    angle: float
    x: float
    y: float
    cells: np.ndarray  # flat grid indices of the aperture cells, sorted


@dataclass(frozen=True)
class RasterPhantom:
    """Material raster on an n-by-n grid, indexed ``[i, j]`` with x along i.

    Cell (i, j) is centered at ``((i - c) h, (j - c) h)`` with ``c = (n - 1) / 2``.
    """

    h: float
    n: int
    material_index: np.ndarray  # int8 (n, n); EXTERIOR outside the disk
    materials: tuple[Material, ...]
    sensors: tuple[Sensor, ...]
    spec: PhantomSpec | None = None
    defect: "DefectSpec | None" = None

    @property
    def nx(self) -> int:
        return self.n

    @property
    def ny(self) -> int:
        return self.n

    @property
    def interior(self) -> np.ndarray:
        return self.material_index != EXTERIOR

    @property
    def density(self) -> np.ndarray:
        """Per-cell density, NaN outside."""
        return self._lookup(np.array([m.density for m in self.materials]))

    @property
    def speed(self) -> np.ndarray:
        """Per-cell P-wave speed, NaN outside."""
        return self._lookup(np.array([m.pwave_speed for m in self.materials]))

    def _lookup(self, table: np.ndarray) -> np.ndarray:
        out = np.full(self.material_index.shape, np.nan)
        inside = self.interior
        out[inside] = table[self.material_index[inside]]
        return out

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        return grid_coordinates(self.n, self.h)

    def cell_at(self, x: float, y: float) -> tuple[int, int]:
        c = (self.n - 1) // 2
        return c + int(round(x / self.h)), c + int(round(y / self.h))

    def material_at(self, x: float, y: float) -> str:
        i, j = self.cell_at(x, y)
        if not (0 <= i < self.n and 0 <= j < self.n):
            return "exterior"
        k = self.material_index[i, j]
        return "exterior" if k == EXTERIOR else REGIONS[k]

    def count(self, region: int) -> int:
        return int(np.count_nonzero(self.material_index == region))

    def sensor_angles(self) -> np.ndarray:
        return np.array([s.angle for s in self.sensors])

    def with_materials(self, material_index: np.ndarray, defect=None) -> "RasterPhantom":
        return replace(self, material_index=material_index, defect=defect)


def grid_coordinates(n: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Cell-center coordinates (X, Y), each (n, n), indexing='ij'."""
    offsets = np.arange(n) - (n - 1) // 2
    x = offsets * h
    return np.meshgrid(x, x, indexing="ij")


def _classify(r2: np.ndarray, spec: PhantomSpec) -> np.ndarray:
    """Region index per cell from squared radius; ties go to the inner region."""
    out = np.full(r2.shape, EXTERIOR, dtype=np.int8)
    for region, radius in reversed(spec.boundaries()):
        out[r2 <= radius * radius * (1 + _TIE_RTOL)] = region
    return out


def _check_resolution(spec: PhantomSpec, h: float) -> None:
    radii = [0.0] + [r for _, r in spec.boundaries()]
    thinnest = min(b - a for a, b in zip(radii, radii[1:]))
    if thinnest < 2 * h * (1 - _TIE_RTOL):
        raise ValueError(
            f"grid spacing h={h:g} m does not resolve the thinnest layer "
            f"({thinnest:g} m) with at least 2 cells")


def boundary_cells(interior: np.ndarray) -> np.ndarray:
    """Interior cells with at least one exterior 4-neighbor."""
    padded = np.pad(interior, 1, constant_values=False)
    all_neighbors_in = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                        & padded[1:-1, :-2] & padded[1:-1, 2:])
    return interior & ~all_neighbors_in


def sensor_layout(spec: PhantomSpec, h: float | None = None,
                  interior: np.ndarray | None = None) -> tuple[Sensor, ...]:
    """Sensors at angles 2 pi k / N on the outer boundary.

    With a grid (``h`` and the ``interior`` mask) each sensor also gets its
    aperture: the boundary cells within half the aperture angle of the sensor
    direction. Without a grid the cell sets are empty.
    """
    angles = spec.sensor_angles()
    if h is None:
        return tuple(
            Sensor(k, float(a), spec.outer_radius * math.cos(a),
                   spec.outer_radius * math.sin(a), np.empty(0, dtype=np.int64))
            for k, a in enumerate(angles))

    n = interior.shape[0]
    X, Y = grid_coordinates(n, h)
    edge = boundary_cells(interior)
    flat = np.flatnonzero(edge)
    ex, ey = X.ravel()[flat], Y.ravel()[flat]
    r = np.hypot(ex, ey)
    cos_half = math.cos(spec.sensor_aperture / 2)

    sensors = []
    for k, a in enumerate(angles):
        ca, sa = _clean_unit(a)
        # cos of the angular distance; avoids wrapping issues with atan2
        cos_d = (ex * ca + ey * sa) / r
        cells = np.sort(flat[cos_d >= cos_half])
        if cells.size == 0:
            raise ValueError(f"sensor {k} aperture contains no boundary cells; refine h "
                             "or widen sensor_aperture")
        sensors.append(Sensor(k, float(a), spec.outer_radius * ca,
                              spec.outer_radius * sa, cells))

    seen = np.concatenate([s.cells for s in sensors])
    if np.unique(seen).size != seen.size:
        raise ValueError("sensor apertures overlap")
    return tuple(sensors)


def _clean_unit(angle: float) -> tuple[float, float]:
    """(cos, sin) with round-off near 0 and +-1 snapped to exact values."""
    c, s = math.cos(angle), math.sin(angle)
    out = []
    for v in (c, s):
        if abs(v) < 1e-12:
            v = 0.0
        elif abs(abs(v) - 1) < 1e-12:
            v = math.copysign(1.0, v)
        out.append(v)
    return out[0], out[1]


def build_phantom(spec: PhantomSpec | None = None, h: float = 0.5e-3) -> RasterPhantom:
    """Rasterize ``spec`` by the cell-center rule at spacing ``h``."""
    spec = spec or PhantomSpec()
    if not h > 0:
        raise ValueError("grid spacing must be positive")
    spec.validate()
    _check_resolution(spec, h)

    half = int(math.ceil(spec.outer_radius / h * (1 - _TIE_RTOL)))
    n = 2 * half + 1
    X, Y = grid_coordinates(n, h)
    index = _classify(X * X + Y * Y, spec)
    sensors = sensor_layout(spec, h, index != EXTERIOR)
    return RasterPhantom(h=h, n=n, material_index=index, materials=spec.material_list(),
                         sensors=sensors, spec=spec)


def apply_defect(phantom: RasterPhantom, defect: "DefectSpec") -> RasterPhantom:
    """Return a copy of ``phantom`` with the defect region filled with water.

    Cracks are disks centered on the implant-marrow interface; every implant or
    marrow cell whose center lies in the disk becomes water. A crack too small
    to contain any cell center still occupies the single cell nearest its
    center, so no positive-size crack vanishes from the raster.

    Loosening is a layer on the marrow side of the interface spanning
    ``arc_length`` of the full circle around ``defect.angle``. Marrow cells
    within ``thickness`` of the implant surface become water, and so does the
    first marrow cell row touching the implant, which keeps sub-cell layers
    contiguous.
    """
    spec = phantom.spec
    if spec is None:
        raise ValueError("phantom carries no PhantomSpec; cannot place an interface defect")
    if defect.size < 0:
        raise ValueError("defect size must be non-negative")
    if defect.size == 0:
        return phantom

    r_imp = spec.implant_radius
    if defect.extent_outward(r_imp) >= spec.marrow_radius:
        raise ValueError(
            f"defect reaches {defect.extent_outward(r_imp):g} m from the center, beyond the "
            f"marrow region (inner bone radius {spec.marrow_radius:g} m)")
    if defect.kind == "crack" and defect.diameter / 2 >= r_imp:
        raise ValueError("crack is larger than the implant")

    X, Y = phantom.coordinates()
    index = phantom.material_index
    host = (index == IMPLANT) | (index == MARROW)

    if defect.kind == "crack":
        ca, sa = _clean_unit(defect.angle)
        cx, cy = r_imp * ca, r_imp * sa
        rad = defect.diameter / 2
        d2 = (X - cx) ** 2 + (Y - cy) ** 2
        region = host & (d2 <= rad * rad * (1 + _TIE_RTOL))
        if not region.any():
            region = np.zeros_like(host)
            region[phantom.cell_at(cx, cy)] = True
            if not host[region].all():
                raise ValueError("crack center does not fall in the implant or marrow")
    else:
        r2 = X * X + Y * Y
        outer = r_imp + defect.thickness
        in_shell = (index == MARROW) & (r2 <= outer * outer * (1 + _TIE_RTOL))
        implant = index == IMPLANT
        padded = np.pad(implant, 1, constant_values=False)
        touches = (padded[:-2, 1:-1] | padded[2:, 1:-1] | padded[1:-1, :-2] | padded[1:-1, 2:])
        layer = in_shell | ((index == MARROW) & touches)
        region = layer & _within_arc(X, Y, defect.angle, defect.arc_length)

    new_index = index.copy()
    new_index[region] = WATER
    return phantom.with_materials(new_index, defect=defect)


def _within_arc(X, Y, angle: float, arc_fraction: float) -> np.ndarray:
    if arc_fraction >= 1:
        return np.ones(X.shape, dtype=bool)
    ca, sa = _clean_unit(angle)
    r = np.hypot(X, Y)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_d = np.where(r > 0, (X * ca + Y * sa) / r, 1.0)
    return cos_d >= math.cos(math.pi * arc_fraction) - _TIE_RTOL


def material_image(phantom: RasterPhantom) -> np.ndarray:
    """Material raster as grayscale: exterior black, regions evenly spaced.

    The image is oriented with +y up and +x to the right.
    """
    levels = np.linspace(40, 255, len(REGIONS)).astype(np.uint8)
    img = np.zeros(phantom.material_index.shape, dtype=np.uint8)
    inside = phantom.interior
    img[inside] = levels[phantom.material_index[inside]]
    return np.ascontiguousarray(img.T[::-1])
