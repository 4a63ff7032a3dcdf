"""Observables extracted from signature images and the defect report built on them.

Horizontal bands are channel rows whose amplitude change stays high across
frequency; the onset frequency is the first frequency where the image lights
up above its quiet floor; the disturbance energy is the mean squared amplitude
change. The classifier, severity estimate and localizer are simple rules on
these features, with a nearest-neighbor library match alongside.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .scenario import SweepPlan
from .signature import SignatureImage

HEALTHY = "healthy"
CRACK = "crack"
LOOSENING = "loosening"


@dataclass(frozen=True)
class AnalysisParams:
    band_factor: float = 5.0
    onset_factor: float = 3.0
    lower_cutoff: float = 25e3      # Hz; band medians ignore lower frequencies
    pivot: float = 200e3            # Hz; low/high band energy split
    healthy_threshold: float = 1e-3  # total energy, (reading units)^2
    noise_decile: float = 0.1
    low_fraction_min: float = 0.5
    phase_weight: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisParams":
        return cls(**d)


@dataclass
class FeatureVector:
    row_energy: np.ndarray
    total_energy: float
    bands: list
    onset_frequency: float | None
    low_band_energy: float
    high_band_energy: float

    @property
    def low_fraction(self) -> float:
        total = self.low_band_energy + self.high_band_energy
        return self.low_band_energy / total if total > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "row_energy": [float(x) for x in self.row_energy],
            "total_energy": float(self.total_energy),
            "bands": [int(b) for b in self.bands],
            "onset_frequency": self.onset_frequency,
            "low_band_energy": float(self.low_band_energy),
            "high_band_energy": float(self.high_band_energy),
        }


def extract_features(sig: SignatureImage, params: AnalysisParams | None = None) -> FeatureVector:
    params = params or AnalysisParams()
    amp = sig.amplitude
    freqs = sig.frequencies
    sq = amp * amp
    row_energy = sq.mean(axis=1)
    total = float(sq.mean())

    upper = freqs > params.lower_cutoff
    bands = []
    if upper.any():
        mag = np.abs(amp[:, upper])
        global_median = float(np.median(mag))
        row_median = np.median(mag, axis=1)
        bands = [int(r) for r in np.flatnonzero(row_median > params.band_factor * global_median)]

    col_energy = sq.mean(axis=0)
    onset = None
    if np.any(col_energy > 0):
        k = max(1, int(math.ceil(params.noise_decile * col_energy.size)))
        floor = float(np.sort(col_energy)[:k].mean())
        lit = np.flatnonzero(col_energy > params.onset_factor * floor)
        if lit.size:
            onset = float(freqs[lit[0]])

    low = freqs < params.pivot
    return FeatureVector(row_energy, total, bands, onset,
                         float(sq[:, low].sum()), float(sq[:, ~low].sum()))


def classify(features: FeatureVector, params: AnalysisParams | None = None) -> tuple[str, float]:
    """Rule-based label and a confidence in [0, 1].

    Healthy below the energy threshold; crack when horizontal bands exist;
    loosening when there are no bands and the disturbance has substantial
    content below the pivot frequency. A banded-free image without that
    low-frequency content fits neither rule cleanly and is called a crack with
    low confidence.
    """
    params = params or AnalysisParams()
    if features.total_energy < params.healthy_threshold:
        return HEALTHY, 1.0
    if features.bands:
        return CRACK, 1.0
    if features.low_fraction >= params.low_fraction_min:
        return LOOSENING, 1.0
    return CRACK, 0.5


@dataclass
class Calibration:
    """Disturbance energy measured for known defect sizes at one location."""

    sizes: np.ndarray
    energies: np.ndarray

    def __post_init__(self):
        order = np.argsort(self.sizes)
        self.sizes = np.asarray(self.sizes, dtype=float)[order]
        self.energies = np.asarray(self.energies, dtype=float)[order]

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.energies) > 0))


@dataclass
class Severity:
    energy: float
    size_estimate: float | None = None
    extrapolated: bool = False


def estimate_severity(features: FeatureVector, calibration: Calibration | None = None) -> Severity:
    """Total disturbance energy, mapped to a size when a calibration is given.

    The size comes from piecewise-linear interpolation of the calibration's
    energy-to-size curve; energies outside the calibrated range are clamped
    to the end points and flagged.
    """
    energy = float(features.total_energy)
    if calibration is None or calibration.sizes.size == 0:
        return Severity(energy)
    if not calibration.monotone:
        raise ValueError("calibration energies must increase strictly with size")
    lo, hi = calibration.energies[0], calibration.energies[-1]
    size = float(np.interp(energy, calibration.energies, calibration.sizes))
    return Severity(energy, size, bool(energy < lo or energy > hi))


def channel_midpoint(angle_a: float, angle_b: float) -> float | None:
    """Circular midpoint of two sensor angles; None for diametrically opposite pairs."""
    z = complex(math.cos(angle_a) + math.cos(angle_b), math.sin(angle_a) + math.sin(angle_b))
    if abs(z) < 1e-9:
        return None
    return math.atan2(z.imag, z.real)


def localize(features: FeatureVector, sensor_angles, plan: SweepPlan,
             fallback: float | None = None) -> float | None:
    """Energy-weighted circular mean of the band channels' midpoint angles.

    Without bands (or when every band is a diametrical pair) the
    ``fallback`` angle is returned, typically the location of the nearest
    library match.
    """
    angles = np.asarray(sensor_angles, dtype=float)
    z = 0j
    for row in features.bands:
        a, r = plan.channel(row)
        mid = channel_midpoint(angles[a], angles[r])
        if mid is None:
            continue
        z += features.row_energy[row] * complex(math.cos(mid), math.sin(mid))
    if abs(z) == 0:
        return fallback
    return math.atan2(z.imag, z.real)


@dataclass
class LibraryEntry:
    signature: SignatureImage
    label: str
    config_id: int = 0
    angle: float | None = None


@dataclass
class Match:
    label: str
    distance: float
    index: int
    entry: LibraryEntry


def nn_match(sig: SignatureImage, library, phase_weight: float = 0.0) -> Match:
    """Library entry nearest in Frobenius norm of the amplitude matrices.

    ``phase_weight`` adds that multiple of the phase-matrix distance. Ties go
    to the lowest config id.
    """
    library = list(library)
    if not library:
        raise ValueError("nearest-neighbor library is empty")
    best = None
    for i, entry in enumerate(library):
        other = entry.signature
        if other.shape != sig.shape or other.plan.plan_hash != sig.plan.plan_hash:
            raise ValueError(f"library entry {entry.config_id} was built with a different plan")
        d = float(np.linalg.norm(sig.amplitude - other.amplitude))
        if phase_weight:
            d += phase_weight * float(np.linalg.norm(sig.phase - other.phase))
        key = (d, entry.config_id)
        if best is None or key < best[0]:
            best = (key, i)
    (d, _), i = best
    return Match(library[i].label, d, i, library[i])


@dataclass
class DefectReport:
    classification: str
    severity: float
    location_estimate: float | None
    confidence: float
    evidence: FeatureVector
    params: AnalysisParams = field(default_factory=AnalysisParams)
    config_id: int | None = None
    size_estimate: float | None = None
    size_extrapolated: bool = False
    nearest: dict | None = None

    def to_keyvalue(self) -> dict:
        return {
            "config_id": self.config_id,
            "classification": self.classification,
            "confidence": self.confidence,
            "severity": self.severity,
            "size_estimate": self.size_estimate,
            "size_extrapolated": self.size_extrapolated,
            "location_estimate": self.location_estimate,
            "location_estimate_deg": (None if self.location_estimate is None
                                      else math.degrees(self.location_estimate)),
            "nearest": self.nearest,
            "bands": [int(b) for b in self.evidence.bands],
            "onset_frequency": self.evidence.onset_frequency,
            "total_energy": self.evidence.total_energy,
            "low_band_energy": self.evidence.low_band_energy,
            "high_band_energy": self.evidence.high_band_energy,
            "params": self.params.to_dict(),
        }

    def to_text(self) -> str:
        ev = self.evidence
        lines = [
            f"Fixation report (config {self.config_id})",
            f"  condition:        {self.classification}  (confidence {self.confidence:.2f})",
            f"  disturbance:      {self.severity:.6g}",
        ]
        if self.size_estimate is not None:
            flag = "  [outside calibration]" if self.size_extrapolated else ""
            lines.append(f"  size estimate:    {self.size_estimate * 1e3:.3g} mm{flag}")
        if self.location_estimate is None:
            lines.append("  location:         n/a")
        else:
            lines.append(f"  location:         {math.degrees(self.location_estimate):.1f} deg")
        if self.nearest:
            lines.append(f"  nearest library:  config {self.nearest['config_id']} "
                         f"({self.nearest['label']}, distance {self.nearest['distance']:.4g})")
        onset = "none" if ev.onset_frequency is None else f"{ev.onset_frequency / 1e3:g} kHz"
        lines += [
            f"  bands:            {ev.bands if ev.bands else 'none'}",
            f"  onset frequency:  {onset}",
            f"  low/high energy:  {ev.low_band_energy:.4g} / {ev.high_band_energy:.4g}",
            "  parameters:       " + ", ".join(f"{k}={v}" for k, v in self.params.to_dict().items()),
        ]
        return "\n".join(lines) + "\n"


def analyze(sig: SignatureImage, sensor_angles, params: AnalysisParams | None = None,
            library=None, calibration: Calibration | None = None) -> DefectReport:
    """Features, label, severity and location for one signature.

    ``library`` entries with the same config id as ``sig`` are skipped, so a
    run library can be passed as-is for leave-one-out matching.
    """
    params = params or AnalysisParams()
    features = extract_features(sig, params)
    label, confidence = classify(features, params)
    severity = estimate_severity(features, calibration if label == CRACK else None)

    nearest = None
    fallback = None
    if library:
        others = [e for e in library if e.config_id != sig.config_id]
        if others:
            m = nn_match(sig, others, params.phase_weight)
            nearest = {"config_id": m.entry.config_id, "label": m.label, "distance": m.distance}
            fallback = m.entry.angle

    location = None
    if label != HEALTHY:
        location = localize(features, sensor_angles, sig.plan, fallback)
    return DefectReport(label, severity.energy, location, confidence, features, params,
                        sig.config_id, severity.size_estimate, severity.extrapolated, nearest)


def angular_error(a: float, b: float) -> float:
    """Absolute difference of two angles, in [0, pi]."""
    return abs(math.atan2(math.sin(a - b), math.cos(a - b)))
