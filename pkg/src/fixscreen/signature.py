"""Signature images: defect response minus healthy baseline, per channel and frequency."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import atomic_write_text, read_sidecar, write_sidecar
from .scenario import SweepPlan
from .solver import TransferMatrix

AMPLITUDE = "amplitude"
PHASE = "phase"


@dataclass
class SignatureImage:
    """Amplitude difference ``|T_d| - |T_h|`` and wrapped phase difference.

    Rows are channels, columns frequencies, exactly as in the source
    transfer matrices.
    """

    amplitude: np.ndarray
    phase: np.ndarray
    plan: SweepPlan
    defect_meta: dict = field(default_factory=dict)
    healthy_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.amplitude.shape != self.phase.shape:
            raise ValueError("amplitude and phase matrices differ in shape")
        if self.amplitude.shape != self.plan.shape:
            raise ValueError("signature shape does not match its plan")

    @property
    def shape(self) -> tuple[int, int]:
        return self.amplitude.shape

    @property
    def frequencies(self) -> np.ndarray:
        return np.asarray(self.plan.frequencies)

    @property
    def config_id(self):
        return self.defect_meta.get("config_id")

    def matrix(self, channel: str) -> np.ndarray:
        if channel == AMPLITUDE:
            return self.amplitude
        if channel == PHASE:
            return self.phase
        raise ValueError(f"unknown channel {channel!r}")


def wrap_phase(x: np.ndarray) -> np.ndarray:
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2 * np.pi)


def _provenance(tm: TransferMatrix) -> dict:
    return {"config_id": tm.config_id, "plan_hash": tm.plan_hash, "grid_h": tm.grid_h}


def build_signature(defect: TransferMatrix, healthy: TransferMatrix) -> SignatureImage:
    """Subtract the healthy baseline from a defect response."""
    if defect.data.shape != healthy.data.shape:
        raise ValueError(f"shape mismatch: {defect.data.shape} vs {healthy.data.shape}")
    if defect.plan_hash != healthy.plan_hash:
        raise ValueError("transfer matrices come from different sweep plans")
    if defect.grid_h != healthy.grid_h:
        raise ValueError("transfer matrices come from different phantom grids")
    amp = np.abs(defect.data) - np.abs(healthy.data)
    phase = wrap_phase(np.angle(defect.data) - np.angle(healthy.data))
    return SignatureImage(amp, phase, defect.plan, _provenance(defect), _provenance(healthy))


def normalization_max(sig: SignatureImage, channel: str = AMPLITUDE) -> float:
    """The per-image scale used by :func:`render_image` (|max| of the matrix)."""
    if channel == PHASE:
        return float(np.pi)
    return float(np.max(np.abs(sig.amplitude))) if sig.amplitude.size else 0.0


def render_image(sig: SignatureImage, channel: str = AMPLITUDE,
                 normalization: str = "per-run", scale: float | None = None) -> np.ndarray:
    """8-bit grayscale image, one pixel per matrix entry (height = channels).

    Amplitude pixels are ``|value| / scale``; with ``normalization="per-run"``
    the scale is this image's own maximum, with ``"global"`` the caller passes
    a shared ``scale`` (e.g. the maximum over a family of images). Phase
    pixels are ``|value| / pi``. Zero always maps to black.
    """
    values = np.abs(sig.matrix(channel))
    if channel == PHASE:
        scale = np.pi
    elif normalization == "per-run":
        scale = normalization_max(sig)
    elif normalization == "global":
        if scale is None:
            raise ValueError("global normalization needs an explicit scale")
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    if not scale or scale <= 0:
        return np.zeros(values.shape, dtype=np.uint8)
    pixels = np.floor(np.clip(values / scale, 0.0, 1.0) * 255.0 + 0.5)
    return pixels.astype(np.uint8)


def signature_metadata(sig: SignatureImage) -> dict:
    return {
        "rows": sig.shape[0],
        "cols": sig.shape[1],
        "plan_hash": sig.plan.plan_hash,
        "plan": sig.plan.to_dict(),
        "defect": sig.defect_meta,
        "healthy": sig.healthy_meta,
    }


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".meta")


def export_matrix(sig: SignatureImage, path) -> Path:
    """Write ``row,col,amplitude,phase`` CSV plus a ``.meta`` sidecar.

    Floats are written with ``repr`` so they read back bit-exactly.
    """
    path = Path(path)
    rows, cols = sig.shape
    r, c = np.divmod(np.arange(rows * cols), cols)
    amp = sig.amplitude.ravel()
    ph = sig.phase.ravel()
    lines = ["row,col,amplitude,phase"]
    lines += [f"{ri},{ci},{float(a)!r},{float(p)!r}" for ri, ci, a, p in zip(r, c, amp, ph)]
    try:
        atomic_write_text(path, "\n".join(lines) + "\n")
        write_sidecar(_sidecar_path(path), signature_metadata(sig))
    except OSError as exc:
        raise OSError(f"cannot write signature to {path}: {exc}") from exc
    return path


def import_matrix(path) -> SignatureImage:
    path = Path(path)
    meta = read_sidecar(_sidecar_path(path))
    rows, cols = meta["rows"], meta["cols"]
    amp = np.zeros((rows, cols))
    ph = np.zeros((rows, cols))
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "row,col,amplitude,phase":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            ri, ci, a, p = line.rstrip("\n").split(",")
            amp[int(ri), int(ci)] = float(a)
            ph[int(ri), int(ci)] = float(p)
    return SignatureImage(amp, ph, SweepPlan.from_dict(meta["plan"]),
                          meta.get("defect", {}), meta.get("healthy", {}))
