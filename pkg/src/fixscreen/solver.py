"""Time-harmonic scalar wave solver on a raster phantom.

The operator discretizes

    div((1/rho) grad p) + omega^2 / (rho c^2) p = 0

with a cell-centered five-point stencil. Faces between interior cells carry
the harmonic mean of 1/rho, faces against the exterior carry no flux (a
reflecting outer surface), and an actuating sensor injects a unit total normal
flux spread evenly over its aperture cells. After multiplying through by -h^2
the system matrix is

    A = K - M,   K_pq = -2/(rho_p + rho_q),   K_pp = sum_q 2/(rho_p + rho_q),
                 M_pp = (omega h)^2 / (rho_p c_p^2 (1 + i eta)),

which is complex symmetric. ``eta`` is a small loss tangent on the bulk
modulus that keeps the closed, otherwise lossless cavity away from exact
resonances.

Receivers read the aperture-averaged field, i.e. the same vector that injects
the source, so ``T[i, j] == T[j, i]`` up to round-off.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from pathlib import Path

from .io import atomic_write_bytes, atomic_write_text, read_sidecar, write_sidecar
from .phantom import RasterPhantom, grid_coordinates
from .scenario import SweepPlan

log = logging.getLogger(__name__)

QUALITY_OK = "ok"
QUALITY_ILL = "ill-conditioned"


class SolverError(RuntimeError):
    """Singular or unusable system at a given angular frequency."""

    def __init__(self, message: str, omega: float | None = None, context: dict | None = None):
        self.omega = omega
        self.context = dict(context or {})
        detail = ", ".join(f"{k}={v}" for k, v in self.context.items())
        if omega is not None:
            message = f"{message} (omega={omega:.6g} rad/s{', ' + detail if detail else ''})"
        super().__init__(message)


class ResolutionError(ValueError):
    """The grid has too few points per wavelength at the requested frequency."""


@dataclass(frozen=True)
class SolverSettings:
    loss_tangent: float = 0.005
    min_points_per_wavelength: float = 6.0
    cond_limit: float = 1e12
    residual_limit: float = 1e-10
    method: str = "lowrank"  # "direct" refactorizes every defect phantom

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverSettings":
        return cls(**d)


@dataclass
class HelmholtzSystem:
    omega: float
    operator: sp.csc_matrix
    rhs: np.ndarray          # (N,) or (N, k)
    cells: np.ndarray        # flat grid index of each unknown
    shape: tuple[int, int]   # grid shape, for mapping back

    @property
    def size(self) -> int:
        return self.operator.shape[0]


@dataclass
class FieldSolution:
    omega: float
    values: np.ndarray       # (N,) or (N, k) complex
    cells: np.ndarray
    shape: tuple[int, int]
    residual: float = 0.0
    condition: float | None = None

    def grid(self, column: int = 0) -> np.ndarray:
        """Field on the full grid, NaN outside the phantom."""
        vals = self.values if self.values.ndim == 1 else self.values[:, column]
        out = np.full(self.shape[0] * self.shape[1], np.nan, dtype=complex)
        out[self.cells] = vals
        return out.reshape(self.shape)


@dataclass
class TransferMatrix:
    """Channel-by-frequency complex response of one configuration.

    Row ``a * len(receivers) + r`` holds actuator ``actuators[a]`` read at
    receiver ``receivers[r]``.
    """

    data: np.ndarray
    plan: SweepPlan
    config_id: int = 0
    grid_h: float = 0.0
    settings: dict = field(default_factory=dict)
    quality: list = field(default_factory=list)

    def __post_init__(self):
        if self.data.shape != self.plan.shape:
            raise ValueError(f"data shape {self.data.shape} does not match plan {self.plan.shape}")

    @property
    def plan_hash(self) -> str:
        return self.plan.plan_hash

    @property
    def frequencies(self) -> np.ndarray:
        return np.asarray(self.plan.frequencies)

    def metadata(self) -> dict:
        return {
            "config_id": self.config_id,
            "grid_h": self.grid_h,
            "plan_hash": self.plan_hash,
            "plan": self.plan.to_dict(),
            "settings": self.settings,
            "quality": list(self.quality),
            "rows": self.data.shape[0],
            "cols": self.data.shape[1],
        }


def interior_index(phantom: RasterPhantom) -> tuple[np.ndarray, np.ndarray]:
    """(unknown number per grid cell or -1, flat grid index per unknown)."""
    inside = phantom.interior.ravel()
    cells = np.flatnonzero(inside)
    number = np.full(inside.size, -1, dtype=np.int64)
    number[cells] = np.arange(cells.size)
    return number, cells


def _mass_coefficient(rho, c, omega, h, loss_tangent):
    return (omega * h) ** 2 / (rho * c * c * (1.0 + 1j * loss_tangent))


def check_resolution(phantom: RasterPhantom, omega: float, min_ppw: float) -> None:
    c_min = np.nanmin(phantom.speed)
    ppw = 2 * np.pi * c_min / (omega * phantom.h)
    if ppw < min_ppw:
        raise ResolutionError(
            f"{ppw:.2f} points per wavelength at {omega / (2 * np.pi):.6g} Hz "
            f"(slowest speed {c_min:g} m/s, h={phantom.h:g} m); need {min_ppw:g}")


def assemble_operator(phantom: RasterPhantom, omega: float, loss_tangent: float = 0.005,
                      rho: np.ndarray | None = None, c: np.ndarray | None = None) -> sp.csc_matrix:
    """Sparse symmetric system matrix over the interior cells.

    ``rho`` and ``c`` override the phantom's lookups (used by the
    manufactured-solution tests with smooth coefficient fields).
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    number, cells = interior_index(phantom)
    n = phantom.n
    rho = (phantom.density if rho is None else rho).ravel()
    c = (phantom.speed if c is None else c).ravel()
    N = cells.size

    rows, cols, vals = [], [], []
    diag = np.zeros(N, dtype=complex)
    grid = number.reshape(n, n)
    for di, dj in ((1, 0), (0, 1)):
        a = grid[: n - di, : n - dj].ravel()
        b = grid[di:, dj:].ravel()
        both = (a >= 0) & (b >= 0)
        a, b = a[both], b[both]
        coef = 2.0 / (rho[cells[a]] + rho[cells[b]])
        rows += [a, b]
        cols += [b, a]
        vals += [-coef, -coef]
        np.add.at(diag, a, coef)
        np.add.at(diag, b, coef)
    diag -= _mass_coefficient(rho[cells], c[cells], omega, phantom.h, loss_tangent)
    rows.append(np.arange(N))
    cols.append(np.arange(N))
    vals.append(diag)
    A = sp.coo_matrix(
        (np.concatenate(vals).astype(complex), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N))
    return A.tocsc()


def aperture_vectors(phantom: RasterPhantom, sensors=None) -> np.ndarray:
    """(N, k) matrix whose column k spreads unit weight over sensor k's aperture."""
    number, cells = interior_index(phantom)
    sensors = range(len(phantom.sensors)) if sensors is None else sensors
    sensors = list(sensors)
    B = np.zeros((cells.size, len(sensors)))
    for col, k in enumerate(sensors):
        ap = phantom.sensors[k].cells
        B[number[ap], col] = 1.0 / ap.size
    return B


def assemble_system(phantom: RasterPhantom, omega: float, actuator: int | None = None,
                    settings: SolverSettings | None = None) -> HelmholtzSystem:
    """Operator plus the unit-flux source of ``actuator`` (all sensors if None)."""
    settings = settings or SolverSettings()
    check_resolution(phantom, omega, settings.min_points_per_wavelength)
    if actuator is not None and not 0 <= actuator < len(phantom.sensors):
        raise ValueError(f"actuator {actuator} out of range")
    A = assemble_operator(phantom, omega, settings.loss_tangent)
    _, cells = interior_index(phantom)
    B = aperture_vectors(phantom, None if actuator is None else [actuator])
    rhs = B[:, 0] if actuator is not None else B
    return HelmholtzSystem(omega, A, rhs.astype(complex), cells, (phantom.n, phantom.n))


def factorize(A: sp.spmatrix, omega: float):
    try:
        return spla.splu(sp.csc_matrix(A), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}", omega) from exc


def _condition_estimate(A, lu) -> float:
    op = spla.LinearOperator(A.shape, matvec=lu.solve, rmatvec=lambda x: lu.solve(x, trans="T"),
                             dtype=complex)
    # onenormest uses random starting vectors; pin them so reruns are identical
    state = np.random.get_state()
    np.random.seed(0)
    try:
        inv_norm = spla.onenormest(op)
    finally:
        np.random.set_state(state)
    return float(spla.norm(A, 1) * inv_norm)


def _solve(A, lu, rhs, omega, estimate_condition=False):
    x = lu.solve(np.asarray(rhs, dtype=complex))
    if not np.all(np.isfinite(x)):
        raise SolverError("solution is not finite (singular system)", omega)
    bnorm = np.linalg.norm(rhs)
    residual = float(np.linalg.norm(A @ x - rhs) / bnorm) if bnorm > 0 else 0.0
    cond = _condition_estimate(A, lu) if estimate_condition else None
    return x, residual, cond


def solve_field(system: HelmholtzSystem, estimate_condition: bool = False) -> FieldSolution:
    """Direct sparse LU solve of ``system``."""
    lu = factorize(system.operator, system.omega)
    x, residual, cond = _solve(system.operator, lu, system.rhs, system.omega, estimate_condition)
    return FieldSolution(system.omega, x, system.cells, system.shape, residual, cond)


def sample_channels(field: FieldSolution, phantom: RasterPhantom,
                    receivers=None) -> np.ndarray:
    """Aperture-averaged field at each receiver (self-channel included).

    Returns shape (len(receivers),) for a single-source field or
    (len(receivers), k) for a multi-column field.
    """
    B = aperture_vectors(phantom, receivers)
    return B.T @ field.values


@dataclass
class FrequencyResult:
    """Channel readings at one frequency: ``base`` and one column per variant."""

    index: int
    base: np.ndarray
    variants: list
    quality: str
    condition: float
    residual: float
    errors: dict = field(default_factory=dict)


def _readings_column(T: np.ndarray, plan: SweepPlan) -> np.ndarray:
    # T[r, a]: receiver-by-actuator over all sensors
    return np.array([T[r, a] for a in plan.actuators for r in plan.receivers])


def solve_frequency(phantom: RasterPhantom, plan: SweepPlan, index: int,
                    variants=(), settings: SolverSettings | None = None,
                    support: np.ndarray | None = None) -> FrequencyResult:
    """All channels at ``plan.frequencies[index]`` for ``phantom`` and each variant.

    Variants are phantoms on the same grid differing from ``phantom`` in a
    few cells. With ``settings.method == "lowrank"`` they reuse the base
    factorization through a Woodbury update over the changed stencil rows;
    ``"direct"`` refactorizes each one.

    ``support`` fixes the set of unknowns whose inverse block is computed for
    the low-rank path (it must cover every variant's changed rows). Passing
    the same support on every call makes a variant's result independent of
    which other variants share the call.

    A variant that cannot be solved gets ``None`` in ``variants`` and a
    message in ``errors``; a failure of the base system raises.
    """
    settings = settings or SolverSettings()
    omega = 2 * np.pi * plan.frequencies[index]
    check_resolution(phantom, omega, settings.min_points_per_wavelength)
    errors = {}
    for i, ph in enumerate(variants):
        try:
            check_resolution(ph, omega, settings.min_points_per_wavelength)
        except ResolutionError as exc:
            errors[i] = str(exc)
    usable = [i for i in range(len(variants)) if i not in errors]

    A = assemble_operator(phantom, omega, settings.loss_tangent)
    B = aperture_vectors(phantom).astype(complex)
    lu = factorize(A, omega)
    X, residual, cond = _solve(A, lu, B, omega, estimate_condition=True)
    T = B.T @ X
    quality = QUALITY_OK if cond < settings.cond_limit and residual <= settings.residual_limit \
        else QUALITY_ILL
    base = _readings_column(T, plan)

    cols = [None] * len(variants)
    if settings.method == "direct":
        for i in usable:
            try:
                Av = assemble_operator(variants[i], omega, settings.loss_tangent)
                luv = factorize(Av, omega)
                Xv, res_v, _ = _solve(Av, luv, B, omega)
            except SolverError as exc:
                errors[i] = str(exc)
                continue
            if res_v > settings.residual_limit:
                quality = QUALITY_ILL
            cols[i] = _readings_column(B.T @ Xv, plan)
    elif settings.method == "lowrank":
        updated = _lowrank_variants(phantom, [variants[i] for i in usable], omega, settings,
                                    lu, X, T, support)
        for i, Tv in zip(usable, updated):
            if isinstance(Tv, str):
                errors[i] = Tv
            else:
                cols[i] = _readings_column(Tv, plan)
    else:
        raise ValueError(f"unknown solver method {settings.method!r}")
    return FrequencyResult(index, base, cols, quality, cond, residual, errors)


def _stencil_rows(phantom: RasterPhantom, changed: np.ndarray) -> np.ndarray:
    """Unknown numbers of changed cells and their interior 4-neighbors."""
    n = phantom.n
    mask = changed.reshape(n, n)
    grown = mask.copy()
    grown[1:, :] |= mask[:-1, :]
    grown[:-1, :] |= mask[1:, :]
    grown[:, 1:] |= mask[:, :-1]
    grown[:, :-1] |= mask[:, 1:]
    grown &= phantom.interior
    number, _ = interior_index(phantom)
    return number[np.flatnonzero(grown.ravel())]


def _local_block(phantom: RasterPhantom, unknowns: np.ndarray, omega: float,
                 loss_tangent: float) -> np.ndarray:
    """Dense block A[unknowns][:, unknowns] built from the same formulas as
    :func:`assemble_operator`. Row p is exact when all of p's neighbors with a
    changed coefficient are in ``unknowns``."""
    number, cells = interior_index(phantom)
    n = phantom.n
    rho = phantom.density.ravel()
    c = phantom.speed.ravel()
    pos = {int(u): k for k, u in enumerate(unknowns)}
    m = unknowns.size
    block = np.zeros((m, m), dtype=complex)
    flat = cells[unknowns]
    i, j = np.divmod(flat, n)
    for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ii, jj = i + di, j + dj
        ok = (ii >= 0) & (ii < n) & (jj >= 0) & (jj < n)
        nb = np.full(m, -1)
        nb[ok] = ii[ok] * n + jj[ok]
        nb_num = np.where(nb >= 0, number[np.maximum(nb, 0)], -1)
        has = nb_num >= 0
        coef = np.zeros(m)
        coef[has] = 2.0 / (rho[flat[has]] + rho[nb[has]])
        block[np.arange(m), np.arange(m)] += coef
        for k in np.flatnonzero(has):
            q = pos.get(int(nb_num[k]))
            if q is not None:
                block[k, q] = -coef[k]
    block[np.arange(m), np.arange(m)] -= _mass_coefficient(rho[flat], c[flat], omega,
                                                           phantom.h, loss_tangent)
    return block


def variant_support(phantom: RasterPhantom, variant: RasterPhantom) -> np.ndarray:
    """Unknowns whose operator rows differ between ``phantom`` and ``variant``."""
    if variant.n != phantom.n or variant.h != phantom.h:
        raise ValueError("variant phantom is on a different grid")
    if not np.array_equal(variant.interior, phantom.interior):
        raise ValueError("variant phantom changes the domain shape")
    changed = variant.material_index.ravel() != phantom.material_index.ravel()
    return _stencil_rows(phantom, changed)


def support_union(phantom: RasterPhantom, variants) -> np.ndarray:
    parts = [variant_support(phantom, v) for v in variants]
    return np.unique(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)


def _lowrank_variants(phantom, variants, omega, settings, lu, X, T, union=None):
    if not variants:
        return []
    supports = [variant_support(phantom, ph) for ph in variants]
    if union is None:
        union = np.unique(np.concatenate(supports))
    G = _inverse_block(lu, union, X.shape[0])
    out = []
    for ph, S in zip(variants, supports):
        if S.size == 0:
            out.append(T.copy())
            continue
        upos = np.searchsorted(union, S)
        if np.any(upos >= union.size) or np.any(union[np.minimum(upos, union.size - 1)] != S):
            raise ValueError("support does not cover a variant's changed rows")
        D = (_local_block(ph, S, omega, settings.loss_tangent)
             - _local_block(phantom, S, omega, settings.loss_tangent))
        G_SS = G[np.ix_(upos, upos)]
        X_S = X[S]
        try:
            core = np.linalg.solve(np.eye(S.size) + D @ G_SS, D @ X_S)
        except np.linalg.LinAlgError as exc:
            out.append(f"low-rank update is singular: {exc} (omega={omega:.6g} rad/s)")
            continue
        Tv = T - X_S.T @ core
        if not np.all(np.isfinite(Tv)):
            out.append(f"low-rank update is not finite (omega={omega:.6g} rad/s)")
            continue
        out.append(Tv)
    return out


def _inverse_block(lu, unknowns: np.ndarray, N: int, chunk: int = 128) -> np.ndarray:
    """(A^{-1})[unknowns][:, unknowns] by solving against unit vectors."""
    m = unknowns.size
    G = np.empty((m, m), dtype=complex)
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        E = np.zeros((N, stop - start), dtype=complex)
        E[unknowns[start:stop], np.arange(stop - start)] = 1.0
        G[:, start:stop] = lu.solve(E)[unknowns]
    return G


def transfer_matrix(phantom: RasterPhantom, plan: SweepPlan,
                    settings: SolverSettings | None = None, config_id: int = 0,
                    source_amplitude: float = 1.0) -> TransferMatrix:
    """Full actuation rotation over every frequency, direct solves only."""
    settings = settings or SolverSettings()
    if plan.sensor_count != len(phantom.sensors):
        raise ValueError("plan and phantom disagree on the sensor count")
    data = np.empty(plan.shape, dtype=complex)
    quality = []
    for k in range(len(plan.frequencies)):
        try:
            res = solve_frequency(phantom, plan, k, (), settings)
        except SolverError as exc:
            exc.context.setdefault("config", config_id)
            raise
        data[:, k] = source_amplitude * res.base
        quality.append(res.quality)
    return TransferMatrix(data, plan, config_id, phantom.h, settings.to_dict(), quality)


def field_snapshot(phantom: RasterPhantom, frequency: float, actuator: int,
                   settings: SolverSettings | None = None) -> np.ndarray:
    """Complex field on the full grid (NaN outside) for one actuation."""
    system = assemble_system(phantom, 2 * np.pi * frequency, actuator, settings)
    return solve_field(system).grid()


def radial_profile(field_grid: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Field along the +x half-axis: (radius, values)."""
    n = field_grid.shape[0]
    c = (n - 1) // 2
    vals = field_grid[c:, c]
    keep = np.isfinite(vals)
    X, _ = grid_coordinates(n, h)
    return X[c:, c][keep], vals[keep]


# Binary layout: row-major (rows, cols) complex128 as little-endian float64
# (real, imag) pairs, no header; shape and plan live in the sidecar.
_BIN_DTYPE = np.dtype("<c16")


def save_transfer_matrix(tm: TransferMatrix, stem, fmt: str = "bin") -> list[Path]:
    """Write ``<stem>.meta`` plus ``<stem>.bin`` or ``<stem>.csv``; returns the paths."""
    stem = Path(stem)
    meta = tm.metadata()
    meta["format"] = fmt
    if fmt == "bin":
        data_path = stem.with_suffix(".bin")
        atomic_write_bytes(data_path, np.ascontiguousarray(tm.data, dtype=_BIN_DTYPE).tobytes())
    elif fmt == "csv":
        data_path = stem.with_suffix(".csv")
        freqs = tm.plan.frequencies
        lines = ["row_index,freq_hz,real,imag"]
        for r in range(tm.data.shape[0]):
            for k, f in enumerate(freqs):
                v = tm.data[r, k]
                lines.append(f"{r},{f!r},{float(v.real)!r},{float(v.imag)!r}")
        atomic_write_text(data_path, "\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")
    meta_path = stem.with_suffix(".meta")
    write_sidecar(meta_path, meta)
    return [data_path, meta_path]


def load_transfer_matrix(stem) -> TransferMatrix:
    stem = Path(stem)
    meta = read_sidecar(stem.with_suffix(".meta"))
    plan = SweepPlan.from_dict(meta["plan"])
    rows, cols = meta["rows"], meta["cols"]
    if meta.get("format", "bin") == "bin":
        raw = stem.with_suffix(".bin").read_bytes()
        data = np.frombuffer(raw, dtype=_BIN_DTYPE).astype(complex).reshape(rows, cols)
    else:
        data = np.zeros((rows, cols), dtype=complex)
        col_of = {f: k for k, f in enumerate(plan.frequencies)}
        with open(stem.with_suffix(".csv")) as fh:
            fh.readline()
            for line in fh:
                r, f, re, im = line.rstrip("\n").split(",")
                data[int(r), col_of[float(f)]] = complex(float(re), float(im))
    return TransferMatrix(data, plan, meta["config_id"], meta["grid_h"],
                          meta.get("settings", {}), meta.get("quality", []))
