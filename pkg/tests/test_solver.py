import math

import numpy as np
import pytest
import scipy.sparse as sp
import sympy
from scipy.signal import argrelmin

from fixscreen import (DefectSpec, SolverSettings, SweepPlan, apply_defect, assemble_system,
                       sample_channels, solve_field, transfer_matrix)
from fixscreen.phantom import DEFAULT_MATERIALS, EXTERIOR, WATER, RasterPhantom
from fixscreen.solver import (ResolutionError, assemble_operator, factorize, interior_index,
                              load_transfer_matrix, radial_profile, save_transfer_matrix,
                              solve_frequency, support_union)

FREQ = 60e3


def _water_disk(phantom):
    index = np.where(phantom.interior, WATER, EXTERIOR).astype(np.int8)
    return phantom.with_materials(index)


def _permuted_rows(data, shift, n=8):
    out = np.empty_like(data)
    for a in range(n):
        for r in range(n):
            out[((a + shift) % n) * n + (r + shift) % n] = data[a * n + r]
    return out


def test_operator_structure(coarse_phantom):
    A = assemble_operator(_water_disk(coarse_phantom), 2 * np.pi * FREQ)
    assert abs(A - A.T).max() == 0
    assert np.diff(sp.csr_matrix(A).indptr).max() <= 5


def test_rhs_only_on_actuator_aperture(coarse_phantom):
    system = assemble_system(coarse_phantom, 2 * np.pi * FREQ, actuator=3)
    number, _ = interior_index(coarse_phantom)
    support = np.flatnonzero(system.rhs)
    assert np.array_equal(np.sort(support), np.sort(number[coarse_phantom.sensors[3].cells]))
    assert system.rhs.sum() == pytest.approx(1.0)


def _mms_errors(rho_expr, sizes=(20, 40, 80)):
    """L2 error of the discrete solution against a manufactured field.

    The field has zero normal derivative on the square's edges, so it also
    satisfies the closed (Neumann) boundary; the source is derived symbolically.
    """
    x, y = sympy.symbols("x y")
    omega, eta = 3.0, 0.005
    p = sympy.cos(2 * sympy.pi * x) * sympy.cos(sympy.pi * y)
    rho = rho_expr(x, y)
    c = 1 + sympy.Rational(1, 4) * sympy.cos(sympy.pi * x)
    source = (-(sympy.diff(sympy.diff(p, x) / rho, x) + sympy.diff(sympy.diff(p, y) / rho, y))
              - omega ** 2 / (rho * c ** 2 * (1 + 1j * eta)) * p)
    f, pe, rf, cf = (sympy.lambdify((x, y), e, "numpy") for e in (source, p, rho, c))
    errors = []
    for n in sizes:
        h = 1.0 / n
        centers = (np.arange(n) + 0.5) * h
        X, Y = np.meshgrid(centers, centers, indexing="ij")
        square = RasterPhantom(h, n, np.zeros((n, n), np.int8), (DEFAULT_MATERIALS["water"],), ())
        rho_g = np.broadcast_to(rf(X, Y), X.shape).astype(float)
        c_g = np.broadcast_to(cf(X, Y), X.shape).astype(float)
        A = assemble_operator(square, omega, eta, rho=rho_g, c=c_g)
        u = factorize(A, omega).solve((h * h * f(X, Y)).ravel().astype(complex))
        errors.append(np.sqrt(np.mean(np.abs(u - pe(X, Y).ravel()) ** 2)))
    return np.array(errors)


@pytest.mark.parametrize("rho_expr", [
    lambda x, y: sympy.Integer(1),
    lambda x, y: 1 + sympy.Rational(1, 2) * sympy.sin(sympy.pi * x) * sympy.cos(2 * sympy.pi * y),
], ids=["uniform-density", "variable-density"])
def test_manufactured_solution_second_order(rho_expr):
    errors = _mms_errors(rho_expr)
    orders = np.log2(errors[:-1] / errors[1:])
    assert np.all(np.abs(orders - 2.0) <= 0.2), orders


def test_linearity(coarse_phantom):
    system = assemble_system(coarse_phantom, 2 * np.pi * FREQ, actuator=0)
    field = solve_field(system)
    system.rhs = 2 * system.rhs
    doubled = solve_field(system)
    assert np.linalg.norm(doubled.values - 2 * field.values) <= 1e-12 * np.linalg.norm(doubled.values)
    system.rhs = np.zeros_like(system.rhs)
    assert not np.any(solve_field(system).values)


def test_water_disk_wavelength(desk_phantom):
    # Radially symmetric standing wave: successive minima of |p| are half a
    # wavelength apart, 1480 / (2 * 100 kHz) = 7.4 mm.
    ph = _water_disk(desk_phantom)
    omega = 2 * np.pi * 100e3
    A = assemble_operator(ph, omega)
    number, cells = interior_index(ph)
    c = (ph.n - 1) // 2
    b = np.zeros(cells.size, complex)
    b[number[c * ph.n + c]] = 1.0
    values = factorize(A, omega).solve(b)
    grid = np.full(ph.n * ph.n, np.nan, complex)
    grid[cells] = values
    r, v = radial_profile(grid.reshape(ph.n, ph.n), ph.h)
    minima = r[argrelmin(np.abs(v))[0]]
    assert len(minima) >= 8
    spacing = (minima[-1] - minima[0]) / (len(minima) - 1)
    assert abs(spacing - 7.4e-3) <= ph.h
    assert np.all(np.abs(np.diff(minima) - 7.4e-3) <= 2 * ph.h)


def test_resolution_guard(coarse_phantom):
    with pytest.raises(ResolutionError):
        assemble_system(coarse_phantom, 2 * np.pi * 300e3, actuator=0)


def test_readings_per_actuation_and_mirror(coarse_phantom):
    field = solve_field(assemble_system(coarse_phantom, 2 * np.pi * FREQ, actuator=0))
    readings = sample_channels(field, coarse_phantom)
    assert readings.shape == (8,)
    assert abs(readings[2] - readings[6]) <= 1e-9 * np.abs(readings).max()


def test_reciprocity_on_defected_phantom(coarse_phantom):
    ph = apply_defect(coarse_phantom, DefectSpec.crack(3 * math.pi / 4, 2e-3))
    field = solve_field(assemble_system(ph, 2 * np.pi * FREQ))
    T = sample_channels(field, ph)
    assert np.abs(T - T.T).max() / np.abs(T).max() <= 1e-8


def _plan(freqs=(20e3, 60e3)):
    s = tuple(range(8))
    return SweepPlan(freqs, s, s, 8)


def test_quarter_turn_permutes_channels(coarse_phantom):
    plan = _plan()
    direct = SolverSettings(method="direct")
    side = transfer_matrix(apply_defect(coarse_phantom, DefectSpec.crack(math.pi / 2, 2e-3)),
                           plan, direct)
    tip = transfer_matrix(apply_defect(coarse_phantom, DefectSpec.crack(math.pi, 2e-3)),
                          plan, direct)
    rotated = _permuted_rows(side.data, 2)
    assert np.abs(rotated - tip.data).max() <= 1e-6 * np.abs(tip.data).max()


def test_healthy_matrix_is_deterministic(coarse_phantom):
    plan = _plan((30e3,))
    a = transfer_matrix(coarse_phantom, plan)
    b = transfer_matrix(coarse_phantom, plan)
    assert a.data.tobytes() == b.data.tobytes()


def test_lowrank_update_matches_refactorization(coarse_phantom):
    plan = _plan((40e3,))
    variants = [apply_defect(coarse_phantom, d) for d in (
        DefectSpec.crack(math.pi / 2, 1.5e-3),
        DefectSpec.loosening(math.pi, 1e-3, 1.0),
        DefectSpec.loosening(math.pi / 2, 0.25e-3, 0.25))]
    fast = solve_frequency(coarse_phantom, plan, 0, variants, SolverSettings(method="lowrank"))
    slow = solve_frequency(coarse_phantom, plan, 0, variants, SolverSettings(method="direct"))
    for f, s in zip(fast.variants, slow.variants):
        assert np.abs(f - s).max() <= 1e-10 * np.abs(s).max()


def test_lowrank_result_independent_of_batch(coarse_phantom):
    plan = _plan((40e3,))
    variants = [apply_defect(coarse_phantom, DefectSpec.crack(a, 1e-3))
                for a in (math.pi / 2, math.pi)]
    union = support_union(coarse_phantom, variants)
    both = solve_frequency(coarse_phantom, plan, 0, variants, support=union)
    alone = solve_frequency(coarse_phantom, plan, 0, variants[1:], support=union)
    assert both.variants[1].tobytes() == alone.variants[0].tobytes()


@pytest.mark.parametrize("fmt", ["bin", "csv"])
def test_transfer_matrix_round_trip(tmp_path, coarse_phantom, fmt, rng):
    plan = _plan()
    tm = transfer_matrix(coarse_phantom, plan, config_id=4)
    tm.data = tm.data + 1e-3 * rng.standard_normal(tm.data.shape)
    paths = save_transfer_matrix(tm, tmp_path / "c004", fmt)
    assert [p.suffix for p in paths] == [f".{fmt}", ".meta"]
    back = load_transfer_matrix(tmp_path / "c004")
    assert back.data.tobytes() == tm.data.tobytes()
    assert back.plan == plan and back.config_id == 4 and back.quality == tm.quality
