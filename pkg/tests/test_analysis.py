import math
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from elastodg.analysis import (
    RateError, _volume_parts, compute_errors, convergence_rates, error_hdiv, error_rotation, jump_seminorm,
    lagrange_nodes, rate,
)
from elastodg.assembly import assemble
from elastodg.linsolve import DiscreteSolution, solve
from elastodg.mesh import build_structured_mesh
from elastodg.model import LameParams, ManufacturedSolution, PolynomialDisplacement, exact_fields
from elastodg.spaces import build_dofmap, interpolate_stress, l2_project_rotation

from _helpers import run_case, within

P = LameParams(1.0, 1.0)
LARGE = os.environ.get("ELASTODG_LARGE") == "1"
large = pytest.mark.skipif(not LARGE, reason="needs several GB of memory; set ELASTODG_LARGE=1")


def test_rate_examples():
    t = convergence_rates([(1 / 8, 0.04), (1 / 16, 0.01)])
    assert t.rates[0] is None and t.rates[1] == pytest.approx(2.0, abs=1e-14)
    t = convergence_rates([(1 / 8, 1e-3), (1 / 16, 6.25e-5)])
    assert t.rates[1] == pytest.approx(4.0, abs=1e-14)
    assert t.rows[0][0] == pytest.approx(8.0)


def test_rates_from_printed_cg_table():
    # k = 2, kappa = 4 column of the reference CG stress table
    n = [8, 16, 32, 64, 128, 256]
    e = [6.90e-2, 1.79e-2, 4.53e-3, 1.13e-3, 2.84e-4, 7.10e-5]
    printed = [1.94, 1.99, 2.00, 2.00, 2.00]
    got = convergence_rates([(1 / m, x) for m, x in zip(n, e)]).rates[1:]
    assert np.allclose(got, printed, atol=0.01)


def test_rate_errors():
    with pytest.raises(RateError):
        convergence_rates([(0.1, 1.0)])
    with pytest.raises(RateError):
        convergence_rates([(0.1, 1.0), (0.2, 0.5)])
    with pytest.raises(RateError):
        convergence_rates([(0.2, 1.0), (0.1, 0.0)])
    with pytest.raises(RateError):
        convergence_rates([(0.2, -1.0), (0.1, 0.5)])


def test_failed_point_breaks_rate_chain():
    t = convergence_rates([(1 / 8, 0.1), (1 / 16, None), (1 / 32, 0.01), (1 / 64, 0.0025)])
    assert t.rates[:3] == [None, None, None] and t.rates[3] == pytest.approx(2.0)


@given(st.floats(1e-12, 1e3), st.floats(0.1, 6), st.floats(1e-3, 0.5), st.floats(1.1, 4))
def test_rate_recovers_power_law(c, p, h, factor):
    hh = h / factor
    assert rate(c * h ** p, c * hh ** p, h, hh) == pytest.approx(p, rel=1e-9)


def test_lagrange_nodes():
    assert lagrange_nodes(0).shape == (1, 2)
    assert lagrange_nodes(3).shape == (10, 2)


def _solved(scheme, k, n, kappa=4.0, a=100.0):
    ex = exact_fields(kappa, P)
    sol, _ = solve(assemble(scheme, build_structured_mesh(n), k, P, kappa, ex, a=a))
    return sol, ex


def test_norm_decomposition():
    sol, ex = _solved("dg", 2, 4)
    rep = compute_errors(sol, ex)
    deg = 2 * 2 + 6
    parts = _volume_parts(sol, ex, deg)
    jump = jump_seminorm(sol.mesh, 2, sol.local()[0], deg)
    num = parts["sigma_l2"] ** 2 + parts["div_l2"] ** 2 + jump ** 2
    assert (rep.e_sigma_dg * rep.sigma_norm_hdiv) ** 2 == pytest.approx(num, rel=1e-12)
    assert rep.e_sigma_dg > rep.e_sigma_hdiv > 0 and rep.jump > 0


def test_cg_solution_has_no_jumps():
    sol, ex = _solved("cg", 3, 6)
    rep = compute_errors(sol, ex)
    assert rep.jump <= 1e-11 * rep.sigma_norm_hdiv
    assert rep.e_sigma_dg == pytest.approx(rep.e_sigma_hdiv, rel=1e-12)


def _interpolated(k, n, kappa=2.0):
    m = build_structured_mesh(n)
    dm = build_dofmap(m, k, "cg")
    ex = exact_fields(kappa, P)
    x = interpolate_stress(m, k, ex.sigma, dm)
    x[dm.rotation_dofs.ravel()] = l2_project_rotation(m, k, ex.rotation)
    return DiscreteSolution(x, dm, m), ex


@pytest.mark.parametrize("k", [1, 2, 3])
def test_interpolant_error_order(k):
    e = [error_hdiv(*_interpolated(k, n)) for n in (16, 32)]
    assert math.log2(e[0] / e[1]) == pytest.approx(k, abs=0.2)


@pytest.mark.parametrize("scheme, k", [("cg", 2), ("dg", 2), ("dg", 3)])
def test_patch_errors_vanish(scheme, k):
    sol_ex = ManufacturedSolution(PolynomialDisplacement.random(k, np.random.default_rng(3)), P, 2.5)
    sol, _ = solve(assemble(scheme, build_structured_mesh(3), k, P, 2.5, sol_ex, a=20.0))
    rep = compute_errors(sol, sol_ex)
    assert rep.e_sigma(scheme) <= 1e-8 and rep.e_rotation <= 1e-8


def test_monotone_refinement():
    e = [run_case("cg", 2, 4.0, n).e_sigma for n in (8, 16, 32)]
    assert e[0] > e[1] > e[2]
    e = [run_case("dg", 4, 4.0, n, a=100.0).e_sigma for n in (8, 16)]
    assert e[0] > e[1]


def test_cg_stress_reference_value():
    assert within(run_case("cg", 2, 8.0, 32).e_sigma, 1.77e-2, 0.10)


def test_dg_stress_reference_value():
    assert within(run_case("dg", 4, 16.0, 32, a=100.0).e_sigma, 8.89e-4, 0.10)


@large
def test_dg_high_order_reference_value():
    # the reference row labelled 1/h = 40 matches a 48 x 48 mesh
    assert within(run_case("dg", 6, 32.0, 48, a=100.0).e_sigma, 2.62e-5, 0.15)


def test_cg_rotation_nodal_diagnostic():
    # the error against the nodal interpolant of r tracks the reference value
    assert within(run_case("cg", 2, 4.0, 32).e_rotation_nodal, 1.36e-2, 0.10)


def test_cg_rotation_reference_value():
    r = run_case("cg", 2, 4.0, 32)
    assert within(r.e_rotation, 1.36e-2, 0.10), f"L2 rotation error {r.e_rotation:.3e}"


@large
def test_dg_rotation_reference_value():
    r = run_case("dg", 4, 8.0, 64, a=100.0)
    assert within(r.e_rotation, 7.27e-6, 0.10), f"L2 rotation error {r.e_rotation:.3e}"


def test_rotation_error_of_projection_is_optimal():
    e = [error_rotation(*_interpolated(2, n)) for n in (16, 32)]
    assert math.log2(e[0] / e[1]) == pytest.approx(2, abs=0.2)
