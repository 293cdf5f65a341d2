import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from elastodg.analysis import compute_errors
from elastodg.assembly import assemble
from elastodg.linsolve import RESIDUAL_TOL, SolverError, _pardiso, solve, solve_linear, with_explicit_diagonal
from elastodg.mesh import build_structured_mesh
from elastodg.model import LameParams, ManufacturedSolution, PolynomialDisplacement, exact_fields
from elastodg.spaces import interpolate_stress, l2_project_rotation

P = LameParams(1.0, 1.0)
BACKENDS = ["superlu"] + (["pardiso"] if _pardiso() is not None else [])


@pytest.mark.parametrize("backend", BACKENDS)
def test_one_by_one(backend):
    x, rep = solve_linear(sp.csr_matrix([[2.0]]), np.array([4.0]), backend=backend)
    assert x[0] == 2.0 and rep.residual == 0.0 and rep.backend == backend


def test_zero_rhs():
    x, rep = solve_linear(sp.identity(3, format="csr"), np.zeros(3))
    assert np.array_equal(x, np.zeros(3)) and rep.backend == "none"


def test_empty_and_mismatched_systems():
    with pytest.raises(SolverError):
        solve_linear(sp.csr_matrix((0, 0)), np.zeros(0))
    with pytest.raises(SolverError):
        solve_linear(sp.identity(3, format="csr"), np.ones(2))


@pytest.mark.parametrize("backend", BACKENDS)
def test_singular_system_raises(backend):
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SolverError):
        solve_linear(A, np.array([1.0, 0.0]), backend=backend)


@pytest.mark.parametrize("backend", BACKENDS)
def test_indefinite_saddle_point(backend):
    # [[1, 1], [1, 0]] has a zero diagonal and eigenvalues of both signs
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 0.0]]))
    x, rep = solve_linear(A, np.array([3.0, 1.0]), backend=backend)
    assert np.allclose(x, [1.0, 2.0], rtol=0, atol=1e-14) and rep.residual <= RESIDUAL_TOL


@pytest.mark.parametrize("scheme, k, a", [("cg", 2, None), ("dg", 2, 10.0), ("dg", 3, 100.0)])
def test_patch_solution_equals_interpolant(scheme, k, a):
    sol = ManufacturedSolution(PolynomialDisplacement.random(k, np.random.default_rng(7)), P, 3.0)
    s = assemble(scheme, build_structured_mesh(4), k, P, 3.0, sol, a=a)
    x, rep = solve(s)
    exact = interpolate_stress(s.mesh, k, sol.sigma, s.dofmap)
    exact[s.dofmap.rotation_dofs.ravel()] = l2_project_rotation(s.mesh, k, sol.rotation)
    assert np.abs(x.x - exact).max() <= 1e-8 * np.abs(exact).max()
    assert rep.residual <= RESIDUAL_TOL


def test_penalty_below_threshold_degrades_or_fails():
    kappa = 4.0
    ex = exact_fields(kappa, P)
    mesh = build_structured_mesh(8)
    good, _ = solve(assemble("dg", mesh, 3, P, kappa, ex, a=100.0))
    e_good = compute_errors(good, ex).e_sigma_dg
    try:
        bad, _ = solve(assemble("dg", mesh, 3, P, kappa, ex, a=0.01))
    except SolverError:
        return
    assert compute_errors(bad, ex).e_sigma_dg >= 100 * e_good


@pytest.mark.parametrize("backend", BACKENDS)
def test_repeated_solves_identical(backend):
    s = assemble("dg", build_structured_mesh(4), 2, P, 4.0, exact_fields(4.0, P), a=100.0)
    x1, _ = solve(s, backend=backend)
    x2, _ = solve(s, backend=backend)
    assert x1.x.tobytes() == x2.x.tobytes()


@pytest.mark.skipif(len(BACKENDS) < 2, reason="MKL Pardiso not available")
@pytest.mark.parametrize("scheme, a", [("cg", None), ("dg", 100.0)])
def test_backends_agree(scheme, a):
    s = assemble(scheme, build_structured_mesh(6), 3, P, 4.0, exact_fields(4.0, P), a=a)
    x1, r1 = solve(s, backend="superlu")
    x2, r2 = solve(s, backend="pardiso")
    assert (r1.backend, r2.backend) == ("superlu", "pardiso")
    assert np.abs(x1.x - x2.x).max() <= 1e-9 * np.abs(x1.x).max()


def test_full_and_upper_storage_agree():
    args = ("dg", build_structured_mesh(4), 2, P, 4.0, exact_fields(4.0, P))
    x1, _ = solve(assemble(*args, a=50.0, storage="full"))
    x2, _ = solve(assemble(*args, a=50.0, storage="upper"))
    assert np.abs(x1.x - x2.x).max() <= 1e-10 * np.abs(x1.x).max()


def test_solution_blocks():
    s = assemble("cg", build_structured_mesh(2), 1, P, 1.0, exact_fields(1.0, P))
    sol, _ = solve(s)
    assert len(sol.stress) == s.dofmap.num_stress and len(sol.rotation) == s.dofmap.num_rotation
    s_loc, r_loc = sol.local()
    assert s_loc.shape == (8, 2, 6) and r_loc.shape == (8, 1)


@given(st.integers(1, 30), st.floats(0.05, 0.9), st.integers(0, 2 ** 31 - 1))
def test_explicit_diagonal(n, density, seed):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=density, random_state=rng, format="csr")
    U = sp.triu(A + A.T, format="csr")
    U.eliminate_zeros()
    D = with_explicit_diagonal(U)
    assert (abs(D - U)).sum() == 0.0
    rows = np.repeat(np.arange(n), np.diff(D.indptr))
    diag_pos = D.indptr[:-1]
    assert np.all(D.indices[diag_pos] == np.arange(n))
    assert np.all(D.indices >= rows)
    assert D.nnz == U.nnz + int(np.sum(~_stored_diag(U)))


def _stored_diag(U):
    out = np.zeros(U.shape[0], dtype=bool)
    for i in range(U.shape[0]):
        out[i] = i in U.indices[U.indptr[i]:U.indptr[i + 1]]
    return out
