"""Direct solution of the symmetric indefinite systems with residual certification.

The preferred backend is MKL Pardiso (through ``pypardiso``) in its
real symmetric indefinite mode, which needs only the upper triangle and
keeps the fill of the large DG systems within a few GB.  SuperLU is the
fallback when MKL cannot be loaded.
"""
from dataclasses import dataclass
import glob
import logging
import os
import sys
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .spaces import local_coefficients

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    """Factorization failed or the residual could not be certified.

    Usually the wave number sits near a resonance of the continuous
    problem or the penalty parameter is below its stability threshold.
    """


@dataclass(frozen=True)
class SolveReport:
    residual: float
    backend: str
    refinement_steps: int
    wall_time: float


@dataclass(eq=False)
class DiscreteSolution:
    """Coefficient vector (full numbering) with per-cell access."""

    x: np.ndarray
    dofmap: object
    mesh: object

    @property
    def k(self):
        return self.dofmap.k

    @property
    def stress(self):
        return self.x[: self.dofmap.num_stress]

    @property
    def rotation(self):
        return self.x[self.dofmap.num_stress:]

    def local(self):
        """(stress (nc, 2, nb), rotation (nc, m)) per-cell coefficients."""
        return local_coefficients(self.dofmap, self.x)


def _locate_mkl():
    # pypardiso only searches sys.prefix; pip wheels of MKL may live elsewhere
    if "PYPARDISO_MKL_RT" in os.environ:
        return
    roots = [sys.prefix, sys.base_prefix, "/usr/local", "/usr"]
    for root in roots:
        hits = sorted(glob.glob(os.path.join(root, "lib*", "libmkl_rt.so*")))
        if hits:
            os.environ["PYPARDISO_MKL_RT"] = hits[0]
            return


def _pardiso():
    _locate_mkl()
    try:
        import pypardiso
    except (ImportError, OSError) as exc:
        log.debug("pypardiso unavailable: %s", exc)
        return None
    return pypardiso


class _PardisoFactor:
    backend = "pardiso"

    def __init__(self, pypardiso, U):
        self.U = U
        # size_limit_storage=0: identify the factorized matrix by hash, not a copy
        ps = pypardiso.PyPardisoSolver(mtype=-2, size_limit_storage=0)
        # iparm indices are 1-based as in the MKL reference
        ps.set_iparm(1, 1)    # use the values below, defaults elsewhere
        ps.set_iparm(2, 2)    # nested dissection ordering
        ps.set_iparm(10, 8)   # pivot perturbation 1e-8
        ps.set_iparm(11, 1)   # symmetric scaling
        ps.set_iparm(13, 1)   # symmetric weighted matching
        ps.set_statistical_info_off()
        self.ps = ps
        try:
            ps.factorize(U)
        except Exception as exc:  # pypardiso raises a bare PyPardisoError
            ps.free_memory(everything=True)
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, r):
        return self.ps.solve(self.U, r)

    def free(self):
        self.ps.free_memory(everything=True)


class _SuperLUFactor:
    backend = "superlu"

    def __init__(self, A):
        try:
            self.lu = spla.splu(A.tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, r):
        return self.lu.solve(r)

    def free(self):
        self.lu = None


def with_explicit_diagonal(U):
    """Upper-triangular CSR matrix with every diagonal entry stored.

    Pardiso rejects rows without a stored diagonal, and the rotation rows
    of the saddle-point matrix have none.  For sorted upper-triangular
    rows the diagonal is the first entry, so missing ones are inserted at
    the row starts without re-sorting.
    """
    U = sp.csr_matrix(U)
    if not U.has_sorted_indices:
        U.sort_indices()
    n = U.shape[0]
    starts = U.indptr[:-1]
    has = np.zeros(n, dtype=bool)
    nonempty = np.diff(U.indptr) > 0
    has[nonempty] = U.indices[starts[nonempty]] == np.flatnonzero(nonempty)
    missing = np.flatnonzero(~has)
    if len(missing) == 0:
        return U
    indices = np.insert(U.indices, starts[missing], missing.astype(U.indices.dtype))
    data = np.insert(U.data, starts[missing], 0.0)
    indptr = U.indptr + np.concatenate([[0], np.cumsum(~has)]).astype(U.indptr.dtype)
    out = sp.csr_matrix((data, indices, indptr), shape=U.shape)
    out.has_sorted_indices = True
    return out


def solve_linear(A, b, max_refine=3, symmetric_upper=False, backend=None):
    """Solve ``A x = b`` for symmetric ``A``; returns (x, SolveReport).

    With ``symmetric_upper`` the matrix holds only its upper triangle.
    ``backend`` forces ``"pardiso"`` or ``"superlu"``.  Raises
    :class:`SolverError` when no residual at most ``RESIDUAL_TOL``
    relative to ``||b||`` is reached after refinement.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if n == 0:
        raise SolverError("empty system")
    if A.shape != (n, n) or b.shape != (n,):
        raise SolverError(f"shape mismatch: matrix {A.shape}, rhs {b.shape}")
    if symmetric_upper:
        U = A

        def matvec(x):
            return U @ x + U.T @ x - U.diagonal() * x
    else:
        U = None

        def matvec(x):
            return A @ x

    t0 = time.perf_counter()
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), SolveReport(0.0, "none", 0, 0.0)
    pardiso = _pardiso() if backend in (None, "pardiso") else None
    if backend == "pardiso" and pardiso is None:
        raise SolverError("pardiso backend requested but MKL could not be loaded")
    if pardiso is not None:
        fac = _PardisoFactor(pardiso, with_explicit_diagonal(A if symmetric_upper else sp.triu(A, format="csr")))
    else:
        full = A if not symmetric_upper else (A + sp.triu(A, 1).T).tocsr()
        fac = _SuperLUFactor(full)
    try:
        x = fac.solve(b)
        res = np.linalg.norm(matvec(x) - b) / bnorm
        steps = 0
        while np.isfinite(res) and not res <= RESIDUAL_TOL and steps < max_refine:
            x = x + fac.solve(b - matvec(x))
            res = np.linalg.norm(matvec(x) - b) / bnorm
            steps += 1
    finally:
        fac.free()
    elapsed = time.perf_counter() - t0
    if not np.all(np.isfinite(x)) or not res <= RESIDUAL_TOL:
        raise SolverError(
            f"residual {res:.3e} above {RESIDUAL_TOL:.0e}; "
            "near-singular system: resonance or penalty below threshold suspected"
        )
    log.info("solved n=%d with %s in %.2fs, residual %.2e", n, fac.backend, elapsed, res)
    return x, SolveReport(float(res), fac.backend, steps, elapsed)


def solve(system, backend=None):
    """Solve an assembled :class:`~elastodg.assembly.SparseSystem`."""
    x, report = solve_linear(system.matrix, system.rhs, symmetric_upper=system.storage == "upper", backend=backend)
    return DiscreteSolution(system.expand(x), system.dofmap, system.mesh), report
