"""Benchmark driver: convergence tables, penalty sweeps, locking study, patch test.

Exit codes: 0 when every data point succeeded, 2 when some solves failed
(or the patch test did not reproduce the exact fields), 1 on invalid
configuration.
"""
import argparse
from dataclasses import dataclass, field
import io
import logging
import math
import sys

import numpy as np

from .analysis import compute_errors, rate
from .assembly import assemble
from .linsolve import SolverError
from .linsolve import solve as solve_system
from .mesh import build_structured_mesh
from .model import LameParams, ManufacturedSolution, ModelError, PolynomialDisplacement, exact_fields, lame_from_poisson
from .spaces import dim_p

log = logging.getLogger("elastodg.bench")

DASH = "—"
FAILED = "failed"
PATCH_TOL = 1e-8
PATCH_SEED = 20240607
# Unknown count above which --allow-large is required (DG k=6, n=40 has 425600)
LARGE_DOFS = 500_000
EXPERIMENTS = ("convergence", "penalty", "locking", "patch")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "convergence"
    scheme: str = None
    k: int = 2
    kappas: list = field(default_factory=lambda: [4.0])
    ns: list = field(default_factory=lambda: [8, 16, 32])
    a: float = None
    a_grid: list = None
    params: LameParams = field(default_factory=lambda: LameParams(1.0, 1.0))
    quad_bump: int = 0
    out: str = None
    allow_large: bool = False

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.scheme not in (None, "cg", "dg"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.k < 1:
            raise ConfigError("--k must be at least 1")
        if not self.ns or any(n < 1 for n in self.ns):
            raise ConfigError("--n needs positive mesh counts")
        if any(b <= a for a, b in zip(self.ns, self.ns[1:])):
            raise ConfigError("--n list must be strictly increasing")
        if not self.kappas or any(not kap > 0 for kap in self.kappas):
            raise ConfigError("--kappa values must be positive")
        if self.quad_bump < 0:
            raise ConfigError("--quad-bump must be nonnegative")
        if self.scheme == "cg" and self.a is not None:
            raise ConfigError("the penalty --a applies to the dg scheme only")
        if self.a is not None and not self.a > 0:
            raise ConfigError("--a must be positive")
        if self.experiment == "penalty":
            if self.scheme == "cg":
                raise ConfigError("penalty sweeps need the dg scheme")
            if not self.a_grid:
                raise ConfigError("penalty sweeps need --a-grid")
            if self.a is not None:
                raise ConfigError("use --a-grid instead of --a for penalty sweeps")
        elif self.a_grid is not None:
            raise ConfigError("--a-grid is only used by the penalty experiment")
        if self.experiment == "locking" and self.scheme == "cg":
            raise ConfigError("the locking study uses the dg scheme")
        if self.experiment == "convergence" and self.scheme is None:
            raise ConfigError("convergence runs need --scheme")
        for scheme in self.schemes():
            dofs = estimate_dofs(scheme, self.k, self.ns[-1])
            if dofs > LARGE_DOFS and not self.allow_large:
                raise ConfigError(f"{scheme} k={self.k} n={self.ns[-1]} has about {dofs} unknowns; pass --allow-large")

    def schemes(self):
        if self.scheme is not None:
            return [self.scheme]
        return ["dg"] if self.experiment in ("penalty", "locking") else ["cg", "dg"]

    def penalty(self, scheme):
        if scheme == "cg":
            return None
        if self.a is not None:
            return self.a
        return 50.0 if self.experiment == "locking" else 100.0


def estimate_dofs(scheme, k, n):
    cells = 2 * n * n
    if scheme == "dg":
        return cells * (4 * dim_p(k) + dim_p(k - 1))
    faces = 3 * n * n + 2 * n
    interior = max(k * k - 1, 0)  # (k+1)(k+2) - 3(k+1) per row
    return 2 * (faces * (k + 1) + cells * interior) + cells * dim_p(k - 1)


@dataclass
class CsvTable:
    header: list
    rows: list

    def render(self):
        buf = io.StringIO()
        for row in [self.header] + self.rows:
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


@dataclass
class PointResult:
    e_sigma: float = None
    e_r: float = None
    message: str = ""

    @property
    def ok(self):
        return self.e_sigma is not None


def fmt_error(e):
    return FAILED if e is None else f"{e:.2e}"


def fmt_rate(r):
    # full precision so the column can be re-derived from the printed errors
    return DASH if r is None else repr(float(r))


def run_point(scheme, k, n, kappa, params, a, solution, quad_bump=0):
    """Assemble, solve and measure one data point; solver failures are caught."""
    mesh = build_structured_mesh(n)
    try:
        system = assemble(scheme, mesh, k, params, kappa, solution, a=a, quad_bump=quad_bump)
        sol, report = solve_system(system)
        del system
    except SolverError as exc:
        log.warning("%s k=%d n=%d kappa=%g a=%s failed: %s", scheme, k, n, kappa, a, exc)
        return PointResult(message=str(exc))
    err = compute_errors(sol, solution, quad_bump)
    log.info(
        "%s k=%d n=%d kappa=%g a=%s: e_sigma=%.3e e_r=%.3e residual=%.1e",
        scheme, k, n, kappa, a, err.e_sigma(scheme), err.e_rotation, report.residual,
    )
    return PointResult(err.e_sigma(scheme), err.e_rotation)


def rate_column(ns, errors):
    """Rates from the printed (rounded) errors so the CSV is self-consistent."""
    out = [None]
    for i in range(1, len(ns)):
        e, e_hat = errors[i], errors[i - 1]
        if e is None or e_hat is None:
            out.append(None)
            continue
        e, e_hat = float(fmt_error(e)), float(fmt_error(e_hat))
        out.append(rate(e, e_hat, 1.0 / ns[i], 1.0 / ns[i - 1]) if e > 0 and e_hat > 0 else None)
    return out


def _kappa_label(kappa):
    return f"{kappa:g}"


def build_tables(ns, kappas, results):
    """``results[kappa][n]`` -> (sigma table, rotation table) in the benchmark table layout."""
    tables = []
    for attr in ("e_sigma", "e_r"):
        header = ["1/h"]
        cols = []
        for kappa in kappas:
            header += [f"e(kappa={_kappa_label(kappa)})", f"rate(kappa={_kappa_label(kappa)})"]
            errs = [getattr(results[kappa][n], attr) for n in ns]
            cols.append((errs, rate_column(ns, errs)))
        rows = []
        for i, n in enumerate(ns):
            row = [str(n)]
            for errs, rates in cols:
                row += [fmt_error(errs[i]), fmt_rate(rates[i])]
            rows.append(row)
        tables.append(CsvTable(header, rows))
    return tables


def run_convergence(config):
    """Sigma and rotation tables plus the number of failed points."""
    scheme = config.schemes()[0]
    a = config.penalty(scheme)
    results = {}
    for kappa in config.kappas:
        solution = exact_fields(kappa, config.params)
        results[kappa] = {
            n: run_point(scheme, config.k, n, kappa, config.params, a, solution, config.quad_bump)
            for n in config.ns
        }
    failures = sum(not r.ok for per in results.values() for r in per.values())
    sigma, rot = build_tables(config.ns, config.kappas, results)
    return sigma, rot, failures


def run_locking(config):
    return run_convergence(config)


def run_penalty_sweep(config):
    """Long-format sweep table with columns k, kappa, n, a, e_sigma, e_r."""
    rows = []
    failures = 0
    for kappa in config.kappas:
        solution = exact_fields(kappa, config.params)
        for n in config.ns:
            for a in config.a_grid:
                res = run_point("dg", config.k, n, kappa, config.params, a, solution, config.quad_bump)
                failures += not res.ok
                rows.append([str(config.k), _kappa_label(kappa), str(n), f"{a:.6e}", fmt_error(res.e_sigma), fmt_error(res.e_r)])
    return CsvTable(["k", "kappa", "n", "a", "e_sigma", "e_r"], rows), failures


def run_patch(config):
    """Polynomial displacement of degree k: both errors must vanish to PATCH_TOL."""
    rng = np.random.default_rng(PATCH_SEED)
    disp = PolynomialDisplacement.random(config.k, rng)
    rows = []
    passed = True
    for scheme in config.schemes():
        a = config.penalty(scheme)
        for kappa in config.kappas:
            solution = ManufacturedSolution(disp, config.params, kappa)
            for n in config.ns:
                res = run_point(scheme, config.k, n, kappa, config.params, a, solution, config.quad_bump)
                ok = res.ok and res.e_sigma <= PATCH_TOL and res.e_r <= PATCH_TOL
                passed &= ok
                rows.append([
                    scheme, str(config.k), str(n), _kappa_label(kappa), "" if a is None else f"{a:g}",
                    fmt_error(res.e_sigma), fmt_error(res.e_r), "pass" if ok else "FAIL",
                ])
    header = ["scheme", "k", "n", "kappa", "a", "e_sigma", "e_r", "status"]
    return CsvTable(header, rows), passed


def output_paths(out, suffixes):
    if out is None:
        return [None] * len(suffixes)
    if len(suffixes) == 1:
        return [out]
    stem, dot, ext = out.rpartition(".")
    if not dot or "/" in ext:
        stem, ext = out, "csv"
    return [f"{stem}_{s}.{ext}" for s in suffixes]


def write_tables(tables, out, suffixes, stream):
    for table, path, suffix in zip(tables, output_paths(out, suffixes), suffixes):
        text = table.render()
        if path is None:
            if len(tables) > 1:
                stream.write(f"# {suffix}\n")
            stream.write(text)
        else:
            with open(path, "w", newline="") as fh:
                fh.write(text)
            log.info("wrote %s", path)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _float_list(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")


def parse_a_grid(text):
    """``LO:HI:COUNT`` -> COUNT values logarithmically spaced from LO to HI."""
    try:
        lo, hi, count = text.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI:COUNT, got {text!r}")
    if not (0 < lo < hi) or count < 2:
        raise argparse.ArgumentTypeError("need 0 < LO < HI and COUNT >= 2")
    return list(np.logspace(math.log10(lo), math.log10(hi), count))


def build_parser():
    p = _Parser(prog="elastodg-bench", description="Convergence and penalty studies for the mixed elasticity schemes.")
    p.add_argument("--experiment", choices=EXPERIMENTS, default="convergence")
    p.add_argument("--scheme", choices=("cg", "dg"))
    p.add_argument("--k", type=int)
    p.add_argument("--kappa", type=_float_list, help="comma-separated wave numbers")
    p.add_argument("--n", type=_int_list, help="comma-separated subdivision counts, increasing")
    p.add_argument("--a", type=float, help="DG penalty parameter")
    p.add_argument("--a-grid", type=parse_a_grid, help="LO:HI:COUNT log-spaced penalty values")
    p.add_argument("--E", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--quad-bump", type=int, default=0, help="extra quadrature degree")
    p.add_argument("--out", help="CSV path; convergence runs add _sigma and _r suffixes")
    p.add_argument("--allow-large", action="store_true", help="permit systems beyond the desk-scale cap")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args):
    exp = args.experiment
    defaults = dict(
        convergence=(2, [4.0], [8, 16, 32]),
        penalty=(3, [16.0], [32]),
        locking=(2, [4.0, 8.0, 16.0, 32.0], [8, 16, 32, 64]),
        patch=(2, [1.0], [4]),
    )[exp]
    if (args.E is None) != (args.nu is None):
        raise ConfigError("--E and --nu must be given together")
    if (args.lam is None) != (args.mu is None):
        raise ConfigError("--lambda and --mu must be given together")
    if args.E is not None and args.lam is not None:
        raise ConfigError("give either --E/--nu or --lambda/--mu, not both")
    try:
        if args.E is not None:
            params = lame_from_poisson(args.E, args.nu)
        elif args.lam is not None:
            params = LameParams(args.lam, args.mu)
        elif exp == "locking":
            params = lame_from_poisson(10.0, 0.499)
        else:
            params = LameParams(1.0, 1.0)
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = ExperimentConfig(
        experiment=exp,
        scheme=args.scheme,
        k=defaults[0] if args.k is None else args.k,
        kappas=defaults[1] if args.kappa is None else args.kappa,
        ns=defaults[2] if args.n is None else args.n,
        a=args.a,
        a_grid=args.a_grid,
        params=params,
        quad_bump=args.quad_bump,
        out=args.out,
        allow_large=args.allow_large,
    )
    cfg.validate()
    return cfg


def main(argv=None, stdout=None):
    stdout = sys.stdout if stdout is None else stdout
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = config_from_args(args)
    except ConfigError as exc:
        sys.stderr.write(f"elastodg-bench: error: {exc}\n")
        build_parser().print_usage(sys.stderr)
        return 1
    if cfg.experiment in ("convergence", "locking"):
        sigma, rot, failures = run_convergence(cfg)
        write_tables([sigma, rot], cfg.out, ["sigma", "r"], stdout)
        return 2 if failures else 0
    if cfg.experiment == "penalty":
        table, failures = run_penalty_sweep(cfg)
        write_tables([table], cfg.out, ["penalty"], stdout)
        return 2 if failures else 0
    table, passed = run_patch(cfg)
    write_tables([table], cfg.out, ["patch"], stdout)
    return 0 if passed else 2


if __name__ == "__main__":
    sys.exit(main())
