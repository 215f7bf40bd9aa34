"""Benchmark runner: the hybrid method against three baselines.

Methods
-------
hdrm
    :func:`hdrm.hybrid.hybrid_solve` with the problem's hybrid settings.
gauss_seidel
    Forward Gauss-Seidel sweeps on the assembled finite-element system.
dynamic_relaxation
    Viscously damped pseudo-time stepping ``M u'' + c M u' + K u = F`` with a
    Gershgorin fictitious mass and damping tuned from a Rayleigh quotient.
dual_reciprocity
    The boundary-element method alone (an empty finite-element region).

Nonlinear boundary rows are pointwise, ``coeff * u_i**p = h_i``, so both
iterative baselines update them by scalar Newton before each sweep.
Errors are discrete L2 norms against the exact solution at the nodes of the
base mesh.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .drm import DrmSolution
from .errors import ConfigError, UnsupportedError
from .hybrid import RegionPartition, hybrid_solve
from .linalg import gauss_seidel_sweep, norm
from .mesh import build_rect_mesh
from .newton import FemNonlinearSystem

log = logging.getLogger(__name__)

METHODS = ("hdrm", "gauss_seidel", "dynamic_relaxation", "dual_reciprocity")
LABELS = {"hdrm": "H-DRM", "gauss_seidel": "Gauss-Seidel", "dynamic_relaxation": "DynRelax",
          "dual_reciprocity": "DualRec"}
BENCHMARK_FILE = Path(__file__).parent / "benchmarks" / "heat_bump.txt"
RATE_RULE = "rate = log-log slope of error vs iteration: <= -1 Fast, (-1, -0.5] Moderate, > -0.5 Slow"


def checkpoints(limit: int) -> list[int]:
    """Iterations ``1, 100, 1000, 5000, 10**4, 5 * 10**4, ...`` up to ``limit``."""
    out = [1, 100]
    k = 3
    while 10 ** k <= limit:
        out += [10 ** k, 5 * 10 ** k]
        k += 1
    return [c for c in out if c <= limit]


def rate_label(trace) -> str:
    """Fast / Moderate / Slow from the slope between the first and last trace points."""
    pts = [(i, e) for i, e in trace if i > 0 and e > 0]
    if len(pts) < 2 or pts[-1][0] == pts[0][0]:
        return "Fast"
    (i0, e0), (i1, e1) = pts[0], pts[-1]
    slope = math.log(e1 / e0) / math.log(i1 / i0)
    if slope <= -1.0:
        return "Fast"
    if slope <= -0.5:
        return "Moderate"
    return "Slow"


@dataclass
class SolverReport:
    """Outcome of one method: final error, iterations and the error trace."""

    method: str
    error: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)   # (iteration, error)
    wall_time: float = 0.0

    @property
    def rate(self) -> str:
        return rate_label(self.trace)


def delta_table(errors: dict) -> dict:
    """``{(i, j): |E_i - E_j|}`` over all ordered pairs."""
    return {(a, b): abs(ea - eb) for a, ea in errors.items() for b, eb in errors.items()}


@dataclass
class BenchmarkReport:
    reports: list = field(default_factory=list)

    @property
    def methods(self) -> list[str]:
        return [r.method for r in self.reports]

    @property
    def errors(self) -> dict:
        return {r.method: r.error for r in self.reports}

    @property
    def delta(self) -> dict:
        return delta_table(self.errors)

    def pairs(self):
        """Unordered method pairs in report order, as ``(i, j, delta)``."""
        e = self.errors
        ms = self.methods
        return [(a, b, abs(e[a] - e[b])) for k, a in enumerate(ms) for b in ms[k + 1:]]


# -- exact errors -------------------------------------------------------------------------


def base_mesh(spec):
    return build_rect_mesh(spec.nx, spec.ny, spec.corners)


class _ErrorProbe:
    def __init__(self, spec, mesh):
        if spec.exact is None:
            raise ConfigError("benchmarks need an exact solution")
        self.mesh = mesh
        self.exact = spec.exact(mesh.points[:, 0], mesh.points[:, 1])

    def __call__(self, u) -> float:
        return norm(np.asarray(u) - self.exact, "L2", self.mesh)


class _Recorder:
    """Keeps errors at the checkpoint iterations."""

    def __init__(self, probe, limit):
        self.probe = probe
        self.marks = set(checkpoints(limit))
        self.trace = []

    def __call__(self, it, u):
        if it in self.marks:
            self.trace.append((it, float(self.probe(u))))

    def finish(self, it, u) -> float:
        err = float(self.probe(u))
        if not self.trace or self.trace[-1][0] != it:
            self.trace.append((it, err))
        return err


# -- iterative baselines ---------------------------------------------------------------------


class _FemIteration:
    """Shared set-up of the two iterative baselines on the assembled system."""

    def __init__(self, spec, mesh):
        self.system = FemNonlinearSystem(mesh, spec)
        s = self.system
        self.u = s.initial_guess()
        self.free = np.flatnonzero(s.interior > 0)
        self.nl_ops = [s.nl_ops[m] for m in s.nl_markers]
        self._parts = None

    def parts(self):
        """Stiffness and load, re-assembled only when they depend on u."""
        s = self.system
        if self._parts is None or not s.coefficients_frozen:
            K = s.stiffness(self.u).tocsr()
            K.sum_duplicates()
            K.sort_indices()
            self._parts = (K, s.force(self.u))
        return self._parts

    def update_nonlinear_rows(self, sweeps: int = 20):
        s = self.system
        for k, (i, op) in enumerate(zip(s.nl_nodes, self.nl_ops)):
            v = self.u[i]
            for _ in range(sweeps):
                step = (op.B(v) - s.nl_h[k]) / op.dB_du(v)
                v -= step
                if abs(step) <= 1e-15 * max(1.0, abs(v)):
                    break
            self.u[i] = v

    def relative_residual(self, K, F) -> float:
        """``|r| / |b|`` over the free rows, ``b`` the load after lifting the boundary values."""
        r = (F - K @ self.u)[self.free]
        fixed = self.u.copy()
        fixed[self.free] = 0.0
        b = float(np.linalg.norm((F - K @ fixed)[self.free]))
        return float(np.linalg.norm(r) / b) if b > 0.0 else float(np.linalg.norm(r))


def _run_gauss_seidel(spec, mesh, rec):
    it_state = _FemIteration(spec, mesh)
    budget, tol = spec.bench.max_iter, spec.bench.tol
    it, converged = 0, False
    while it < budget:
        it_state.update_nonlinear_rows()
        K, F = it_state.parts()
        gauss_seidel_sweep(K, F, it_state.u, it_state.free)
        it += 1
        rec(it, it_state.u)
        if it_state.relative_residual(K, F) <= tol:
            converged = True
            break
    return it_state.u, it, converged


def _run_dynamic_relaxation(spec, mesh, rec):
    it_state = _FemIteration(spec, mesh)
    budget, tol = spec.bench.max_iter, spec.bench.tol
    free = it_state.free
    v = np.zeros(len(free))
    it, converged = 0, False
    c = 0.0
    while it < budget:
        it_state.update_nonlinear_rows()
        K, F = it_state.parts()
        Kff = K[free][:, free]
        # unit time step; mass from Gershgorin so that lambda_max(M^-1 K) <= 2
        mass = np.asarray(abs(Kff).sum(axis=1)).ravel()
        r = (F - K @ it_state.u)[free]
        v = ((2.0 - c) * v + 2.0 * r / mass) / (2.0 + c)
        it_state.u[free] += v
        it += 1
        # damping near-critical for the slowest mode, estimated by a Rayleigh quotient of the velocity
        vv = float(v @ (mass * v))
        if vv > 0.0:
            lam = float(v @ (Kff @ v)) / vv
            c = 2.0 * math.sqrt(min(max(lam, 0.0), 2.0))
        rec(it, it_state.u)
        if it_state.relative_residual(K, F) <= tol:
            converged = True
            break
    return it_state.u, it, converged


# -- runner ------------------------------------------------------------------------------


def solve_method(spec, method: str, mesh=None, callback=None):
    """Run one method; ``callback(iteration, u)`` sees intermediate nodal fields.

    Returns
    -------
    u : ndarray
        Nodal values on ``mesh`` (the base mesh of ``spec`` by default).
    iterations : int
        Sweeps for the iterative baselines and the hybrid method, Newton
        steps for the boundary-element method.
    converged : bool
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; known: {list(METHODS)}")
    mesh = mesh or base_mesh(spec)
    callback = callback or (lambda it, u: None)
    if method == "gauss_seidel":
        return _run_gauss_seidel(spec, mesh, callback)
    if method == "dynamic_relaxation":
        return _run_dynamic_relaxation(spec, mesh, callback)
    if method == "hdrm":
        sol = hybrid_solve(spec, mesh, config=spec.hybrid, newton_config=spec.newton, callback=callback)
        return sol.u, max(sol.sweeps, 1), sol.converged
    if not spec.laplace_type:
        raise UnsupportedError("dual_reciprocity needs an identity principal part and no lower-order terms")
    empty = RegionPartition(mesh, np.zeros(0, dtype=np.int64), np.arange(mesh.n_elements))
    sol = hybrid_solve(spec, mesh, empty, spec.hybrid, spec.newton)
    trace = sol.drm.newton_trace
    if trace is None:
        return sol.u, 1, sol.converged
    n = sol.drm.system.boundary.n
    for state in trace[1:]:
        step = DrmSolution(sol.drm.system, state.u[:n], state.u[n:], sol.drm.alpha)
        callback(state.iteration, step.evaluate(mesh.points))
    return sol.u, max(len(trace) - 1, 1), sol.converged


def run_method(spec, method: str, mesh=None) -> SolverReport:
    """Run one method on ``spec`` and record its error trace at the checkpoints."""
    mesh = mesh or base_mesh(spec)
    rec = _Recorder(_ErrorProbe(spec, mesh), 10 ** 9)
    t0 = time.perf_counter()
    u, it, converged = solve_method(spec, method, mesh, rec)
    err = rec.finish(it, u)
    wall = time.perf_counter() - t0
    log.info("%s: error %.3e after %d iterations (%.2f s)", method, err, it, wall)
    return SolverReport(method, err, it, bool(converged), rec.trace, wall)


def compare_methods(spec, methods=None) -> BenchmarkReport:
    methods = list(spec.methods if methods is None else methods)
    mesh = base_mesh(spec) if methods else None
    return BenchmarkReport([run_method(spec, m, mesh) for m in methods])


# -- outputs ------------------------------------------------------------------------------

CONVERGENCE_HEADER = ["method", "iteration", "error"]
ERRORS_HEADER = ["method", "label", "error", "iterations", "converged", "rate"]
DELTA_HEADER = ["method_i", "method_j", "delta"]


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def emit_outputs(report: BenchmarkReport, out_dir, formats=("csv", "plot-data")) -> list[Path]:
    """Write CSV tables and gnuplot series; floats are written with ``repr``.

    Wall times go to ``timing.txt`` so that the CSV files are reproducible
    byte for byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    unknown = set(formats) - {"csv", "plot-data"}
    if unknown:
        raise ConfigError(f"unknown output formats {sorted(unknown)}")
    written = []
    if "csv" in formats:
        with open(out / "convergence.csv", "w", newline="") as fh:
            w = _writer(fh)
            w.writerow(CONVERGENCE_HEADER)
            for r in report.reports:
                for it, err in r.trace:
                    w.writerow([r.method, it, repr(float(err))])
        with open(out / "errors.csv", "w", newline="") as fh:
            fh.write(f"# {RATE_RULE}\n")
            w = _writer(fh)
            w.writerow(ERRORS_HEADER)
            for r in report.reports:
                w.writerow([r.method, LABELS[r.method], repr(float(r.error)), r.iterations,
                            int(r.converged), r.rate])
        with open(out / "delta.csv", "w", newline="") as fh:
            w = _writer(fh)
            w.writerow(DELTA_HEADER)
            for a, b, d in report.pairs():
                w.writerow([a, b, repr(float(d))])
        with open(out / "timing.txt", "w") as fh:
            for r in report.reports:
                fh.write(f"{r.method} {r.wall_time:.3f}\n")
        written += [out / n for n in ("convergence.csv", "errors.csv", "delta.csv", "timing.txt")]
    if "plot-data" in formats:
        for m in METHODS:
            path = out / f"convergence_{m}.dat"
            with open(path, "w") as fh:
                fh.write(f"# {LABELS[m]}\n# iteration error\n")
                for r in report.reports:
                    if r.method == m:
                        fh.writelines(f"{it} {float(err)!r}\n" for it, err in r.trace)
            written.append(path)
    return written


def read_outputs(out_dir) -> BenchmarkReport:
    """Rebuild a report (without wall times) from ``convergence.csv`` and ``errors.csv``."""
    out = Path(out_dir)
    traces: dict = {}
    with open(out / "convergence.csv", newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        for method, it, err in rows:
            traces.setdefault(method, []).append((int(it), float(err)))
    reports = []
    with open(out / "errors.csv", newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        next(rows)
        for method, _label, err, iters, conv, _rate in rows:
            reports.append(SolverReport(method, float(err), int(iters), conv == "1", traces.get(method, [])))
    return BenchmarkReport(reports)

