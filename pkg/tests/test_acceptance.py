"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (run with ``-s`` to see them
inline; they are also repeated in the terminal summary).
"""

import time

import numpy as np
import pytest
from scipy.optimize import bisect

import conftest
from hdrm.adapt import adaptive_solve, error_function
from hdrm.bench import BENCHMARK_FILE, delta_table, read_outputs
from hdrm.cli import main
from hdrm.config import NewtonConfig, RefinementConfig
from hdrm.drm import BoundaryDiscretization, assemble_hg, default_internal_points, drm_solve
from hdrm.fem import solve_linear
from hdrm.hybrid import RegionPartition, hybrid_solve, partition_domain
from hdrm.linalg import bicgstab, dense_solve, gauss_seidel, gmres, norm
from hdrm.mesh import build_rect_mesh, refine_elements, uniform_refine
from hdrm.newton import FemNonlinearSystem, jacobian, newton_krylov_solve, residual
from hdrm.problem import BoundaryCondition, parse_field
from hdrm.problem_file import parse_problem

from helpers import problem

REFERENCE_ERRORS = {"hdrm": 0.0001, "gauss_seidel": 0.001, "dynamic_relaxation": 0.0005, "dual_reciprocity": 0.0003}
REFERENCE_DELTAS = {
    ("hdrm", "gauss_seidel"): 0.0009,
    ("hdrm", "dual_reciprocity"): 0.0002,
    ("hdrm", "dynamic_relaxation"): 0.0004,
    ("gauss_seidel", "dynamic_relaxation"): 0.0005,
    ("gauss_seidel", "dual_reciprocity"): 0.0007,
    ("dynamic_relaxation", "dual_reciprocity"): 0.0002,
}
ORDER = ["hdrm", "dual_reciprocity", "dynamic_relaxation", "gauss_seidel"]


def verdict(n, checks):
    """Print and record one line for criterion ``n``; fail if any check failed."""
    failed = [name for name, ok in checks.items() if not ok]
    line = f"{'PASS' if not failed else 'FAIL'} criterion {n}: " + "; ".join(
        f"{name}={'ok' if ok else 'FAILED'}" for name, ok in checks.items())
    print(line, flush=True)
    conftest.ACCEPTANCE[n] = line
    assert not failed, line


@pytest.fixture(scope="module")
def benchmark_runs(tmp_path_factory):
    """Two consecutive ``compare`` runs of the shipped benchmark."""
    runs = []
    for k in range(2):
        out = tmp_path_factory.mktemp(f"bench{k}")
        t0 = time.perf_counter()
        code = main(["compare", str(BENCHMARK_FILE), "--out", str(out)])
        runs.append((code, out, time.perf_counter() - t0))
    return runs


def test_criterion_1_reference_deltas_and_benchmark_ordering(benchmark_runs):
    d = delta_table(REFERENCE_ERRORS)
    deltas_ok = all(abs(d[pair] - want) < 1e-12 and d[pair[::-1]] == d[pair] for pair, want in REFERENCE_DELTAS.items())
    code, out, seconds = benchmark_runs[0]
    spec = parse_problem(BENCHMARK_FILE)
    report = read_outputs(out)
    err = report.errors
    for m in ORDER:
        r = next(r for r in report.reports if r.method == m)
        print(f"  {m:<20} L2 error {r.error:.6e}  iterations {r.iterations}  converged {r.converged}")
    print(f"  compare runtime {seconds:.1f} s, {(spec.nx + 1) * (spec.ny + 1)} nodes, budget {spec.bench.max_iter}")
    verdict(1, {
        "six reference deltas": deltas_ok,
        "exit 0": code == 0,
        "strict ordering": all(err[a] < err[b] for a, b in zip(ORDER, ORDER[1:])),
        "~1e3 unknowns": 500 <= (spec.nx + 1) * (spec.ny + 1) <= 5000,
        "budget <= 1e5": spec.bench.max_iter <= 100_000,
        "runtime < 60 s": seconds < 60.0,
    })


def test_criterion_2_manufactured_convergence():
    t0 = time.perf_counter()
    p = problem("sin_sin k=1")
    errs = []
    for n in (8, 16, 32):
        m = build_rect_mesh(n, n)
        errs.append(error_function(solve_linear(m, p), p.exact, m))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    seconds = time.perf_counter() - t0
    print(f"  L2 errors {errs}, observed orders {rates.tolist()}, {seconds:.2f} s")
    verdict(2, {"order in [1.8, 2.2]": bool(np.all((rates >= 1.8) & (rates <= 2.2))), "runtime < 30 s": seconds < 30})


def test_criterion_3_patch_test():
    rng = np.random.default_rng(3)
    base = build_rect_mesh(3, 3, (-1.0, 0.0, 2.0, 1.5))
    meshes = [build_rect_mesh(1, 1), build_rect_mesh(5, 2), base, uniform_refine(base, 1)]
    for _ in range(6):
        m = meshes[-1]
        meshes.append(refine_elements(m, set(rng.choice(m.n_elements, 3, replace=False).tolist())))
    worst = 0.0
    for m in meshes:
        assert m.is_conforming()
        a, b, c = rng.uniform(-3, 3, 3).tolist()
        x0, y0 = m.points.min(axis=0).tolist()
        x1, y1 = m.points.max(axis=0).tolist()
        p = problem(f"linear a={a!r} b={b!r} c={c!r}", source="constant c=0", corners=(x0, y0, x1, y1))
        u = solve_linear(m, p)
        worst = max(worst, np.abs(u - (a + b * m.points[:, 0] + c * m.points[:, 1])).max())
    print(f"  {len(meshes)} meshes, worst nodal error {worst:.2e}")
    verdict(3, {"nodal error <= 1e-10": worst <= 1e-10})


def test_criterion_4_drm_verification():
    p = problem("linear b=1", source="constant c=0")
    errs = {}
    for n in (32, 64):
        b = BoundaryDiscretization.from_rectangle((0.0, 0.0, 1.0, 1.0), n)
        sol = drm_solve(p, b)
        pts = sol.system.internal_points
        errs[n] = np.abs(sol.u_internal - pts[:, 0]).max()
    row_sums = max(np.abs(assemble_hg(BoundaryDiscretization.from_rectangle((0.0, 0.0, 1.0, 1.0), n)).H.sum(axis=1)).max()
                   for n in (4, 8, 16, 32, 64, 128))
    print(f"  interior max error {errs}, worst H row sum {row_sums:.2e}")
    verdict(4, {"error(32) < 1e-2": errs[32] < 1e-2, "error(64) < error(32)": errs[64] < errs[32],
                "H row sums < 1e-10": row_sums < 1e-10})


def test_criterion_5_newton_krylov():
    p = problem("poly2 a=3 d=-0.25 f=-0.25", kinds={"top": "nonlinear", "right": "neumann"})
    m = build_rect_mesh(8, 8)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        u = 2.5 + 0.3 * rng.random(m.n_nodes)
        v = rng.standard_normal(m.n_nodes)
        Ja = jacobian(u, p, "analytic", m) @ v
        Jf = jacobian(u, p, "finite-difference", m, fd_step=1e-6) @ v
        worst = max(worst, np.linalg.norm(Ja - Jf) / np.linalg.norm(Ja))

    sys = FemNonlinearSystem(m, p)
    u, trace = newton_krylov_solve(sys.initial_guess(), sys, NewtonConfig(tol_residual=1e-12, tol_step=1e-30))
    r = trace.residual_norms[-4:]
    q = r[1:] / r[:-1]
    superlinear = bool(trace.converged and q[-1] < q[0] < 1.0 and np.linalg.norm(residual(u, p, m)) <= 1e-12)

    s = problem(None, source="constant c=0")
    s.bcs["right"] = BoundaryCondition("nonlinear", parse_field("constant c=10"), power=4.0, coeff=1.0)
    for seg in ("top", "bottom"):
        s.bcs[seg] = BoundaryCondition("neumann", parse_field("constant c=0"))
    s.bcs["left"] = BoundaryCondition("dirichlet", parse_field("constant c=1"))
    sm = build_rect_mesh(1, 1)
    ssys = FemNonlinearSystem(sm, s)
    us, strace = newton_krylov_solve(ssys.initial_guess(), ssys)
    root = bisect(lambda t: t ** 4 - 10.0, 0.0, 10.0, xtol=1e-14)
    gap = np.abs(us[ssys.nl_nodes] - root).max()
    print(f"  FD/analytic worst relative gap {worst:.2e}; last residual ratios {q.tolist()}; bisection gap {gap:.2e}")
    verdict(5, {"Jacobians agree 1e-5": worst <= 1e-5, "superlinear tail": superlinear,
                "bisection oracle 1e-8": bool(strace.converged and gap <= 1e-8)})


def test_criterion_6_linear_algebra_oracles():
    agree, spd_ok = True, True
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 51))
        A = rng.uniform(-1, 1, (n, n)) * (rng.random((n, n)) < 0.4)
        A[np.diag_indices(n)] = np.abs(A).sum(axis=1) + rng.uniform(0.5, 2.0, n)
        b = rng.standard_normal(n)
        ref = dense_solve(A, b)
        for solver in (gmres, bicgstab, gauss_seidel):
            x, stats = solver(A, b, tol=1e-12, max_iter=5000)
            agree &= stats.converged and np.abs(x - ref).max() <= 1e-8
        # SPD instance: full GMRES (no restart) must finish within n steps
        M = rng.standard_normal((n, n))
        S = M @ M.T + n * np.eye(n)
        x, stats = gmres(S, b, tol=1e-8, max_iter=n, restart=n)
        spd_ok &= stats.converged and stats.iterations <= n and np.abs(x - dense_solve(S, b)).max() <= 1e-6
    verdict(6, {"100 systems agree 1e-8": bool(agree), "GMRES within n on SPD": bool(spd_ok)})


def test_criterion_7_adaptive_efficiency():
    p = problem("sin_sin k=1")
    cfg = RefinementConfig(epsilon=1.0, delta=1e-6, max_generations=4)
    _, _, report = adaptive_solve(p, build_rect_mesh(4, 4), refine_config=cfg)
    target, adaptive_nodes = report.errors[-1], report.nodes[-1]
    uniform_nodes = None
    for n in range(4, 200):
        m = build_rect_mesh(n, n)
        if error_function(solve_linear(m, p), p.exact, m) <= target:
            uniform_nodes = m.n_nodes
            break
    errs = report.errors
    monotone = all(b <= a * (1 + 1e-12) for a, b in zip(errs, errs[1:]))

    m6 = build_rect_mesh(6, 6)
    u0, _, r0 = adaptive_solve(p, m6, refine_config=RefinementConfig(max_generations=0))
    sys = FemNonlinearSystem(m6, p)
    ref, _ = newton_krylov_solve(sys.initial_guess(), sys, p.newton)
    u1, _, r1 = adaptive_solve(p, m6, refine_config=RefinementConfig(epsilon=1e9, max_generations=3))
    degenerate = (np.array_equal(u0, ref) and np.array_equal(u1, ref) and r1.stop_reason == "no_marks"
                  and len(r0.generations) == len(r1.generations) == 1)
    print(f"  adaptive nodes {report.nodes}, errors {[f'{e:.3e}' for e in errs]}")
    print(f"  target {target:.3e}: adaptive {adaptive_nodes} nodes, uniform {uniform_nodes} nodes")
    verdict(7, {"adaptive nodes <= uniform nodes": uniform_nodes is not None and adaptive_nodes <= uniform_nodes,
                "errors non-increasing": monotone, "degenerate configs = single solve": bool(degenerate)})


def test_criterion_8_hybrid_degeneracy():
    m = build_rect_mesh(8, 8)
    p = problem("poly2 a=1 b=0.3 d=0.5 f=-0.5")
    sol = hybrid_solve(p, m, RegionPartition(m, np.zeros(0, dtype=np.int64), np.arange(m.n_elements)))
    b = BoundaryDiscretization.from_mesh(m)
    drm = drm_solve(p, b, default_internal_points(b, p.hybrid.internal_grid)).evaluate(m.points)
    gap_drm = np.abs(sol.u - drm).max()

    q = problem("poly2 a=3 d=-0.25 f=-0.25", kinds={"top": "nonlinear", "right": "neumann"})
    sol = hybrid_solve(q, m, RegionPartition(m, np.arange(m.n_elements), np.zeros(0, dtype=np.int64)))
    sys = FemNonlinearSystem(m, q)
    ref, _ = newton_krylov_solve(sys.initial_guess(), sys, q.newton)
    gap_fem = np.abs(sol.u - ref).max()

    h = problem("linear b=1", source="constant c=0")
    corner = hybrid_solve(h, m, partition_domain(m, box=(0.0, 0.0, 0.5, 0.5)))
    print(f"  empty-FEM gap {gap_drm:.1e}, all-FEM gap {gap_fem:.1e}, corner-patch final trace change "
          f"{corner.trace_change[-1]:.1e}, FEM/DRM interface disagreement {corner.interface_disagreement:.1e}")
    verdict(8, {"empty FEM = drm_solve 1e-12": gap_drm <= 1e-12, "all FEM = Newton 1e-12": gap_fem <= 1e-12,
                "corner traces agree 1e-6": bool(corner.converged and corner.trace_change[-1] < 1e-6)})


def test_criterion_9_determinism(benchmark_runs):
    (c1, a, _), (c2, b, _) = benchmark_runs
    names = sorted(f.name for f in a.glob("*.csv"))
    same = names == sorted(f.name for f in b.glob("*.csv")) and all(
        (a / n).read_bytes() == (b / n).read_bytes() for n in names)
    print(f"  compared {names}")
    verdict(9, {"both runs exit 0": c1 == c2 == 0, "CSV files byte-identical": bool(same and names)})
