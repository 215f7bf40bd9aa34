import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdrm.bench import (BENCHMARK_FILE, LABELS, METHODS, BenchmarkReport, SolverReport, checkpoints, compare_methods,
                        delta_table, emit_outputs, read_outputs, run_method, solve_method)
from hdrm.config import BenchConfig, HybridConfig
from hdrm.errors import ConfigError, UnsupportedError
from hdrm.fem import assemble
from hdrm.linalg import dense_solve
from hdrm.mesh import build_rect_mesh
from hdrm.problem import Isotropic

from helpers import problem

REFERENCE_ERRORS = {"hdrm": 0.0001, "gauss_seidel": 0.001, "dynamic_relaxation": 0.0005, "dual_reciprocity": 0.0003}


def small(exact="poly2 a=1 b=0.3 d=0.5 f=-0.5", kinds=None, **kw):
    kw.setdefault("hybrid", HybridConfig(fem_box=(0.0, 0.0, 0.5, 0.5)))
    kw.setdefault("bench", BenchConfig(max_iter=5000, tol=1e-12))
    return problem(exact, kinds=kinds, nx=8, ny=8, **kw)


def test_checkpoints():
    assert checkpoints(50) == [1]
    assert checkpoints(1000) == [1, 100, 1000]
    assert checkpoints(20000) == [1, 100, 1000, 5000, 10000]


def test_rate_labels():
    assert SolverReport("x", 0.0, 1, True, [(1, 1.0), (100, 1e-4)]).rate == "Fast"
    assert SolverReport("x", 0.0, 1, True, [(1, 1.0), (100, 0.05)]).rate == "Moderate"
    assert SolverReport("x", 0.0, 1, True, [(1, 1.0), (100, 0.5)]).rate == "Slow"
    assert SolverReport("x", 0.0, 1, True, [(3, 1.0)]).rate == "Fast"


def test_reference_error_deltas():
    d = delta_table(REFERENCE_ERRORS)
    assert d["hdrm", "gauss_seidel"] == pytest.approx(0.0009, abs=1e-15)
    assert d["hdrm", "dual_reciprocity"] == pytest.approx(0.0002, abs=1e-15)


def test_duplicate_method_has_zero_delta():
    rep = BenchmarkReport([SolverReport("gauss_seidel", 0.3, 1, True), SolverReport("gauss_seidel", 0.3, 1, True)])
    assert rep.pairs() == [("gauss_seidel", "gauss_seidel", 0.0)]


@given(st.dictionaries(st.sampled_from(METHODS), st.floats(0, 1), min_size=1))
def test_delta_table_properties(errors):
    d = delta_table(errors)
    for i in errors:
        assert d[i, i] == 0.0
        for j in errors:
            assert d[i, j] == d[j, i] == abs(errors[i] - errors[j])
            for k in errors:
                assert d[i, k] <= d[i, j] + d[j, k] + 1e-15


def test_linear_exact_solution_all_methods():
    p = small("linear a=2 b=1 c=0.5", kinds={"top": "nonlinear", "right": "neumann"})
    p.source = problem("constant c=0", source="constant c=0").source
    errors = {m: run_method(p, m).error for m in METHODS}
    assert errors["gauss_seidel"] < 1e-8 and errors["dynamic_relaxation"] < 1e-8
    # constant boundary elements are not exact for linear data on flux and power-law sides
    assert errors["dual_reciprocity"] < 5e-3 and errors["hdrm"] < 1e-2


def test_gauss_seidel_matches_direct_solve():
    p = small()
    mesh = build_rect_mesh(p.nx, p.ny, p.corners)
    u, _, converged = solve_method(p, "gauss_seidel", mesh)
    assert converged
    s = assemble(mesh, p)
    np.testing.assert_allclose(u, dense_solve(s.K.toarray(), s.F), atol=1e-8)


def test_unsupported_combination():
    p = small(diffusion=Isotropic(k=2.0))
    with pytest.raises(UnsupportedError):
        run_method(p, "dual_reciprocity")
    with pytest.raises(ConfigError):
        run_method(small(None), "gauss_seidel")


def test_emit_and_read_round_trip(tmp_path):
    p = small(kinds={"top": "nonlinear"})
    rep = compare_methods(p)
    files = emit_outputs(rep, tmp_path)
    assert {f.name for f in files} >= {"convergence.csv", "errors.csv", "delta.csv"}
    back = read_outputs(tmp_path)
    assert back.methods == rep.methods
    for a, b in zip(rep.reports, back.reports):
        assert (a.error, a.iterations, a.converged, a.trace) == (b.error, b.iterations, b.converged, b.trace)
    assert back.pairs() == rep.pairs()
    for r in rep.reports:
        errs = [e for _, e in r.trace]
        assert all(b <= a for a, b in zip(errs, errs[1:])), (r.method, errs)
        assert (tmp_path / f"convergence_{r.method}.dat").read_text().startswith(f"# {LABELS[r.method]}\n")


def test_empty_method_list_gives_header_only_files(tmp_path):
    emit_outputs(compare_methods(small(), methods=[]), tmp_path)
    assert (tmp_path / "convergence.csv").read_text() == "method,iteration,error\n"
    assert (tmp_path / "delta.csv").read_text() == "method_i,method_j,delta\n"
    assert (tmp_path / "errors.csv").read_text().splitlines()[1] == "method,label,error,iterations,converged,rate"
    assert len((tmp_path / "errors.csv").read_text().splitlines()) == 2


def test_unknown_output_format(tmp_path):
    with pytest.raises(ConfigError):
        emit_outputs(BenchmarkReport(), tmp_path, formats=("png",))


def test_shipped_benchmark_exists():
    assert BENCHMARK_FILE.is_file()
