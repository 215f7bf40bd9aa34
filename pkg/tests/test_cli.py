import os
import subprocess
import sys

import pytest

from hdrm.cli import main
from hdrm.mesh import build_rect_mesh, refine_elements, write_mesh
from hdrm.problem_file import write_problem

from helpers import problem
from hdrm.config import BenchConfig, HybridConfig


@pytest.fixture
def small_file(tmp_path):
    p = problem("poly2 a=3 d=-0.25 f=-0.25", kinds={"top": "nonlinear", "right": "neumann"}, nx=6, ny=6,
                hybrid=HybridConfig(fem_box=(0.0, 0.0, 0.5, 0.5)), bench=BenchConfig(max_iter=3000))
    path = tmp_path / "p.txt"
    write_problem(p, path)
    return path


def test_solve_writes_solution(small_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["solve", str(small_file), "--out", str(out)]) == 0
    lines = (out / "solution.csv").read_text().splitlines()
    assert lines[0] == "node,x,y,u" and len(lines) == 1 + 49
    assert "converged=True" in capsys.readouterr().out


def test_solve_not_converged_exit_code(small_file, tmp_path):
    text = small_file.read_text().replace("max_iter = 3000", "max_iter = 2")
    small_file.write_text(text)
    assert main(["solve", str(small_file), "--method", "gauss_seidel", "--out", str(tmp_path / "o")]) == 3


def test_compare_outputs(small_file, tmp_path, capsys):
    out = tmp_path / "cmp"
    assert main(["compare", str(small_file), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    for label in ("H-DRM", "DualRec", "DynRelax", "Gauss-Seidel"):
        assert label in text
    assert (out / "delta.csv").read_text().count("\n") == 1 + 6


def test_invalid_inputs_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("[problem]\nnx = x\n")
    assert main(["solve", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "malformed number" in err and "missing boundary condition for segment 'bottom'" in err
    assert main(["solve", str(tmp_path / "missing.txt")]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["mesh-info", str(tmp_path / "missing.mesh")]) == 2


def test_mesh_info(tmp_path, capsys):
    path = tmp_path / "m.txt"
    write_mesh(refine_elements(build_rect_mesh(2, 2), {0}), path)
    assert main(["mesh-info", str(path)]) == 0
    out = capsys.readouterr().out
    assert "conforming True" in out and "generation 1" in out and "area       1.0" in out
    assert "np.float64" not in out


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "hdrm.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "compare" in res.stdout


def test_log_level_from_environment(small_file, tmp_path):
    env = {**os.environ, "HDRM_LOG_LEVEL": "info"}
    res = subprocess.run([sys.executable, "-m", "hdrm.cli", "compare", str(small_file),
                          "--out", str(tmp_path / "o")], capture_output=True, text=True, env=env)
    quiet = subprocess.run([sys.executable, "-m", "hdrm.cli", "compare", str(small_file),
                            "--out", str(tmp_path / "q")], capture_output=True, text=True)
    assert res.returncode == quiet.returncode == 0
    assert "INFO hdrm" in res.stderr and quiet.stderr == ""
