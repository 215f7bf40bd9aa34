"""Command-line interface.

    hdrm solve <problem-file> [--method M] [--out DIR]
    hdrm compare <problem-file> [--out DIR]
    hdrm mesh-info <mesh-file>

Exit status is 0 on success, 2 for invalid input and 3 when the solve does
not converge.  ``HDRM_LOG_LEVEL`` (e.g. ``INFO``, ``DEBUG``) sets the log
verbosity; the default is ``WARNING``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from . import bench
from .errors import (BreakdownError, ConfigError, GeometryError, NumericError, SingularMatrixError,
                     UnsupportedError, ValidationError)
from .linalg import norm
from .mesh import read_mesh
from .problem_file import parse_problem

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 2, 3

log = logging.getLogger("hdrm")


def _configure_logging():
    level = os.environ.get("HDRM_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _write_solution(path, mesh, u):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "x", "y", "u"])
        for i, ((x, y), v) in enumerate(zip(mesh.points.tolist(), u.tolist())):
            w.writerow([i, repr(x), repr(y), repr(v)])


def cmd_solve(args) -> int:
    spec = parse_problem(args.problem)
    mesh = bench.base_mesh(spec)
    u, iterations, converged = bench.solve_method(spec, args.method, mesh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_solution(out / "solution.csv", mesh, u)
    line = f"{args.method}: {iterations} iterations, converged={converged}"
    if spec.exact is not None:
        err = norm(u - spec.exact(mesh.points[:, 0], mesh.points[:, 1]), "L2", mesh)
        line += f", L2 error {err:.6e}"
    print(line)
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_compare(args) -> int:
    spec = parse_problem(args.problem)
    report = bench.compare_methods(spec)
    bench.emit_outputs(report, args.out)
    print(f"{'method':<14}{'error':>14}{'iterations':>12}  converged  rate")
    for r in report.reports:
        print(f"{bench.LABELS[r.method]:<14}{r.error:>14.6e}{r.iterations:>12}  {str(r.converged):<9}  {r.rate}")
    print(bench.RATE_RULE)
    return EXIT_OK


def cmd_mesh_info(args) -> int:
    try:
        mesh = read_mesh(args.mesh)
    except OSError as exc:
        raise ValidationError([str(exc)]) from None
    lengths = mesh.edge_lengths()
    print(f"nodes      {mesh.n_nodes}")
    print(f"elements   {mesh.n_elements}")
    print(f"edges      {mesh.n_edges}")
    print(f"area       {mesh.total_area()!r}")
    print(f"conforming {mesh.is_conforming()}")
    print(f"generation {int(mesh.generations.max(initial=0))}")
    if mesh.n_edges:
        print(f"edge h     {float(lengths.min())!r} .. {float(lengths.max())!r}")
    for marker in sorted(set(mesh.edge_markers)):
        print(f"segment {marker}: {sum(m == marker for m in mesh.edge_markers)} edges")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hdrm", description="Hybrid boundary-element / finite-element solver.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve one problem file")
    s.add_argument("problem")
    s.add_argument("--method", default="hdrm", choices=bench.METHODS)
    s.add_argument("--out", default="hdrm-output")
    s.set_defaults(func=cmd_solve)
    c = sub.add_parser("compare", help="run every listed method and write comparison tables")
    c.add_argument("problem")
    c.add_argument("--out", default="hdrm-output")
    c.set_defaults(func=cmd_compare)
    m = sub.add_parser("mesh-info", help="summarise a mesh file")
    m.add_argument("mesh")
    m.set_defaults(func=cmd_mesh_info)
    return p


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return args.func(args)
    except ValidationError as exc:
        for msg in exc.errors:
            print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, GeometryError, UnsupportedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (BreakdownError, NumericError, SingularMatrixError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
