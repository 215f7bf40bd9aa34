import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdrm.drm import (BoundaryDiscretization, assemble_hg, default_internal_points, drm_solve,
                      fundamental_solution, rbf_expand, rbf_matrix, trace_operator)
from hdrm.errors import DegenerateCentersError, GeometryError, NonUniqueError, NumericError, UnsupportedError
from hdrm.problem import Isotropic

from helpers import problem

SQUARE = (0.0, 0.0, 1.0, 1.0)


def test_fundamental_solution_values():
    assert fundamental_solution((1.0, 0.0), (0.0, 0.0)) == 0.0
    assert fundamental_solution((np.exp(-2 * np.pi), 0.0), (0.0, 0.0)) == pytest.approx(1.0, rel=1e-14)
    assert fundamental_solution((0.3, 2.3), (0.3, 0.3)) == pytest.approx(-0.11031780007632579, rel=1e-14)
    with pytest.raises(NumericError):
        fundamental_solution((0.2, 0.2), (0.2, 0.2))


def test_boundary_invariants():
    b = BoundaryDiscretization.from_rectangle(SQUARE, 16)
    np.testing.assert_allclose(np.hypot(*b.normals.T), 1.0)
    # shoelace area is positive for counter-clockwise order
    area = 0.5 * np.sum(b.starts[:, 0] * b.ends[:, 1] - b.ends[:, 0] * b.starts[:, 1])
    assert area == pytest.approx(1.0)
    mid = b.midpoints
    on_side = np.isclose(mid, 0.0) | np.isclose(mid, 1.0)
    assert np.all(on_side.any(axis=1))


def test_invalid_discretisations():
    with pytest.raises(GeometryError):
        BoundaryDiscretization.from_polygon([(0, 0), (1, 0)], ["a", "b"])
    with pytest.raises(GeometryError):
        BoundaryDiscretization([(0, 0), (1, 0), (1, 0), (0, 0)], [(1, 0), (1, 1), (1, 1), (1, 0)], "abcd")


@pytest.mark.parametrize("n", [4, 12, 40])
def test_h_rows_sum_to_zero(n):
    sysm = assemble_hg(BoundaryDiscretization.from_rectangle(SQUARE, n))
    np.testing.assert_allclose(sysm.H.sum(axis=1), 0.0, atol=1e-10)
    assert sysm.H.shape == sysm.G.shape == (n, n)


@given(st.integers(3, 12), st.floats(0.3, 3.0), st.integers(1, 3))
def test_h_rows_sum_to_zero_on_polygons(sides, radius, per_edge):
    t = 2 * np.pi * np.arange(sides) / sides
    b = BoundaryDiscretization.from_polygon(np.column_stack([radius * np.cos(t), np.sin(t)]),
                                            ["s"] * sides, per_edge)
    np.testing.assert_allclose(assemble_hg(b).H.sum(axis=1), 0.0, atol=1e-10)


def flux_error(n):
    b = BoundaryDiscretization.from_rectangle(SQUARE, n)
    sol = drm_solve(problem("linear b=1", source="constant c=0"), b, internal_points=np.zeros((0, 2)))
    return np.abs(sol.q - b.normals[:, 0])


def test_flux_recovery_and_self_convergence():
    e32, e64 = flux_error(32), flux_error(64)
    assert e32.mean() < 5e-2
    assert e64.mean() < e32.mean()


def test_rbf_examples():
    c = np.random.default_rng(3).random((7, 2))
    np.testing.assert_array_equal(rbf_expand(lambda x, y: 0 * x, c), 0.0)
    np.testing.assert_allclose(rbf_expand(lambda x, y: 5 + 0 * x, [[0.2, 0.4]]), [5.0])
    g = np.linspace(0, 1, 3)
    nine = np.array([(x, y) for x in g for y in g])
    alpha = rbf_expand(lambda x, y: x + y, nine)
    np.testing.assert_allclose(rbf_matrix(nine) @ alpha, nine.sum(axis=1), atol=1e-10)
    with pytest.raises(DegenerateCentersError):
        rbf_expand(lambda x, y: x, [[0, 0], [1, 1], [0, 0]])


@given(st.integers(1, 40), st.integers(0, 2 ** 16))
def test_rbf_interpolation_identity(n, seed):
    rng = np.random.default_rng(seed)
    c = rng.random((n, 2))
    if n > 1 and np.min(np.hypot(*(c[:, None] - c[None]).transpose(2, 0, 1))[np.triu_indices(n, 1)]) < 1e-3:
        return
    vals = rng.standard_normal(n)
    back = rbf_matrix(c) @ rbf_expand(vals, c)
    np.testing.assert_allclose(back, vals, rtol=1e-10, atol=1e-10 * np.abs(vals).max())


def test_harmonic_linear_centre_value():
    b = BoundaryDiscretization.from_rectangle(SQUARE, 32)
    sol = drm_solve(problem("linear b=1", source="constant c=0"), b)
    assert sol.evaluate([(0.5, 0.5)])[0] == pytest.approx(0.5, abs=1e-2)


def test_constant_reproduced():
    b = BoundaryDiscretization.from_rectangle(SQUARE, 16)
    sol = drm_solve(problem("constant c=2.5", source="constant c=0"), b)
    np.testing.assert_allclose(sol.u_internal, 2.5, atol=1e-10)
    np.testing.assert_allclose(sol.q, 0.0, atol=1e-10)


def test_poisson_x_squared_converges():
    p = problem("poly2 d=1")
    errs = []
    for n in (32, 64):
        b = BoundaryDiscretization.from_rectangle(SQUARE, n)
        sol = drm_solve(p, b)
        pts = sol.system.internal_points
        errs.append(np.abs(sol.u_internal - p.exact(*pts.T)).max())
    assert errs[0] < 5e-2 and errs[1] < errs[0]


def test_interior_error_decreases_for_harmonic_linear():
    p = problem("linear a=0.5 b=1 c=-2", source="constant c=0")
    errs = []
    for n in (8, 16, 32, 64):
        b = BoundaryDiscretization.from_rectangle(SQUARE, n)
        sol = drm_solve(p, b)
        pts = sol.system.internal_points
        errs.append(np.abs(sol.u_internal - p.exact(*pts.T)).max())
    assert all(b_ < a_ for a_, b_ in zip(errs, errs[1:])), errs


def test_all_neumann_rejected():
    p = problem("linear b=1", source="constant c=0", kinds={s: "neumann" for s in ("bottom", "right", "top", "left")})
    with pytest.raises(NonUniqueError):
        drm_solve(p, BoundaryDiscretization.from_rectangle(SQUARE, 8))


def test_non_laplace_rejected():
    p = problem("linear b=1", source="constant c=0", diffusion=Isotropic(k=2.0))
    with pytest.raises(UnsupportedError):
        drm_solve(p, BoundaryDiscretization.from_rectangle(SQUARE, 8))


def test_evaluate_outside_region():
    b = BoundaryDiscretization.from_rectangle(SQUARE, 8)
    sol = drm_solve(problem("linear b=1", source="constant c=0"), b)
    with pytest.raises(GeometryError):
        sol.evaluate([(2.0, 0.5)])


def test_default_internal_points_inside():
    b = BoundaryDiscretization.from_polygon([(0, 0), (2, 0), (0, 2)], "abc")
    pts = default_internal_points(b, 6)
    assert len(pts) and np.all(pts.sum(axis=1) < 2)


def test_nonlinear_boundary_by_newton():
    p = problem("poly2 a=3 d=-0.25 f=-0.25", kinds={"top": "nonlinear", "right": "neumann"})
    b = BoundaryDiscretization.from_rectangle(SQUARE, 64)
    sol = drm_solve(p, b)
    assert sol.newton_trace.converged
    pts = sol.system.internal_points
    assert np.abs(sol.u_internal - p.exact(*pts.T)).max() < 5e-3


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.integers(2, 4))
def test_trace_reconstruction_exact_for_linear_data(a, b, c, per_side):
    bnd = BoundaryDiscretization.from_polygon([(0, 0), (2, 0), (2, 1), (0, 1)], "abcd", per_side)
    f = lambda q: a + b * q[:, 0] + c * q[:, 1]
    pts = np.vstack([bnd.starts, bnd.midpoints, 0.3 * bnd.starts + 0.7 * bnd.ends, [[1.0, 0.5]]])
    on, W = trace_operator(pts, bnd)
    np.testing.assert_array_equal(on, [True] * (len(pts) - 1) + [False])
    np.testing.assert_allclose(W @ f(bnd.midpoints), f(pts[on]), atol=1e-12)


def test_boundary_nodes_take_reconstructed_trace():
    p = problem("linear a=2 b=1 c=0.5", source="constant c=0", kinds={"right": "neumann"})
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.0], [1.0, 0.3]])
    errs = []
    for n in (16, 32, 64):
        sol = drm_solve(p, BoundaryDiscretization.from_rectangle(SQUARE, n))
        e = np.abs(sol.evaluate(pts) - p.exact(*pts.T))
        # Dirichlet sides are linear data, reproduced exactly
        np.testing.assert_allclose(e[[0, 3, 4]], 0.0, atol=1e-12)
        errs.append(e.max())
    # values on the Neumann side are first-order accurate
    assert errs[0] < 2e-2 and errs[1] < 0.6 * errs[0] and errs[2] < 0.6 * errs[1]
