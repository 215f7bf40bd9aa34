import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdrm.config import HybridConfig, NewtonConfig
from hdrm.drm import BoundaryDiscretization, default_internal_points, drm_solve
from hdrm.errors import ConfigError, UnsupportedError
from hdrm.hybrid import RegionPartition, fill_notches, grow, hybrid_solve, partition_domain
from hdrm.mesh import build_rect_mesh
from hdrm.newton import FemNonlinearSystem, newton_krylov_solve
from hdrm.problem import Isotropic

from helpers import problem

CORNER = (0.0, 0.0, 0.5, 0.5)


def harmonic():
    return problem("linear b=1", source="constant c=0")


def test_partition_limits():
    m = build_rect_mesh(4, 4)
    eta = np.random.default_rng(0).random(m.n_elements)
    assert partition_domain(m, threshold=np.inf, indicators=eta).is_empty_fem
    assert partition_domain(m, threshold=-1e-300, indicators=eta).is_all_fem
    with pytest.raises(ConfigError):
        partition_domain(m)
    with pytest.raises(ConfigError):
        partition_domain(m, threshold=1.0)


def test_explicit_corner_patch():
    m = build_rect_mesh(4, 4)
    ids = [0, 1, 8, 9]
    part = partition_domain(m, elements=ids)
    np.testing.assert_array_equal(part.fem_elements, ids)
    assert len(part.drm_elements) == m.n_elements - 4


@given(st.floats(0.0, 0.9), st.floats(0.0, 0.9), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_partition_invariants(x0, y0, w, h):
    m = build_rect_mesh(6, 6)
    part = partition_domain(m, box=(x0, y0, x0 + w, y0 + h))
    both = np.concatenate([part.fem_elements, part.drm_elements])
    assert len(np.intersect1d(part.fem_elements, part.drm_elements)) == 0
    np.testing.assert_array_equal(np.sort(both), np.arange(m.n_elements))
    iface = part.interface_nodes
    assert np.isin(iface, part.fem_nodes).all() and np.isin(iface, part.drm_nodes).all()
    for a, b in part.interface_edges:
        assert a in iface and b in iface


def test_fill_notches_closes_sawtooth():
    m = build_rect_mesh(4, 4)
    flag = np.zeros(m.n_elements, dtype=bool)
    flag[[0, 3]] = True
    filled = fill_notches(m, flag)
    assert filled[flag].all()
    nb = m.neighbors()
    count = np.where(nb >= 0, filled[np.maximum(nb, 0)], False).sum(axis=1)
    assert not np.any(~filled & (count >= 2))


def test_grow_adds_layers():
    m = build_rect_mesh(6, 6)
    one = grow(m, [0], 1)
    two = grow(m, [0], 2)
    assert 0 in one and set(one) < set(two)


def test_empty_fem_matches_drm_solve():
    p = problem("poly2 a=1 b=0.3 d=0.5 f=-0.5")
    m = build_rect_mesh(8, 8)
    part = RegionPartition(m, np.zeros(0, dtype=np.int64), np.arange(m.n_elements))
    sol = hybrid_solve(p, m, part)
    b = BoundaryDiscretization.from_mesh(m)
    ref = drm_solve(p, b, default_internal_points(b, p.hybrid.internal_grid))
    np.testing.assert_allclose(sol.u, ref.evaluate(m.points), atol=1e-12, rtol=0)
    assert sol.method == "drm"


def test_all_fem_matches_newton_pipeline():
    p = problem("poly2 a=3 d=-0.25 f=-0.25", kinds={"top": "nonlinear", "right": "neumann"})
    m = build_rect_mesh(8, 8)
    part = RegionPartition(m, np.arange(m.n_elements), np.zeros(0, dtype=np.int64))
    sol = hybrid_solve(p, m, part)
    sys = FemNonlinearSystem(m, p)
    ref, _ = newton_krylov_solve(sys.initial_guess(), sys, p.newton)
    np.testing.assert_allclose(sol.u, ref, atol=1e-12, rtol=0)
    assert sol.method == "fem" and sol.converged


def corner_solve(p, m, **cfg):
    config = HybridConfig(coupling_tol=1e-6, internal_grid=6, **cfg)
    return hybrid_solve(p, m, partition_domain(m, box=CORNER), config)


def test_corner_patch_harmonic():
    m = build_rect_mesh(8, 8)
    assert BoundaryDiscretization.from_mesh(m).n == 32
    sol = corner_solve(harmonic(), m)
    assert sol.converged and sol.method == "hdrm"
    assert np.abs(sol.u - m.points[:, 0]).max() < 5e-2
    assert sol.trace_change[-1] < 1e-6
    assert sol.interface_disagreement < 1e-5


def test_trace_change_non_increasing_on_linear_problems():
    m = build_rect_mesh(8, 8)
    for p in (harmonic(), problem("poly2 a=1 d=0.5 e=0.3")):
        sol = corner_solve(p, m)
        tc = sol.trace_change
        assert sol.converged
        assert all(b <= a * (1 + 1e-9) for a, b in zip(tc, tc[1:])), tc


@settings(max_examples=5)
@given(st.integers(0, 2 ** 16))
def test_element_order_within_region_is_irrelevant(seed):
    p = problem("poly2 a=1 b=0.3 d=0.5 f=-0.5")
    m = build_rect_mesh(6, 6)
    base = partition_domain(m, box=CORNER)
    rng = np.random.default_rng(seed)
    shuffled = RegionPartition(m, rng.permutation(base.fem_elements), rng.permutation(base.drm_elements))
    a = hybrid_solve(p, m, base)
    b = hybrid_solve(p, m, shuffled)
    np.testing.assert_array_equal(a.u, b.u)


def test_nonlinear_boundary_with_callback():
    p = problem("poly2 a=3 d=-0.25 f=-0.25", kinds={"top": "nonlinear", "right": "neumann"})
    m = build_rect_mesh(8, 8)
    seen = []
    sol = hybrid_solve(p, m, partition_domain(m, box=CORNER), HybridConfig(coupling_tol=1e-9),
                       callback=lambda k, u: seen.append(k))
    assert sol.converged and sol.newton_residuals[-1] <= p.newton.tol_residual
    assert seen == list(range(1, sol.sweeps + 1))
    assert np.abs(sol.u - p.exact(*m.points.T)).max() < 2e-2


def test_patch_adaptivity_keeps_solution():
    p = problem("gaussian cx=0.25 cy=0.25 width=0.1 amp=0.5")
    m = build_rect_mesh(8, 8)
    plain = corner_solve(p, m)
    adapted = corner_solve(p, m, adapt_generations=2)
    assert adapted.converged
    assert adapted.fem_mesh.n_elements > plain.fem_mesh.n_elements
    err = lambda s: np.abs(s.u - p.exact(*m.points.T)).max()
    assert err(adapted) < 2 * err(plain)


def test_stagnation_reported_not_raised():
    m = build_rect_mesh(8, 8)
    sol = corner_solve(harmonic(), m, max_sweeps=1)
    assert not sol.converged and sol.stop_reason == "max_sweeps"


def test_variable_diffusion_needs_fem_everywhere():
    p = problem("linear b=1", source="constant c=0", diffusion=Isotropic(k=2.0))
    m = build_rect_mesh(4, 4)
    with pytest.raises(UnsupportedError):
        corner_solve(p, m)
    sol = hybrid_solve(p, m)
    assert sol.method == "fem"
    np.testing.assert_allclose(sol.u, m.points[:, 0], atol=1e-10)
