"""Hybrid solver: finite elements in critical subregions, dual reciprocity elsewhere.

The mesh is split into a finite-element core (elements flagged by an explicit
list, a box, or a gradient threshold) and its complement, which is handled by
boundary elements on the complement's boundary.  The finite-element patch is
the core grown by ``overlap`` element layers, so the two regions overlap.

Coupling is alternating (multiplicative) Schwarz:

1. solve the patch with Dirichlet data on its cut boundary taken from the
   boundary-element representation,
2. solve the boundary-element region with Dirichlet data on the interface
   taken from the patch's P1 field,
3. repeat until the exchanged traces change by less than ``coupling_tol``.

Nonlinear boundary points are updated by Newton steps around the coupling;
each linearised value enters both regions as Dirichlet data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from . import fem
from .adapt import compute_indicators, evaluate_p1, interpolate_to_new_mesh, locate_points
from .config import HybridConfig, NewtonConfig
from .drm import BoundaryDiscretization, DrmSolver, _element_data, default_internal_points, drm_solve
from .errors import ConfigError, UnsupportedError
from .mesh import refine_elements, submesh
from .newton import FemNonlinearSystem, newton_krylov_solve
from .problem import BoundaryCondition, Constant

log = logging.getLogger(__name__)

INTERFACE = "interface"


@dataclass(frozen=True)
class RegionPartition:
    """Disjoint finite-element and boundary-element element sets of one mesh."""

    mesh: object
    fem_elements: np.ndarray
    drm_elements: np.ndarray

    @property
    def fem_nodes(self) -> np.ndarray:
        return np.unique(self.mesh.triangles[self.fem_elements])

    @property
    def drm_nodes(self) -> np.ndarray:
        return np.unique(self.mesh.triangles[self.drm_elements])

    @property
    def interface_nodes(self) -> np.ndarray:
        return np.intersect1d(self.fem_nodes, self.drm_nodes)

    @property
    def interface_edges(self) -> np.ndarray:
        """Edges shared by a finite-element and a boundary-element element (sorted pairs)."""
        flag = np.zeros(self.mesh.n_elements, dtype=bool)
        flag[self.fem_elements] = True
        nb = self.mesh.neighbors()
        out = []
        for e in self.fem_elements:
            tri = self.mesh.triangles[e]
            for k in range(3):
                other = nb[e, k]
                if other >= 0 and not flag[other]:
                    out.append(sorted((int(tri[k]), int(tri[(k + 1) % 3]))))
        return np.array(sorted(out), dtype=np.int64).reshape(-1, 2)

    @property
    def is_empty_fem(self) -> bool:
        return len(self.fem_elements) == 0

    @property
    def is_all_fem(self) -> bool:
        return len(self.drm_elements) == 0


def partition_domain(mesh, threshold=None, indicators=None, elements=None, box=None) -> RegionPartition:
    """Flag finite-element elements by exactly one criterion.

    Parameters
    ----------
    threshold, indicators
        Elements with ``indicators > threshold``.
    elements
        Explicit element ids.
    box
        ``(xmin, ymin, xmax, ymax)``; elements whose centroid lies inside.
    """
    given = [threshold is not None, elements is not None, box is not None]
    if sum(given) != 1:
        raise ConfigError("give exactly one of threshold, elements or box")
    if threshold is not None:
        if indicators is None:
            raise ConfigError("threshold partitioning needs indicators")
        eta = np.asarray(indicators, dtype=float)
        flag = eta > threshold
    elif elements is not None:
        flag = np.zeros(mesh.n_elements, dtype=bool)
        flag[[mesh.check_element(e) for e in elements]] = True
    else:
        x0, y0, x1, y1 = box
        c = mesh.centroids()
        flag = (c[:, 0] >= x0) & (c[:, 0] <= x1) & (c[:, 1] >= y0) & (c[:, 1] <= y1)
    if elements is None:
        flag = fill_notches(mesh, flag)
    return RegionPartition(mesh, np.flatnonzero(flag), np.flatnonzero(~flag))


def fill_notches(mesh, flag) -> np.ndarray:
    """Add unflagged elements with two or more flagged edge neighbours, until none are left.

    Selections cut across grid cells leave a sawtooth interface whose
    re-entrant corners degrade the constant boundary elements.
    """
    flag = np.asarray(flag, dtype=bool).copy()
    nb = mesh.neighbors()
    while True:
        count = np.where(nb >= 0, flag[np.maximum(nb, 0)], False).sum(axis=1)
        add = ~flag & (count >= 2)
        if not add.any():
            return flag
        flag |= add


def grow(mesh, element_ids, layers: int) -> np.ndarray:
    """Add ``layers`` rings of elements sharing a node with the current set."""
    flag = np.zeros(mesh.n_elements, dtype=bool)
    flag[np.asarray(element_ids, dtype=np.int64)] = True
    for _ in range(layers):
        touched = np.zeros(mesh.n_nodes, dtype=bool)
        touched[mesh.triangles[flag].ravel()] = True
        flag |= touched[mesh.triangles].any(axis=1)
    return np.flatnonzero(fill_notches(mesh, flag))


@dataclass
class HybridSolution:
    """Nodal solution on the input mesh plus coupling diagnostics.

    ``trace_change`` holds the max-norm change of the exchanged interface
    data per sweep; ``newton_residuals`` the nonlinear boundary residual per
    outer Newton step.
    """

    u: np.ndarray
    method: str
    converged: bool
    residual_norms: dict = field(default_factory=dict)
    sweeps: int = 0
    trace_change: list = field(default_factory=list)
    newton_residuals: list = field(default_factory=list)
    interface_disagreement: float = 0.0
    stop_reason: str = ""
    drm: object = None
    fem_mesh: object = None
    fem_u: np.ndarray | None = None
    newton_trace: object = None


# -- region solvers ----------------------------------------------------------------


class _Patch:
    """Finite-element solver on the patch with overridable Dirichlet nodes."""

    def __init__(self, sub, problem, base_problem):
        self.mesh = sub
        markers = set(sub.edge_markers)
        self.original_dirichlet = {mk for mk in markers
                                   if mk in base_problem.bcs and base_problem.bcs[mk].kind == "dirichlet"}
        priority = {"dirichlet": 0, "nonlinear": 1, INTERFACE: 2}
        role = {}
        for (a, b), mk in zip(sub.edges.tolist(), sub.edge_markers):
            kind = INTERFACE if mk == INTERFACE else base_problem.bcs[mk].kind
            if kind == "neumann":
                continue
            for n in (a, b):
                if n not in role or priority[kind] < priority[role[n]]:
                    role[n] = kind
        self.cut_nodes = np.array(sorted(n for n, r in role.items() if r == INTERFACE), dtype=np.int64)
        self.nl_nodes = np.array(sorted(n for n, r in role.items() if r == "nonlinear"), dtype=np.int64)
        bcs = dict(problem.bcs)
        bcs[INTERFACE] = BoundaryCondition("dirichlet", Constant(c=0.0))
        for mk, bc in problem.bcs.items():
            if bc.kind == "nonlinear":
                bcs[mk] = BoundaryCondition("dirichlet", Constant(c=0.0))
        sub_problem = replace(problem, bcs=bcs)
        fixed = fem.dirichlet_data(sub, base_problem, markers=self.original_dirichlet)
        fixed.update({int(n): 0.0 for n in np.concatenate([self.cut_nodes, self.nl_nodes])})
        self.system = FemNonlinearSystem(sub, sub_problem, extra_dirichlet=fixed)
        self._pos_cut = np.searchsorted(self.system.dir_nodes, self.cut_nodes)
        self._pos_nl = np.searchsorted(self.system.dir_nodes, self.nl_nodes)
        self._linear = self.system._frozen
        self._lu = None
        self.u = self.system.initial_guess()

    def solve(self, cut_values, nl_values, newton_config):
        self.system.dir_vals[self._pos_cut] = cut_values
        self.system.dir_vals[self._pos_nl] = nl_values
        if self._linear:
            if self._lu is None:
                self._lu = splu(self.system.jacobian(self.u).tocsc())
            self.u = self.u - self._lu.solve(self.system.residual(self.u))
        else:
            self.u, _ = newton_krylov_solve(self.u, self.system, replace(newton_config, linear_solver="direct"))
        return self.u

    def residual_norm(self):
        return float(np.linalg.norm(self.system.residual(self.u)))


def _interpolation_matrix(mesh, points):
    owner, bary = locate_points(mesh, points)
    rows = np.repeat(np.arange(len(points)), 3)
    return sp.csr_matrix((bary.ravel(), (rows, mesh.triangles[owner].ravel())), shape=(len(points), mesh.n_nodes))


class _Coupled:
    """State of one hybrid run on a fixed patch mesh."""

    def __init__(self, problem, mesh, sub, config, drm_solver, drm_kinds, drm_values):
        self.problem = problem
        self.mesh = mesh
        self.config = config
        self.patch = _Patch(sub, problem, problem)
        self.drm = drm_solver
        self.kinds = drm_kinds
        self.values = drm_values.copy()
        b = drm_solver.boundary
        markers = np.array(b.markers, dtype=object)
        self.drm_if = np.flatnonzero(markers == INTERFACE)
        self.drm_nl = np.flatnonzero(np.array([problem.bcs.get(m) is not None and problem.bcs[m].kind == "nonlinear"
                                                for m in b.markers]))
        self.P_if = _interpolation_matrix(sub, b.midpoints[self.drm_if])
        self.E_cut = drm_solver.evaluation_operator(sub.points[self.patch.cut_nodes])
        # base-mesh nodes solved by the patch take its values, the rest come from the boundary elements
        dist, idx = cKDTree(sub.points).query(mesh.points)
        on_cut = np.zeros(sub.n_nodes, dtype=bool)
        on_cut[self.patch.cut_nodes] = True
        in_patch = (dist == 0.0) & ~on_cut[idx]
        self.core_nodes, self.core_sub = np.flatnonzero(in_patch), idx[in_patch]
        self.outer_nodes = np.flatnonzero(~in_patch)
        self.E_outer = drm_solver.evaluation_operator(mesh.points[self.outer_nodes])
        self.cut = None
        self.drm_u = None
        self.drm_q = None

    def nonlinear_points(self):
        """Coordinates, markers and current values of all nonlinear boundary points."""
        sub = self.patch.mesh
        b = self.drm.boundary
        xy = np.vstack([sub.points[self.patch.nl_nodes], b.midpoints[self.drm_nl]])
        mk = [self._marker_of_node(n) for n in self.patch.nl_nodes] + [b.markers[k] for k in self.drm_nl]
        return xy, mk

    def _marker_of_node(self, n):
        for (a, c), mk in zip(self.patch.mesh.edges.tolist(), self.patch.mesh.edge_markers):
            if n in (a, c) and self.problem.bcs.get(mk) is not None and self.problem.bcs[mk].kind == "nonlinear":
                return mk
        raise KeyError(n)

    def _eval(self, E):
        Eu, Eq, e0 = E
        return Eu @ self.drm_u + Eq @ self.drm_q + e0

    def sweep(self, v_nl):
        n_fem = len(self.patch.nl_nodes)
        if self.cut is None:
            self.cut = np.full(len(self.patch.cut_nodes), float(np.mean(v_nl)) if len(v_nl) else 0.0)
        u_sub = self.patch.solve(self.cut, v_nl[:n_fem], None if self.patch._linear else self.problem.newton)
        new_if = self.P_if @ u_sub
        change_if = float(np.max(np.abs(new_if - self.values[self.drm_if]), initial=0.0))
        self.values[self.drm_if] = new_if
        self.values[self.drm_nl] = v_nl[n_fem:]
        sol = self.drm.solve_linear(self.values)
        self.drm_u, self.drm_q = sol.u, sol.q
        new_cut = self._eval(self.E_cut)
        change_cut = float(np.max(np.abs(new_cut - self.cut), initial=0.0))
        self.cut = new_cut
        return max(change_if, change_cut)

    def nodal(self):
        u = np.empty(self.mesh.n_nodes)
        u[self.core_nodes] = self.patch.u[self.core_sub]
        u[self.outer_nodes] = self._eval(self.E_outer)
        return u

    def disagreement(self):
        """Max |FEM - DRM| on the patch cut nodes after the last sweep."""
        return float(np.max(np.abs(self.patch.u[self.patch.cut_nodes] - self._eval(self.E_cut)), initial=0.0))


# -- driver ----------------------------------------------------------------------------


def auto_partition(problem, mesh, config: HybridConfig) -> RegionPartition:
    """Partition from ``fem_box``, or from ``fem_threshold`` on a preliminary DRM solve."""
    if config.fem_box is not None:
        return partition_domain(mesh, box=config.fem_box)
    if config.fem_threshold is not None:
        boundary = BoundaryDiscretization.from_mesh(mesh, subdivide=config.bem_subdivide)
        pre = drm_solve(problem, boundary, default_internal_points(boundary, config.internal_grid))
        eta = compute_indicators(pre.evaluate(mesh.points), mesh)
        return partition_domain(mesh, threshold=config.fem_threshold, indicators=eta)
    if problem.laplace_type:
        return RegionPartition(mesh, np.zeros(0, dtype=np.int64), np.arange(mesh.n_elements))
    return RegionPartition(mesh, np.arange(mesh.n_elements), np.zeros(0, dtype=np.int64))


def hybrid_solve(problem, mesh, partition: RegionPartition | None = None, config: HybridConfig | None = None,
                 newton_config: NewtonConfig | None = None, callback=None) -> HybridSolution:
    """Solve ``problem`` on ``mesh`` with the hybrid method.

    ``callback(sweep, u_nodal)`` is called after every coupling sweep with
    the current nodal field on ``mesh``.
    """
    config = config or problem.hybrid
    newton_config = newton_config or problem.newton
    partition = partition or auto_partition(problem, mesh, config)

    if partition.is_all_fem:
        system = FemNonlinearSystem(mesh, problem)
        u, trace = newton_krylov_solve(system.initial_guess(), system, newton_config)
        if callback:
            callback(len(trace) - 1, u)
        return HybridSolution(u, "fem", trace.converged, {"fem": trace[-1].residual_norm}, 0,
                              newton_residuals=list(trace.residual_norms), stop_reason=trace.reason,
                              fem_mesh=mesh, fem_u=u, newton_trace=trace)

    if not problem.laplace_type:
        raise UnsupportedError("the boundary-element region needs an identity principal part and no lower-order terms")
    drm_boundary = BoundaryDiscretization.from_mesh(mesh, partition.drm_elements, config.bem_subdivide, INTERFACE)
    internal = default_internal_points(drm_boundary, config.internal_grid)

    if partition.is_empty_fem:
        sol = drm_solve(problem, drm_boundary, internal, config=replace(newton_config, linear_solver="direct"))
        u = sol.evaluate(mesh.points)
        if callback:
            callback(0 if sol.newton_trace is None else len(sol.newton_trace) - 1, u)
        trace = sol.newton_trace
        return HybridSolution(u, "drm", True if trace is None else trace.converged,
                              {"drm": float(np.linalg.norm(sol.system.H @ sol.u - sol.system.G @ sol.q
                                                           - sol.system.S @ sol.alpha))},
                              0, newton_residuals=[] if trace is None else list(trace.residual_norms),
                              drm=sol, newton_trace=trace)

    patch_ids = grow(mesh, partition.fem_elements, config.overlap)
    sub, _ = submesh(mesh, patch_ids, INTERFACE)
    solver = DrmSolver(problem, drm_boundary, internal)
    kinds, values = _element_data(problem, drm_boundary, {INTERFACE: ("dirichlet", 0.0)})
    kinds = np.where(kinds == "nonlinear", "dirichlet", kinds).astype(object)
    solver.set_kinds(kinds)

    state = _Coupled(problem, mesh, sub, config, solver, kinds, values)
    result = HybridSolution(None, "hdrm", False)
    sweeps = [0]

    def run(state, v_nl):
        history = []
        while True:
            change = state.sweep(v_nl)
            history.append(change)
            result.trace_change.append(change)
            sweeps[0] += 1
            if callback:
                callback(sweeps[0], state.nodal())
            if change < config.coupling_tol:
                return True, "coupled"
            if len(history) > 5 and history[-1] >= history[-6]:
                return False, "stagnation"
            if len(history) >= config.max_sweeps:
                return False, "max_sweeps"

    def newton(state, v_nl):
        xy, mk = state.nonlinear_points()
        ops = {m: problem.nonlinear_bc(m) for m in set(mk)}
        h = np.array([ops[m].h(np.array([x]), np.array([y]))[0] for (x, y), m in zip(xy, mk)])
        for it in range(newton_config.max_iter + 1):
            ok, reason = run(state, v_nl)
            R = np.array([ops[m].B(v) for v, m in zip(v_nl, mk)]) - h
            result.newton_residuals.append(float(np.linalg.norm(R)))
            if not ok:
                return v_nl, False, reason
            if result.newton_residuals[-1] <= newton_config.tol_residual:
                return v_nl, True, "residual"
            if it == newton_config.max_iter:
                return v_nl, False, "max_iter"
            d = np.array([ops[m].dB_du(v) for v, m in zip(v_nl, mk)])
            step = -newton_config.damping * R / d
            v_nl = v_nl + step
            if np.linalg.norm(step) < newton_config.tol_step:
                ok, reason = run(state, v_nl)
                return v_nl, ok, "step" if ok else reason
        return v_nl, False, "max_iter"

    xy, _ = state.nonlinear_points()
    original = np.array([problem.bcs[m].kind == "dirichlet" if m in problem.bcs else False
                         for m in drm_boundary.markers])
    v_nl = np.full(len(xy), float(np.mean(values[original])) if original.any() else 1.0)
    v_nl, ok, reason = newton(state, v_nl)

    for gen in range(config.adapt_generations):
        if not ok:
            break
        eta = compute_indicators(state.patch.u, state.patch.mesh)
        k = max(1, int(np.ceil(config.adapt_fraction * len(eta))))
        marked = set(np.argsort(-eta, kind="stable")[:k].tolist())
        new_sub = refine_elements(state.patch.mesh, marked)
        old = state
        state = _Coupled(problem, mesh, new_sub, config, solver, kinds, old.values)
        state.drm_u, state.drm_q = old.drm_u, old.drm_q
        state.cut = state._eval(state.E_cut)
        state.patch.u = interpolate_to_new_mesh(old.patch.u, old.patch.mesh, new_sub)
        xy_new, mk_new = state.nonlinear_points()
        v_new = np.empty(len(xy_new))
        n_fem = len(state.patch.nl_nodes)
        v_new[:n_fem] = evaluate_p1(old.patch.u, old.patch.mesh, xy_new[:n_fem])
        v_new[n_fem:] = v_nl[len(old.patch.nl_nodes):]
        v_nl, ok, reason = newton(state, v_new)

    result.u = state.nodal()
    result.converged = ok
    result.stop_reason = reason
    result.sweeps = sweeps[0]
    result.interface_disagreement = state.disagreement()
    result.residual_norms = {"fem": state.patch.residual_norm(),
                             "drm": float(np.linalg.norm(solver.system.H @ state.drm_u - solver.system.G @ state.drm_q
                                                         - solver.rhs)),
                             "newton": result.newton_residuals[-1] if result.newton_residuals else 0.0}
    result.fem_mesh = state.patch.mesh
    result.fem_u = state.patch.u
    return result
