"""Gradient-driven adaptive refinement around the Newton solver.

Each generation solves on the current mesh, computes the element indicator
``eta_K = |grad u_h|_K``, marks elements, refines them (red with closure) and
interpolates the iterate onto the new mesh as the next warm start.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .config import NewtonConfig, RefinementConfig
from .errors import DimensionError, GeometryError
from .mesh import element_gradients, refine_elements
from .newton import FemNonlinearSystem, newton_krylov_solve
from .quadrature import composite_rule, triangle_rule

log = logging.getLogger(__name__)

ERROR_RULE = composite_rule(triangle_rule(4), 1)


def error_function(u_h, exact, mesh, rule=None) -> float:
    """L2 norm of ``exact - u_h`` with ``u_h`` the P1 interpolant of the nodal values.

    The default rule is the degree-4 rule on the four red children of each element.
    """
    u_h = np.asarray(u_h, dtype=float)
    if u_h.shape != (mesh.n_nodes,):
        raise DimensionError(f"expected {mesh.n_nodes} nodal values, got {u_h.shape}")
    rule = rule or ERROR_RULE
    p = mesh.points[mesh.triangles]
    lam = np.column_stack([1.0 - rule.points.sum(axis=1), rule.points])
    xy = np.einsum("qi,kid->kqd", lam, p)
    uh_q = np.einsum("qi,ki->kq", lam, u_h[mesh.triangles])
    diff = exact(xy[..., 0], xy[..., 1]) - uh_q
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    detj = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    return float(np.sqrt(np.sum((diff * diff) @ rule.weights * detj)))


def compute_indicators(u_h, mesh) -> np.ndarray:
    """Per-element gradient magnitude of the P1 field."""
    return np.hypot(*element_gradients(mesh, u_h).T)


def mark(indicators, config: RefinementConfig) -> set:
    """Threshold marking ``eta > epsilon``, or the top ``marking_fraction`` of positive indicators."""
    eta = np.asarray(indicators, dtype=float)
    if config.marking_fraction is None:
        return set(np.flatnonzero(eta > config.epsilon).tolist())
    positive = np.flatnonzero(eta > 0)
    if len(positive) == 0:
        return set()
    k = max(1, int(np.ceil(config.marking_fraction * len(eta))))
    order = positive[np.argsort(-eta[positive], kind="stable")]
    return set(order[:k].tolist())


def locate_points(mesh, points, tol: float = 1e-12):
    """Containing element and barycentric coordinates for each point.

    Raises :class:`GeometryError` for points outside the mesh.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    tri = mesh.points[mesh.triangles]
    d1, d2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    owner = np.full(len(pts), -1)
    bary = np.zeros((len(pts), 3))

    def try_elements(pi, cand):
        r = pts[pi, None, :] - tri[cand, 0]
        l1 = (r[..., 0] * d2[cand, 1] - r[..., 1] * d2[cand, 0]) / det[cand]
        l2 = (d1[cand, 0] * r[..., 1] - d1[cand, 1] * r[..., 0]) / det[cand]
        lam = np.stack([1.0 - l1 - l2, l1, l2], axis=-1)
        worst = lam.min(axis=-1)
        best = np.argmax(worst, axis=1)
        ok = worst[np.arange(len(pi)), best] >= -tol
        owner[pi[ok]] = cand[ok, best[ok]]
        bary[pi[ok]] = lam[np.arange(len(pi)), best][ok]

    k = min(12, mesh.n_elements)
    _, near = cKDTree(mesh.centroids()).query(pts, k=k)
    near = np.asarray(near).reshape(len(pts), k)
    try_elements(np.arange(len(pts)), near)
    rest = np.flatnonzero(owner < 0)
    for start in range(0, len(rest), 256):
        pi = rest[start:start + 256]
        try_elements(pi, np.broadcast_to(np.arange(mesh.n_elements), (len(pi), mesh.n_elements)))
    if np.any(owner < 0):
        i = int(np.flatnonzero(owner < 0)[0])
        raise GeometryError(f"point {tuple(pts[i])} lies outside the mesh")
    return owner, bary


def evaluate_p1(u_h, mesh, points) -> np.ndarray:
    owner, bary = locate_points(mesh, points)
    return np.einsum("pi,pi->p", bary, np.asarray(u_h, dtype=float)[mesh.triangles[owner]])


def interpolate_to_new_mesh(u_h, old_mesh, new_mesh) -> np.ndarray:
    """Evaluate the old P1 interpolant at the new nodes; shared nodes copy values exactly."""
    u_h = np.asarray(u_h, dtype=float)
    if u_h.shape != (old_mesh.n_nodes,):
        raise DimensionError(f"expected {old_mesh.n_nodes} nodal values, got {u_h.shape}")
    dist, idx = cKDTree(old_mesh.points).query(new_mesh.points)
    out = np.empty(new_mesh.n_nodes)
    same = dist == 0.0
    out[same] = u_h[idx[same]]
    if not same.all():
        out[~same] = evaluate_p1(u_h, old_mesh, new_mesh.points[~same])
    return out


@dataclass
class GenerationRecord:
    generation: int
    elements: int
    nodes: int
    marked: int
    l2_error: float | None
    newton_iters: int
    newton_converged: bool
    max_indicator: float


@dataclass
class AdaptReport:
    """Per-generation history.  ``mode`` is ``verification`` when errors use the exact solution."""

    mode: str
    generations: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def errors(self):
        return [g.l2_error for g in self.generations]

    @property
    def nodes(self):
        return [g.nodes for g in self.generations]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["generation", "elements", "nodes", "marked", "L2_error", "newton_iters"])
            for g in self.generations:
                err = "NA" if g.l2_error is None else repr(g.l2_error)
                w.writerow([g.generation, g.elements, g.nodes, g.marked, err, g.newton_iters])


def _warm_start(system, u):
    u = u.copy()
    u[system.dir_nodes] = system.dir_vals
    return u


def adaptive_solve(problem, initial_mesh, newton_config: NewtonConfig | None = None,
                   refine_config: RefinementConfig | None = None, verification: bool | None = None):
    """Solve, mark, refine and repeat.

    Stops when nothing is marked, when the L2 error drops below ``delta``
    (verification mode only), at ``max_generations`` or at ``max_nodes``.

    Returns
    -------
    u : ndarray
    mesh : Mesh
    report : AdaptReport
    """
    newton_config = newton_config or problem.newton
    refine_config = refine_config or problem.adapt
    if verification is None:
        verification = problem.exact is not None
    report = AdaptReport("verification" if verification else "production")
    mesh, u = initial_mesh, None
    gen = 0
    while True:
        system = FemNonlinearSystem(mesh, problem)
        start = system.initial_guess() if u is None else _warm_start(system, interpolate_to_new_mesh(u, prev, mesh))
        u, trace = newton_krylov_solve(start, system, newton_config)
        err = error_function(u, problem.exact, mesh) if verification else None
        eta = compute_indicators(u, mesh)
        marked = mark(eta, refine_config)
        report.generations.append(GenerationRecord(gen, mesh.n_elements, mesh.n_nodes, len(marked), err,
                                                   len(trace) - 1, trace.converged, float(eta.max(initial=0.0))))
        log.info("generation %d: %d nodes, %d marked, error %s", gen, mesh.n_nodes, len(marked), err)
        if err is not None and err < refine_config.delta:
            report.stop_reason = "error"
        elif not marked:
            report.stop_reason = "no_marks"
        elif gen >= refine_config.max_generations:
            report.stop_reason = "max_generations"
        elif mesh.n_nodes >= refine_config.max_nodes:
            report.stop_reason = "max_nodes"
        if report.stop_reason:
            return u, mesh, report
        prev, mesh = mesh, refine_elements(mesh, marked)
        gen += 1
