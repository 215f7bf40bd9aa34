"""Linear (P1) finite elements on triangles.

Element kernels are computed in batches over element ids; single-element
functions call the same kernels, so an assembled matrix is bit-for-bit the
scatter-sum of the per-element blocks.

Coefficients that depend on ``u`` are frozen at ``u_current``.  The reaction
term C(x, u) is moved to the right-hand side, ``F_i = int N_i (f - C)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import CoefficientError, ConstraintConflictError, DimensionError
from .linalg import csr_from_triplets, dense_solve
from .quadrature import QuadratureRule, _check_finite, gauss_legendre, triangle_rule

DEFAULT_RULE = triangle_rule(2)


class ShapeFunctions(NamedTuple):
    """Barycentric hat functions of one element."""

    vertices: np.ndarray    # (3, 2)
    gradients: np.ndarray   # (3, 2), constant on the element

    def __call__(self, x, y):
        """Values N_i(x, y), shape (..., 3)."""
        v = self.vertices
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n1 = self.gradients[1, 0] * (x - v[0, 0]) + self.gradients[1, 1] * (y - v[0, 1])
        n2 = self.gradients[2, 0] * (x - v[0, 0]) + self.gradients[2, 1] * (y - v[0, 1])
        return np.stack([1.0 - n1 - n2, n1, n2], axis=-1)


def shape_functions(mesh, element_id) -> ShapeFunctions:
    e = mesh.check_element(element_id)
    return ShapeFunctions(mesh.points[mesh.triangles[e]], mesh.shape_gradients()[e])


def _bary(rule):
    xi, eta = rule.points[:, 0], rule.points[:, 1]
    return np.column_stack([1.0 - xi - eta, xi, eta])  # (q, 3)


def _quad_points(mesh, ids, rule):
    """Physical points (k, q, 2) and |J| (k,) for the elements ``ids``."""
    p = mesh.points[mesh.triangles[ids]]
    lam = _bary(rule)
    xy = np.einsum("qi,kid->kqd", lam, p)
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    detj = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    return xy, detj


def _u_at_quad(mesh, ids, u, rule):
    if u is None:
        return np.zeros((len(ids), len(rule)))
    return np.einsum("qi,ki->kq", _bary(rule), np.asarray(u, dtype=float)[mesh.triangles[ids]])


def _check_spd(A, xy):
    sym = np.abs(A[..., 0, 1] - A[..., 1, 0]) <= 1e-12 * (np.abs(A[..., 0, 1]) + 1.0)
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    ok = sym & (A[..., 0, 0] > 0) & (det > 0)
    if not np.all(ok):
        i = np.unravel_index(np.flatnonzero(~ok.ravel())[0], ok.shape)
        raise CoefficientError(f"diffusion tensor is not SPD at {tuple(xy[i])}")


def stiffness_blocks(mesh, ids, diffusion=None, advection=None, u_current=None,
                     rule: QuadratureRule = DEFAULT_RULE) -> np.ndarray:
    """Element matrices int(grad N_i . A grad N_j + (b . grad N_j) N_i), shape (k, 3, 3)."""
    ids = np.asarray(ids, dtype=np.int64)
    G = mesh.shape_gradients()[ids]                       # (k, 3, 2)
    xy, detj = _quad_points(mesh, ids, rule)
    w = rule.weights[None, :] * detj[:, None]             # (k, q)
    if diffusion is None:
        K = np.einsum("kq,kid,kjd->kij", w, G, G)
    else:
        uq = _u_at_quad(mesh, ids, u_current, rule)
        A = np.asarray(diffusion.tensor(xy[..., 0], xy[..., 1], uq), dtype=float)
        _check_spd(A, xy)
        K = np.einsum("kq,kid,kqde,kje->kij", w, G, A, G)
    if advection is not None:
        uq = _u_at_quad(mesh, ids, u_current, rule)
        b = advection.vector(xy[..., 0], xy[..., 1], uq)  # (k, q, 2)
        K = K + np.einsum("kq,qi,kqd,kjd->kij", w, _bary(rule), b, G)
    return K


def element_stiffness(mesh, element_id, diffusion=None, advection=None, u_current=None,
                      rule: QuadratureRule = DEFAULT_RULE) -> np.ndarray:
    """3x3 stiffness block of one element (see :func:`stiffness_blocks`)."""
    e = mesh.check_element(element_id)
    return stiffness_blocks(mesh, [e], diffusion, advection, u_current, rule)[0]


def force_blocks(mesh, ids, f, reaction=None, u_current=None, rule: QuadratureRule = DEFAULT_RULE):
    """Element load vectors int N_i (f - C(x, u)), shape (k, 3)."""
    ids = np.asarray(ids, dtype=np.int64)
    xy, detj = _quad_points(mesh, ids, rule)
    vals = _check_finite(f(xy[..., 0], xy[..., 1]), xy[..., 0], xy[..., 1])
    vals = np.broadcast_to(vals, xy.shape[:2])
    if reaction is not None:
        uq = _u_at_quad(mesh, ids, u_current, rule)
        vals = vals - reaction.value(xy[..., 0], xy[..., 1], uq)
    w = rule.weights[None, :] * detj[:, None]
    return np.einsum("kq,qi->ki", w * vals, _bary(rule))


def element_force(mesh, element_id, f, rule: QuadratureRule = DEFAULT_RULE,
                  reaction=None, u_current=None) -> np.ndarray:
    e = mesh.check_element(element_id)
    return force_blocks(mesh, [e], f, reaction, u_current, rule)[0]


@dataclass(frozen=True)
class AssembledSystem:
    """Global stiffness ``K``, load ``F`` and the Dirichlet constraints applied so far."""

    mesh: object
    K: sp.csr_matrix
    F: np.ndarray
    dirichlet_map: dict = field(default_factory=dict)

    def solve(self, solver: str = "direct") -> np.ndarray:
        if solver == "dense":
            return dense_solve(self.K.toarray(), self.F)
        return np.asarray(spsolve(self.K.tocsc(), self.F), dtype=float)


def scatter(mesh, blocks, ids=None) -> sp.csr_matrix:
    """Scatter-add element blocks into a global CSR matrix in element order."""
    tris = mesh.triangles if ids is None else mesh.triangles[ids]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    return csr_from_triplets(rows, cols, np.asarray(blocks).ravel(), (mesh.n_nodes, mesh.n_nodes))


def scatter_vector(mesh, blocks, ids=None) -> np.ndarray:
    tris = mesh.triangles if ids is None else mesh.triangles[ids]
    return np.bincount(tris.ravel(), weights=np.asarray(blocks).ravel(), minlength=mesh.n_nodes)


def edge_integrals(mesh, edge, g, rule: QuadratureRule | None = None) -> np.ndarray:
    """(int g N_a, int g N_b) along edge a->b.  ``g(x, y, nx, ny)`` or ``g(x, y)``."""
    rule = rule or gauss_legendre(2)
    a, b = getattr(edge, "node_ids", edge)
    pa, pb = mesh.points[a], mesh.points[b]
    t = 0.5 * (rule.points + 1.0)
    xy = pa + t[:, None] * (pb - pa)
    length = float(np.hypot(*(pb - pa)))
    n = np.array([pb[1] - pa[1], pa[0] - pb[0]]) / length
    try:
        vals = g(xy[:, 0], xy[:, 1], np.full(len(t), n[0]), np.full(len(t), n[1]))
    except TypeError:
        vals = g(xy[:, 0], xy[:, 1])
    vals = _check_finite(np.broadcast_to(vals, t.shape), xy[:, 0], xy[:, 1])
    w = rule.weights * vals * 0.5 * length
    return np.array([np.dot(w, 1.0 - t), np.dot(w, t)])


def apply_neumann(system: AssembledSystem, edge, g, rule: QuadratureRule | None = None) -> AssembledSystem:
    """Add the natural boundary term int g N_i over one edge to ``F``."""
    a, b = getattr(edge, "node_ids", edge)
    F = system.F.copy()
    ga, gb = edge_integrals(system.mesh, (a, b), g, rule)
    F[a] += ga
    F[b] += gb
    return replace(system, F=F)


def apply_dirichlet(system: AssembledSystem, constraints) -> AssembledSystem:
    """Symmetric elimination of ``{node: value}`` constraints.

    Constrained rows and columns are zeroed with a unit diagonal and the load
    is corrected so the remaining equations are unchanged.
    """
    items = list(constraints.items()) if hasattr(constraints, "items") else list(constraints)
    merged = dict(system.dirichlet_map)
    new = {}
    for node, val in items:
        node, val = int(node), float(val)
        prev = new.get(node, merged.get(node))
        if prev is not None and prev != val:
            raise ConstraintConflictError(f"node {node} constrained to both {prev} and {val}")
        new[node] = val
    if not new:
        return system
    merged.update(new)
    n = system.K.shape[0]
    idx = np.array(sorted(new), dtype=np.int64)
    vals = np.array([new[i] for i in idx])
    if idx.min() < 0 or idx.max() >= n:
        raise DimensionError("constraint on a node outside the system")
    lift = np.zeros(n)
    lift[idx] = vals
    F = system.F - system.K @ lift
    keep = np.ones(n)
    keep[idx] = 0.0
    D = sp.diags(keep)
    K = (D @ system.K @ D + sp.diags(1.0 - keep)).tocsr()
    K.eliminate_zeros()
    F[idx] = vals
    return AssembledSystem(system.mesh, K, F, merged)


# -- boundary data on a mesh -------------------------------------------------------


def dirichlet_data(mesh, problem, markers=None) -> dict:
    """``{node: value}`` for nodes on Dirichlet segments (first edge wins at corners)."""
    out = {}
    for (a, b), mk in zip(mesh.edges.tolist(), mesh.edge_markers):
        bc = problem.bcs.get(mk)
        if bc is None or bc.kind != "dirichlet" or (markers is not None and mk not in markers):
            continue
        for node in (a, b):
            if node not in out:
                x, y = mesh.points[node]
                out[node] = float(problem.bc_value(mk, np.array([x]), np.array([y]))[0])
    return out


def nonlinear_nodes(mesh, problem, exclude=()) -> dict:
    """``{node: marker}`` for nodes on nonlinear segments that are not excluded."""
    out = {}
    skip = set(exclude)
    for (a, b), mk in zip(mesh.edges.tolist(), mesh.edge_markers):
        bc = problem.bcs.get(mk)
        if bc is None or bc.kind != "nonlinear":
            continue
        for node in (a, b):
            if node not in skip and node not in out:
                out[node] = mk
    return out


def neumann_vector(mesh, problem, rule: QuadratureRule | None = None) -> np.ndarray:
    F = np.zeros(mesh.n_nodes)
    for (a, b), mk in zip(mesh.edges.tolist(), mesh.edge_markers):
        bc = problem.bcs.get(mk)
        if bc is None or bc.kind != "neumann":
            continue
        ga, gb = edge_integrals(mesh, (a, b), lambda x, y, nx, ny, m=mk: problem.bc_value(m, x, y, nx, ny), rule)
        F[a] += ga
        F[b] += gb
    return F


def assemble(mesh, problem, u_current=None, apply_bcs: bool = True,
             rule: QuadratureRule = DEFAULT_RULE) -> AssembledSystem:
    """Assemble K and F for ``problem`` on ``mesh``.

    With ``apply_bcs`` Neumann loads are added and Dirichlet nodes eliminated.
    Nodes on nonlinear segments are left untouched; the Newton solver replaces
    their rows.
    """
    if u_current is not None and np.shape(u_current) != (mesh.n_nodes,):
        raise DimensionError(f"u_current must have {mesh.n_nodes} entries")
    ids = np.arange(mesh.n_elements)
    diffusion = problem.diffusion
    if diffusion is not None and diffusion.is_identity:
        diffusion = None
    K = scatter(mesh, stiffness_blocks(mesh, ids, diffusion, problem.advection, u_current, rule))
    F = scatter_vector(mesh, force_blocks(mesh, ids, problem.f, problem.reaction, u_current, rule))
    system = AssembledSystem(mesh, K, F)
    if apply_bcs:
        system = replace(system, F=system.F + neumann_vector(mesh, problem))
        system = apply_dirichlet(system, dirichlet_data(mesh, problem))
    return system


def solve_linear(mesh, problem, solver: str = "direct") -> np.ndarray:
    """Assemble and solve a problem without nonlinear terms."""
    return assemble(mesh, problem).solve(solver)
