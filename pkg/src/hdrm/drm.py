"""Dual reciprocity boundary elements for ``-lap u = f``.

Constant straight elements with midpoint collocation.  With the Laplace
fundamental solution ``u* = -ln(r) / (2 pi)`` and ``q* = du*/dn``, the
boundary integral equation reads, at a point ``p``,

    c(p) u(p) + sum_k H_pk u_k - sum_k G_pk q_k = sum_j alpha_j (c(p) uh_j(p) + sum_k H_pk uh_kj - sum_k G_pk qh_kj)

where ``lap u = b = -f`` is expanded as ``b = sum_j alpha_j (1 + r_j)`` and
``uh_j = r^2/4 + r^3/9``, ``qh_j = d uh_j / dn`` are the particular
solutions of the radial basis.  The element integrals of ``q*`` and ``u*``
over a straight segment have closed forms, so ``H`` and ``G`` are
evaluated analytically (the subtended angle and the log-kernel primitive).
Boundary rows have ``c`` folded into the diagonal of ``H`` via the
constant-field condition (rows of ``H`` sum to zero).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .config import NewtonConfig
from .errors import (ConfigError, DegenerateCentersError, GeometryError, NonUniqueError,
                     NumericError, UnsupportedError)
from .newton import newton_krylov_solve

TWO_PI = 2.0 * np.pi


def fundamental_solution(x, xi) -> float:
    """Free-space Green's function of the 2D Laplacian, ``-ln|x - xi| / (2 pi)``."""
    r = float(np.hypot(*(np.asarray(x, dtype=float) - np.asarray(xi, dtype=float))))
    if r == 0.0:
        raise NumericError("fundamental solution is singular at x = xi", point=tuple(np.asarray(x, dtype=float)))
    return -np.log(r) / TWO_PI


# -- boundary discretisation ------------------------------------------------------


@dataclass(frozen=True)
class BoundaryDiscretization:
    """Straight constant elements with the domain on their left.

    Outer boundaries therefore run counter-clockwise and holes clockwise.
    """

    starts: np.ndarray
    ends: np.ndarray
    markers: tuple

    def __post_init__(self):
        s = np.array(self.starts, dtype=float).reshape(-1, 2)
        e = np.array(self.ends, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "starts", s)
        object.__setattr__(self, "ends", e)
        object.__setattr__(self, "markers", tuple(self.markers))
        if len(s) < 3:
            raise GeometryError("a boundary discretisation needs at least three elements")
        if len(e) != len(s) or len(self.markers) != len(s):
            raise GeometryError("starts, ends and markers must have equal length")
        if np.any(self.lengths <= 0):
            raise GeometryError("zero-length boundary element")
        mid = np.round(self.midpoints, 12)
        if len(np.unique(mid, axis=0)) != len(mid):
            raise GeometryError("coincident collocation points")

    @property
    def n(self) -> int:
        return len(self.starts)

    @property
    def lengths(self) -> np.ndarray:
        return np.hypot(*(self.ends - self.starts).T)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.starts + self.ends)

    @property
    def normals(self) -> np.ndarray:
        t = (self.ends - self.starts) / self.lengths[:, None]
        return np.column_stack([t[:, 1], -t[:, 0]])

    def perimeter(self) -> float:
        return float(self.lengths.sum())

    def subdivide(self, k: int) -> "BoundaryDiscretization":
        if k == 1:
            return self
        f = np.arange(k + 1) / k
        pts = self.starts[:, None] + f[None, :, None] * (self.ends - self.starts)[:, None]
        return BoundaryDiscretization(pts[:, :-1].reshape(-1, 2), pts[:, 1:].reshape(-1, 2),
                                      [m for m in self.markers for _ in range(k)])

    @classmethod
    def from_polygon(cls, vertices, markers, per_edge: int = 1):
        """Closed polygon; ``markers[i]`` labels the side ``vertices[i] -> vertices[i+1]``."""
        v = np.asarray(vertices, dtype=float)
        if len(markers) != len(v):
            raise GeometryError("one marker per polygon side is required")
        return cls(v, np.roll(v, -1, axis=0), markers).subdivide(per_edge)

    @classmethod
    def from_rectangle(cls, corners=(0.0, 0.0, 1.0, 1.0), n_elements: int = 32):
        """Rectangle with ``n_elements`` (a multiple of 4) equal-count sides."""
        if n_elements < 4 or n_elements % 4:
            raise GeometryError("n_elements must be a positive multiple of 4")
        x0, y0, x1, y1 = corners
        if not (x1 > x0 and y1 > y0):
            raise GeometryError(f"degenerate rectangle {corners}")
        verts = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        return cls.from_polygon(verts, ["bottom", "right", "top", "left"], n_elements // 4)

    @classmethod
    def from_mesh(cls, mesh, element_ids=None, subdivide: int = 1, interface_marker: str = "interface"):
        """Boundary of a set of mesh elements (all elements by default).

        Edges on the mesh boundary keep their markers; edges between the set
        and the rest of the mesh are labelled ``interface_marker``.
        """
        tris = mesh.triangles if element_ids is None else mesh.triangles[np.sort(np.asarray(list(element_ids), dtype=int))]
        if len(tris) == 0:
            raise GeometryError("empty element set")
        directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        seen = {(a, b) for a, b in directed.tolist()}
        marker_of = {}
        for (a, b), mk in zip(mesh.edges.tolist(), mesh.edge_markers):
            marker_of[(a, b)] = marker_of[(b, a)] = mk
        edges = [(a, b) for a, b in directed.tolist() if (b, a) not in seen]
        edges.sort(key=lambda e: (marker_of.get(e, interface_marker), e))
        starts = mesh.points[[a for a, _ in edges]]
        ends = mesh.points[[b for _, b in edges]]
        markers = [marker_of.get(e, interface_marker) for e in edges]
        return cls(starts, ends, markers).subdivide(subdivide)


# -- influence coefficients --------------------------------------------------------


def influence(points, boundary: BoundaryDiscretization):
    """Off-diagonal form of ``H`` and ``G`` for collocation ``points`` (m, 2).

    ``H_pk = int_k q* ds = -theta / (2 pi)`` with ``theta`` the signed angle
    that element ``k`` subtends at ``p`` (zero when ``p`` lies on the element),
    and ``G_pk = int_k u* ds`` from the primitive of ``ln(s^2 + d^2)``.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    a = boundary.starts[None, :, :] - p[:, None, :]
    b = boundary.ends[None, :, :] - p[:, None, :]
    L = boundary.lengths
    t = (boundary.ends - boundary.starts) / L[:, None]
    n = boundary.normals
    cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    dot = np.einsum("mkd,mkd->mk", a, b)
    scale = np.hypot(a[..., 0], a[..., 1]) * np.hypot(b[..., 0], b[..., 1])
    on_line = np.abs(cross) <= 1e-13 * np.maximum(scale, 1e-300)
    theta = np.where(on_line, 0.0, np.arctan2(cross, dot))
    H = -theta / TWO_PI

    sa = np.einsum("mkd,kd->mk", a, t)
    sb = sa + L[None, :]
    d = np.einsum("mkd,kd->mk", a, n)
    d = np.where(on_line, 0.0, d)
    G = -(_log_primitive(sb, d) - _log_primitive(sa, d)) / TWO_PI
    return H, G


def trace_operator(points, boundary: BoundaryDiscretization, tol: float = 1e-10):
    """Reconstruct values at points lying on the boundary from element values.

    Returns ``(on, W)``: ``on`` flags the points on the boundary and the rows
    of ``W`` (one per flagged point) give ``u(p) = W @ u_elements``.  The
    value is interpolated linearly between the midpoints of collinear
    neighbouring elements and extrapolated from the same side at corners, so
    data that are linear along each side are reproduced exactly.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    n = boundary.n
    d = boundary.ends - boundary.starts
    L = boundary.lengths
    t = np.einsum("mkd,kd->mk", p[:, None, :] - boundary.starts[None], d) / (L * L)
    foot = boundary.starts[None] + np.clip(t, 0.0, 1.0)[..., None] * d[None]
    dist = np.hypot(*(p[:, None, :] - foot).transpose(2, 0, 1))
    scale = tol * max(1.0, float(np.abs(boundary.starts).max()))
    on = dist.min(axis=1, initial=np.inf) <= scale if n else np.zeros(len(p), dtype=bool)

    key = lambda q: (round(float(q[0]), 9), round(float(q[1]), 9))
    starts = {key(s): k for k, s in enumerate(boundary.starts)}
    ends = {key(e): k for k, e in enumerate(boundary.ends)}
    nxt = [starts.get(key(e), -1) for e in boundary.ends]
    prv = [ends.get(key(s), -1) for s in boundary.starts]
    tang = d / L[:, None]
    mid = boundary.midpoints

    def collinear(a, b):
        return b >= 0 and abs(tang[a, 0] * tang[b, 1] - tang[a, 1] * tang[b, 0]) < 1e-9 and tang[a] @ tang[b] > 0

    W = np.zeros((int(on.sum()), n))
    for row, i in enumerate(np.flatnonzero(on)):
        k = int(np.argmin(dist[i]))
        ahead = t[i, k] >= 0.5
        j = nxt[k] if ahead else prv[k]
        s = float(np.hypot(*(p[i] - mid[k])))
        if not collinear(k, j):
            j = prv[k] if ahead else nxt[k]
            s = -s          # extrapolate away from the neighbour on the other side
            if not collinear(k, j):
                W[row, k] = 1.0
                continue
        w = s / float(np.hypot(*(mid[j] - mid[k])))
        W[row, k] += 1.0 - w
        W[row, j] += w
    return on, W


def _log_primitive(s, d):
    """Primitive in ``s`` of ``0.5 * ln(s^2 + d^2)``."""
    r2 = s * s + d * d
    with np.errstate(divide="ignore", invalid="ignore"):
        slog = np.where(s == 0.0, 0.0, 0.5 * s * np.log(np.where(r2 > 0, r2, 1.0)))
        at = np.where(d == 0.0, 0.0, d * np.arctan(s / np.where(d == 0.0, 1.0, d)))
    return slog - s + at


def particular_solutions(points, normals, centers):
    """``uh`` (m, M) and, if ``normals`` is given, ``qh`` (m, M) for basis ``1 + r``."""
    rv = np.asarray(points, dtype=float)[:, None, :] - np.asarray(centers, dtype=float)[None, :, :]
    r = np.hypot(rv[..., 0], rv[..., 1])
    uh = r * r / 4.0 + r ** 3 / 9.0
    if normals is None:
        return uh, None
    qh = (0.5 + r / 3.0) * np.einsum("mjd,md->mj", rv, np.asarray(normals, dtype=float))
    return uh, qh


def rbf_matrix(centers) -> np.ndarray:
    c = np.asarray(centers, dtype=float).reshape(-1, 2)
    return 1.0 + np.hypot(*(c[:, None, :] - c[None, :, :]).transpose(2, 0, 1))


def rbf_expand(f, centers) -> np.ndarray:
    """Coefficients ``alpha`` with ``sum_j alpha_j (1 + |x_i - c_j|) = f(c_i)``.

    ``f`` is a callable ``f(x, y)`` or the array of values at the centres.
    """
    c = np.asarray(centers, dtype=float).reshape(-1, 2)
    if len(np.unique(np.round(c, 14), axis=0)) != len(c):
        raise DegenerateCentersError("RBF centres must be pairwise distinct")
    vals = f(c[:, 0], c[:, 1]) if callable(f) else f
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (len(c),))
    F = rbf_matrix(c)
    try:
        lu = sla.lu_factor(F, check_finite=True)
    except (ValueError, sla.LinAlgError) as exc:
        raise DegenerateCentersError(str(exc)) from exc
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.abs(F).max():
        raise DegenerateCentersError("RBF interpolation matrix is singular")
    return sla.lu_solve(lu, vals)


def default_internal_points(boundary: BoundaryDiscretization, grid: int = 6) -> np.ndarray:
    """Tensor ``grid x grid`` points in the bounding box that lie inside the region."""
    if grid <= 0:
        return np.zeros((0, 2))
    lo = np.minimum(boundary.starts.min(axis=0), boundary.ends.min(axis=0))
    hi = np.maximum(boundary.starts.max(axis=0), boundary.ends.max(axis=0))
    f = (np.arange(grid) + 0.5) / grid
    X, Y = np.meshgrid(lo[0] + f * (hi[0] - lo[0]), lo[1] + f * (hi[1] - lo[1]))
    pts = np.column_stack([X.ravel(), Y.ravel()])
    H, _ = influence(pts, boundary)
    inside = -H.sum(axis=1) > 1.0 - 1e-8
    return pts[inside]


@dataclass(frozen=True)
class DrmSystem:
    """Boundary influence matrices and the dual-reciprocity right-hand side operator.

    ``S = H Uh - G Qh`` maps RBF coefficients to the boundary right-hand side.
    """

    boundary: BoundaryDiscretization
    H: np.ndarray
    G: np.ndarray
    F_rbf: np.ndarray
    internal_points: np.ndarray
    centers: np.ndarray
    Uh: np.ndarray
    Qh: np.ndarray
    S: np.ndarray


def assemble_hg(boundary: BoundaryDiscretization, internal_points=None) -> DrmSystem:
    """Collocate at element midpoints; internal points become extra RBF centres."""
    mid = boundary.midpoints
    H, G = influence(mid, boundary)
    idx = np.arange(boundary.n)
    H[idx, idx] = 0.0
    H[idx, idx] = -H.sum(axis=1)
    internal = np.zeros((0, 2)) if internal_points is None else np.asarray(internal_points, dtype=float).reshape(-1, 2)
    centers = np.vstack([mid, internal])
    Uh, Qh = particular_solutions(mid, boundary.normals, centers)
    S = H @ Uh - G @ Qh
    return DrmSystem(boundary, H, G, rbf_matrix(centers), internal, centers, Uh, Qh, S)


# -- solve ------------------------------------------------------------------------


@dataclass
class DrmSolution:
    """Boundary values, fluxes and RBF coefficients of a DRM solve."""

    system: DrmSystem
    u: np.ndarray          # per boundary element
    q: np.ndarray
    alpha: np.ndarray
    u_internal: np.ndarray = field(default_factory=lambda: np.zeros(0))
    newton_trace: object = None

    def evaluate(self, points) -> np.ndarray:
        """u at arbitrary points in the closed region.

        Points on the boundary take the reconstructed trace (see
        :func:`trace_operator`); interior points use the integral identity.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            return np.zeros(0)
        sysm = self.system
        on, W = trace_operator(pts, sysm.boundary)
        out = np.empty(len(pts))
        out[on] = W @ self.u
        inner = pts[~on]
        H, G = influence(inner, sysm.boundary)
        c = -H.sum(axis=1)
        if np.any(c < 1e-8):
            i = int(np.argmin(c))
            raise GeometryError(f"point {tuple(inner[i])} lies outside the boundary-element region")
        uh, _ = particular_solutions(inner, None, sysm.centers)
        rhs = -H @ self.u + G @ self.q + (c[:, None] * uh + H @ sysm.Uh - G @ sysm.Qh) @ self.alpha
        out[~on] = rhs / c
        return out


def _element_data(problem, boundary, overrides=None):
    """Per-element condition kind and data.

    ``overrides`` maps a marker to ``(kind, values)`` with one value per
    element carrying that marker, in boundary order.
    """
    overrides = overrides or {}
    mid, nrm = boundary.midpoints, boundary.normals
    markers = np.array(boundary.markers, dtype=object)
    kinds = np.empty(boundary.n, dtype=object)
    vals = np.zeros(boundary.n)
    for mk in dict.fromkeys(boundary.markers):
        sel = markers == mk
        if mk in overrides:
            kind, v = overrides[mk]
            kinds[sel] = kind
            vals[sel] = np.broadcast_to(np.asarray(v, dtype=float), (int(sel.sum()),))
            continue
        if mk not in problem.bcs:
            raise ConfigError(f"no boundary condition for segment {mk!r}")
        kinds[sel] = problem.bcs[mk].kind
        vals[sel] = problem.bc_value(mk, mid[sel, 0], mid[sel, 1], nrm[sel, 0], nrm[sel, 1])
    return kinds, vals


class DrmSolver:
    """A DRM discretisation with a fixed pattern of condition kinds.

    The reduced matrix is factorised once so repeated solves with new
    boundary data (Schwarz sweeps, Newton steps) are cheap.
    """

    def __init__(self, problem, boundary: BoundaryDiscretization, internal_points=None,
                 system: DrmSystem | None = None, kinds=None):
        if not problem.laplace_type:
            raise UnsupportedError("dual reciprocity needs an identity principal part and no lower-order terms")
        self.problem = problem
        self.system = system or assemble_hg(boundary, internal_points)
        self.boundary = self.system.boundary
        self.alpha = rbf_expand(lambda x, y: -problem.f(x, y), self.system.centers)
        self.rhs = self.system.S @ self.alpha
        self._lu = None
        self.kinds = None
        if kinds is not None:
            self.set_kinds(kinds)

    def set_kinds(self, kinds):
        kinds = np.asarray(kinds, dtype=object)
        if np.all(kinds == "neumann"):
            raise NonUniqueError("all-Neumann data determine u only up to a constant")
        if self.kinds is not None and np.array_equal(kinds, self.kinds):
            return
        self.kinds = kinds
        self._qcols = kinds != "neumann"     # unknown q where u is prescribed
        A = np.where(self._qcols[None, :], -self.system.G, self.system.H)
        self._lu = sla.lu_factor(A)

    def solve_linear(self, values) -> DrmSolution:
        """Solve with the current kinds; ``values`` are u (or q for Neumann) per element."""
        values = np.asarray(values, dtype=float)
        known_u = np.where(self._qcols, values, 0.0)
        known_q = np.where(self._qcols, 0.0, values)
        b = self.rhs - self.system.H @ known_u + self.system.G @ known_q
        x = sla.lu_solve(self._lu, b)
        u = np.where(self._qcols, values, x)
        q = np.where(self._qcols, x, values)
        return self._finish(u, q)

    def _finish(self, u, q, trace=None) -> DrmSolution:
        sol = DrmSolution(self.system, u, q, self.alpha, newton_trace=trace)
        if len(self.system.internal_points):
            sol.u_internal = sol.evaluate(self.system.internal_points)
        return sol

    def evaluation_operator(self, points):
        """``(Eu, Eq, e0)`` with ``u(points) = Eu @ u + Eq @ q + e0`` for this source."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        s = self.system
        n = s.boundary.n
        on, W = trace_operator(pts, s.boundary)
        Eu, Eq, e0 = np.zeros((len(pts), n)), np.zeros((len(pts), n)), np.zeros(len(pts))
        Eu[on] = W
        inner = pts[~on]
        H, G = influence(inner, s.boundary)
        c = -H.sum(axis=1)
        if np.any(c < 1e-8):
            i = int(np.argmin(c))
            raise GeometryError(f"point {tuple(inner[i])} lies outside the boundary-element region")
        uh, _ = particular_solutions(inner, None, s.centers)
        e0[~on] = ((c[:, None] * uh + H @ s.Uh - G @ s.Qh) @ self.alpha) / c
        Eu[~on] = -H / c[:, None]
        Eq[~on] = G / c[:, None]
        return Eu, Eq, e0

    def nonlinear_system(self, kinds, values, nl_ops):
        return DrmNonlinearSystem(self, kinds, values, nl_ops)

    def solve(self, kinds, values, nl_ops=None, config: NewtonConfig | None = None, u0=None) -> DrmSolution:
        """Solve with per-element kinds; nonlinear elements go through Newton."""
        kinds = np.asarray(kinds, dtype=object)
        if not np.any(kinds == "nonlinear"):
            self.set_kinds(kinds)
            return self.solve_linear(values)
        nsys = DrmNonlinearSystem(self, kinds, values, nl_ops)
        config = config or NewtonConfig(linear_solver="direct")
        x0 = nsys.initial_guess() if u0 is None else u0
        x, trace = newton_krylov_solve(x0, nsys, config)
        n = self.boundary.n
        return self._finish(x[:n], x[n:], trace)


class DrmNonlinearSystem:
    """Unknowns ``[u, q]`` per element; rows ``H u - G q - d`` then one condition row per element."""

    def __init__(self, solver: DrmSolver, kinds, values, nl_ops):
        self.solver = solver
        self.kinds = np.asarray(kinds, dtype=object)
        self.values = np.asarray(values, dtype=float)
        self.nl = np.flatnonzero(self.kinds == "nonlinear")
        self.nl_ops = [nl_ops[m] for m in np.array(solver.boundary.markers, dtype=object)[self.nl]]
        self.is_q = self.kinds == "neumann"

    def residual(self, x):
        n = self.solver.boundary.n
        u, q = x[:n], x[n:]
        s = self.solver.system
        bie = s.H @ u - s.G @ q - self.solver.rhs
        bc = np.where(self.is_q, q, u) - self.values
        for k, op in zip(self.nl, self.nl_ops):
            bc[k] = op.B(u[k]) - self.values[k]
        return np.concatenate([bie, bc])

    def jacobian(self, x):
        n = self.solver.boundary.n
        s = self.solver.system
        du = np.where(self.is_q, 0.0, 1.0)
        for k, op in zip(self.nl, self.nl_ops):
            du[k] = op.dB_du(x[k])
        return np.block([[s.H, -s.G], [np.diag(du), np.diag(self.is_q.astype(float))]])

    def step_norm(self, dx):
        return float(np.linalg.norm(dx))

    def initial_guess(self):
        n = self.solver.boundary.n
        fixed = (self.kinds == "dirichlet")
        start = float(np.mean(self.values[fixed])) if fixed.any() else 1.0
        u = np.where(fixed, self.values, start)
        return np.concatenate([u, np.zeros(n)])


def drm_solve(problem, boundary: BoundaryDiscretization, internal_points=None,
              config: NewtonConfig | None = None, overrides=None) -> DrmSolution:
    """Solve ``problem`` on the region bounded by ``boundary``.

    ``internal_points=None`` uses :func:`default_internal_points` with the
    problem's hybrid ``internal_grid``.  Nonlinear conditions are handled by
    Newton iteration on the coupled ``[u, q]`` system.
    """
    if internal_points is None:
        internal_points = default_internal_points(boundary, problem.hybrid.internal_grid)
    solver = DrmSolver(problem, boundary, internal_points)
    kinds, values = _element_data(problem, boundary, overrides)
    nl_ops = {mk: problem.nonlinear_bc(mk) for mk in set(boundary.markers)
              if mk in problem.bcs and problem.bcs[mk].kind == "nonlinear" and mk not in (overrides or {})}
    return solver.solve(kinds, values, nl_ops, config)
