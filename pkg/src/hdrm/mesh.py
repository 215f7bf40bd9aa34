"""Triangular meshes of 2D domains with red/green conforming refinement.

A :class:`Mesh` is an immutable bundle of numpy arrays.  Element and node
ids are simply row indices.  Refinement returns a new mesh; node ids of the
old mesh are preserved and new midpoint nodes are appended, which makes
transferring nodal fields between generations cheap.

Refinement follows the usual red-green strategy: marked triangles are split
into four similar children through their edge midpoints, and neighbours that
end up with hanging nodes are closed.  A neighbour with two or more split
edges is itself refined red; one with a single split edge is bisected
(green).  Green pairs are merged back into their parent before the next
refinement so that repeated closure never degrades element shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DimensionError, ElementNotFoundError, GeometryError

# Local edge k of a triangle joins vertex k and vertex k+1.
_LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])

RECT_MARKERS = ("bottom", "right", "top", "left")


class Node(NamedTuple):
    id: int
    x: float
    y: float


class Element(NamedTuple):
    id: int
    node_ids: tuple[int, int, int]
    generation: int
    parent: int | None


class BoundaryEdge(NamedTuple):
    node_ids: tuple[int, int]
    element_id: int
    marker: str


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation.

    Attributes
    ----------
    points : (N, 2) float array
        Node coordinates.
    triangles : (M, 3) int array
        Counter-clockwise node triples.
    generations : (M,) int array
        Refinement depth of every element.
    parents : (M,) int array
        Element id in the mesh this one was refined from, ``-1`` if none.
    edges : (B, 2) int array
        Boundary edges, oriented counter-clockwise with respect to the owning
        element (the domain lies to the left).
    edge_markers : tuple of str
        Boundary-segment label of every boundary edge.
    generation : int
        Number of refinement passes that produced this mesh.
    green_parents : (M, 3) int array
        Parent node triple of green closure children, ``-1`` rows otherwise.
    """

    points: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_markers: tuple
    generations: np.ndarray = None
    parents: np.ndarray = None
    generation: int = 0
    green_parents: np.ndarray = None
    edge_elements: np.ndarray = field(init=False)

    def __post_init__(self):
        set_ = object.__setattr__
        m = len(self.triangles)
        set_(self, "points", _frozen(self.points, float).reshape(-1, 2))
        set_(self, "triangles", _frozen(self.triangles, np.int64).reshape(-1, 3))
        set_(self, "edges", _frozen(self.edges, np.int64).reshape(-1, 2))
        set_(self, "edge_markers", tuple(str(s) for s in self.edge_markers))
        if self.generations is None:
            set_(self, "generations", np.zeros(m, dtype=np.int64))
        set_(self, "generations", _frozen(self.generations, np.int64))
        if self.parents is None:
            set_(self, "parents", np.full(m, -1, dtype=np.int64))
        set_(self, "parents", _frozen(self.parents, np.int64))
        if self.green_parents is None:
            set_(self, "green_parents", np.full((m, 3), -1, dtype=np.int64))
        set_(self, "green_parents", _frozen(self.green_parents, np.int64).reshape(-1, 3))

        if len(self.edge_markers) != len(self.edges):
            raise DimensionError("one marker is required per boundary edge")
        if not np.all(np.isfinite(self.points)):
            raise GeometryError("node coordinates must be finite")
        if m and (self.triangles.min() < 0 or self.triangles.max() >= self.n_nodes):
            raise GeometryError("element refers to a missing node")
        if np.any(self.signed_areas() <= 0.0):
            bad = int(np.flatnonzero(self.signed_areas() <= 0.0)[0])
            raise GeometryError(f"element {bad} is degenerate or clockwise")
        set_(self, "edge_elements", _frozen(self._find_edge_elements(), np.int64))

    # -- sizes and accessors -------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def node(self, i: int) -> Node:
        x, y = self.points[i]
        return Node(int(i), float(x), float(y))

    def element(self, i: int) -> Element:
        self.check_element(i)
        parent = int(self.parents[i])
        return Element(int(i), tuple(int(n) for n in self.triangles[i]),
                       int(self.generations[i]), None if parent < 0 else parent)

    @property
    def boundary_edges(self) -> list[BoundaryEdge]:
        return [BoundaryEdge((int(a), int(b)), int(e), mk)
                for (a, b), e, mk in zip(self.edges, self.edge_elements, self.edge_markers)]

    def check_element(self, element_id) -> int:
        i = int(element_id)
        if i != element_id or not 0 <= i < self.n_elements:
            raise ElementNotFoundError(f"no element with id {element_id!r}")
        return i

    # -- geometry --------------------------------------------------------------

    def signed_areas(self) -> np.ndarray:
        p = self.points[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas())

    def centroids(self) -> np.ndarray:
        return self.points[self.triangles].mean(axis=1)

    def edge_lengths(self) -> np.ndarray:
        p = self.points[self.edges]
        return np.hypot(*(p[:, 1] - p[:, 0]).T)

    def boundary_nodes(self, markers: Iterable[str] | None = None) -> np.ndarray:
        """Sorted ids of nodes on boundary edges (optionally only some markers)."""
        if markers is None:
            sel = np.ones(self.n_edges, dtype=bool)
        else:
            wanted = set(markers)
            sel = np.array([m in wanted for m in self.edge_markers], dtype=bool)
        return np.unique(self.edges[sel].ravel())

    def shape_gradients(self) -> np.ndarray:
        """Constant gradients of the three P1 hat functions, shape (M, 3, 2)."""
        p = self.points[self.triangles]
        # grad N_i = rot90(p_{i+2} - p_{i+1}) / (2 area)
        opp = np.roll(p, -2, axis=1) - np.roll(p, -1, axis=1)
        two_area = 2.0 * self.signed_areas()
        return np.stack([-opp[..., 1], opp[..., 0]], axis=-1) / two_area[:, None, None]

    # -- topology ---------------------------------------------------------------

    def element_edges(self):
        """Unique undirected edges and the edge index of each local edge.

        Returns ``(edges, elem_edges)`` where ``edges`` is (E, 2) with sorted
        node pairs and ``elem_edges`` is (M, 3).
        """
        pairs = np.sort(self.triangles[:, _LOCAL_EDGES], axis=2).reshape(-1, 2)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        return edges, inverse.reshape(-1, 3)

    def neighbors(self) -> np.ndarray:
        """(M, 3) array of the element across each local edge, ``-1`` on the boundary."""
        _, elem_edges = self.element_edges()
        flat = elem_edges.ravel()
        order = np.argsort(flat, kind="stable")
        owners = order // 3
        nb = np.full(flat.shape, -1, dtype=np.int64)
        same = flat[order[:-1]] == flat[order[1:]]
        a, b = order[:-1][same], order[1:][same]
        nb[a] = owners[1:][same]
        nb[b] = owners[:-1][same]
        return nb.reshape(-1, 3)

    def _find_edge_elements(self) -> np.ndarray:
        if self.n_edges == 0:
            return np.zeros(0, dtype=np.int64)
        lookup = {}
        for e, tri in enumerate(self.triangles):
            for k in range(3):
                lookup[(int(tri[k]), int(tri[(k + 1) % 3]))] = e
        owners = []
        for a, b in self.edges:
            e = lookup.get((int(a), int(b)))
            if e is None:
                raise GeometryError(
                    f"boundary edge ({a}, {b}) is not a counter-clockwise element edge")
            owners.append(e)
        return np.array(owners, dtype=np.int64)

    def is_conforming(self) -> bool:
        """True when interior edges are shared by exactly two elements.

        A hanging node leaves the long edge used by a single element without
        being a boundary edge, so this also detects non-conformity.
        """
        edges, elem_edges = self.element_edges()
        counts = np.bincount(elem_edges.ravel(), minlength=len(edges))
        if np.any(counts > 2):
            return False
        single = {tuple(e) for e in edges[counts == 1]}
        bnd = {tuple(sorted(e)) for e in self.edges.tolist()}
        return single == bnd

    def total_area(self) -> float:
        return float(np.sum(self.areas()))


def build_rect_mesh(nx: int, ny: int, corners=(0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """Structured triangulation of an axis-aligned rectangle.

    Every cell is split along its lower-left/upper-right diagonal, giving
    ``2*nx*ny`` elements.  ``corners`` is ``(xmin, ymin, xmax, ymax)``.
    Boundary edges are labelled ``bottom``, ``right``, ``top`` and ``left``.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise GeometryError("nx and ny must be positive integers")
    x0, y0, x1, y1 = (float(c) for c in corners)
    if not all(np.isfinite([x0, y0, x1, y1])) or x1 <= x0 or y1 <= y0:
        raise GeometryError(f"degenerate rectangle {tuple(corners)!r}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    points = np.column_stack([X.ravel(), Y.ravel()])

    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    p00 = idx[:-1, :-1].ravel()
    p10 = idx[:-1, 1:].ravel()
    p01 = idx[1:, :-1].ravel()
    p11 = idx[1:, 1:].ravel()
    lower = np.column_stack([p00, p10, p11])
    upper = np.column_stack([p00, p11, p01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)

    bottom = np.column_stack([idx[0, :-1], idx[0, 1:]])
    right = np.column_stack([idx[:-1, -1], idx[1:, -1]])
    top = np.column_stack([idx[-1, 1:], idx[-1, :-1]])[::-1]
    left = np.column_stack([idx[1:, 0], idx[:-1, 0]])[::-1]
    edges = np.concatenate([bottom, right, top, left])
    markers = sum(([m] * len(s) for m, s in zip(RECT_MARKERS, (bottom, right, top, left))), [])
    return Mesh(points, triangles, edges, markers)


def _collapse_greens(mesh: Mesh):
    """Merge green closure pairs back into their parents.

    Returns triangles, generations, parent ids and, for every merged element,
    the list of old element ids it covers.
    """
    tris, gens, parents, origin = [], [], [], []
    seen = {}
    for e in range(mesh.n_elements):
        gp = mesh.green_parents[e]
        if gp[0] < 0:
            tris.append(tuple(int(v) for v in mesh.triangles[e]))
            gens.append(int(mesh.generations[e]))
            parents.append(e)
            origin.append([e])
            continue
        key = tuple(int(v) for v in gp)
        if key in seen:
            origin[seen[key]].append(e)
            continue
        seen[key] = len(tris)
        tris.append(key)
        gens.append(int(mesh.generations[e]) - 1)
        parents.append(e)
        origin.append([e])
    return tris, gens, parents, origin


class _Midpoints:
    """Midpoint node registry keyed by exact coordinates."""

    def __init__(self, points):
        self.points = [tuple(p) for p in np.asarray(points).tolist()]
        self.by_coord = {p: i for i, p in enumerate(self.points)}

    def _coord(self, a, b):
        pa, pb = self.points[a], self.points[b]
        return (0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]))

    def find(self, a, b):
        return self.by_coord.get(self._coord(a, b))

    def get(self, a, b):
        c = self._coord(a, b)
        i = self.by_coord.get(c)
        if i is None:
            i = len(self.points)
            self.points.append(c)
            self.by_coord[c] = i
        return i


def _split_boundary(edges, markers, mids):
    out, out_mk = [], []
    stack = [(a, b, mk) for (a, b), mk in zip(edges, markers)][::-1]
    while stack:
        a, b, mk = stack.pop()
        m = mids.find(a, b)
        if m is None:
            out.append((a, b))
            out_mk.append(mk)
        else:
            stack += [(m, b, mk), (a, m, mk)]
    return out, out_mk


def _edge_counts(tris):
    counts = {}
    for t in tris:
        for k in range(3):
            a, b = t[k], t[(k + 1) % 3]
            key = (a, b) if a < b else (b, a)
            counts[key] = counts.get(key, 0) + 1
    return counts


def refine_elements(mesh: Mesh, marked) -> Mesh:
    """Red-refine the marked elements and close the mesh conformingly.

    Parameters
    ----------
    mesh : Mesh
    marked : iterable of int
        Element ids to split into four children.

    Returns
    -------
    Mesh
        A new mesh.  Old node ids are kept; new midpoint nodes are appended.
        With an empty marked set the input mesh itself is returned.
    """
    marked = sorted({mesh.check_element(e) for e in marked})
    if not marked:
        return mesh

    tris, gens, parents, origin = _collapse_greens(mesh)
    old_to_merged = {}
    for i, olds in enumerate(origin):
        for o in olds:
            old_to_merged[o] = i
    mids = _Midpoints(mesh.points)
    bnd_edges = [tuple(e) for e in mesh.edges.tolist()]
    markers = list(mesh.edge_markers)

    to_red = {old_to_merged[e] for e in marked}
    while to_red:
        new_tris, new_gens, new_par = [], [], []
        for e, (a, b, c) in enumerate(tris):
            if e not in to_red:
                new_tris.append((a, b, c))
                new_gens.append(gens[e])
                new_par.append(parents[e])
                continue
            mab, mbc, mca = mids.get(a, b), mids.get(b, c), mids.get(c, a)
            new_tris += [(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)]
            new_gens += [gens[e] + 1] * 4
            new_par += [parents[e]] * 4
        tris, gens, parents = new_tris, new_gens, new_par

        # Elements with two hanging edges, or a hanging edge that is itself
        # split again, must be refined red as well.
        bnd, _ = _split_boundary(bnd_edges, markers, mids)
        bnd = {(min(a, b), max(a, b)) for a, b in bnd}
        counts = _edge_counts(tris)

        def hanging(a, b):
            key = (a, b) if a < b else (b, a)
            if counts.get(key, 1) != 1 or key in bnd:
                return None
            return mids.find(a, b)

        def split_again(a, b):
            key = (a, b) if a < b else (b, a)
            return key not in counts or hanging(a, b) is not None

        to_red = set()
        for e, t in enumerate(tris):
            n_hang = 0
            for k in range(3):
                a, b = t[k], t[(k + 1) % 3]
                m = hanging(a, b)
                if m is None:
                    continue
                n_hang += 1
                if split_again(a, m) or split_again(m, b):
                    n_hang = 2
                    break
            if n_hang >= 2:
                to_red.add(e)

    out_tris, out_gen, out_par, out_green = [], [], [], []
    none3 = (-1, -1, -1)
    for e, t in enumerate(tris):
        for k in range(3):
            a, b = t[k], t[(k + 1) % 3]
            m = hanging(a, b)
            if m is not None:
                r = t[(k + 2) % 3]
                out_tris += [(r, a, m), (r, m, b)]
                out_gen += [gens[e] + 1] * 2
                out_par += [parents[e]] * 2
                out_green += [t, t]
                break
        else:
            out_tris.append(t)
            out_gen.append(gens[e])
            out_par.append(parents[e])
            out_green.append(none3)

    new_edges, new_markers = _split_boundary(bnd_edges, markers, mids)
    return Mesh(np.array(mids.points), np.array(out_tris), np.array(new_edges), new_markers,
                generations=np.array(out_gen), parents=np.array(out_par),
                generation=mesh.generation + 1, green_parents=np.array(out_green))


def uniform_refine(mesh: Mesh, times: int = 1) -> Mesh:
    """Red-refine every element ``times`` times."""
    for _ in range(times):
        mesh = refine_elements(mesh, range(mesh.n_elements))
    return mesh


def element_gradient(mesh: Mesh, u, element_id: int) -> np.ndarray:
    """Gradient of the P1 interpolant of nodal values ``u`` on one element."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes,):
        raise DimensionError(f"expected {mesh.n_nodes} nodal values, got shape {u.shape}")
    e = mesh.check_element(element_id)
    return _gradients(mesh, u, np.array([e]))[0]


def element_gradients(mesh: Mesh, u) -> np.ndarray:
    """Gradients of the P1 interpolant on every element, shape (M, 2)."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes,):
        raise DimensionError(f"expected {mesh.n_nodes} nodal values, got shape {u.shape}")
    return _gradients(mesh, u, np.arange(mesh.n_elements))


def _gradients(mesh, u, ids):
    p = mesh.points[mesh.triangles[ids]]
    vals = u[mesh.triangles[ids]]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=1)  # rows: edge vectors
    rhs = np.stack([vals[:, 1] - vals[:, 0], vals[:, 2] - vals[:, 0]], axis=1)
    return np.linalg.solve(jac, rhs[..., None])[..., 0]


def submesh(mesh: Mesh, element_ids, interface_marker: str = "interface"):
    """Extract the mesh made of ``element_ids``.

    Returns ``(sub, node_map)`` where ``node_map[i]`` is the parent-mesh id of
    sub-mesh node ``i``.  Boundary edges inherited from the parent keep their
    marker; new cut edges get ``interface_marker``.
    """
    ids = np.array(sorted({mesh.check_element(e) for e in element_ids}), dtype=np.int64)
    tris = mesh.triangles[ids]
    node_map = np.unique(tris.ravel())
    local = np.full(mesh.n_nodes, -1, dtype=np.int64)
    local[node_map] = np.arange(len(node_map))

    directed = tris[:, _LOCAL_EDGES].reshape(-1, 2)
    key = np.sort(directed, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    outer = directed[counts[inv.ravel()] == 1]
    parent_marker = {(int(a), int(b)): mk for (a, b), mk in zip(mesh.edges.tolist(), mesh.edge_markers)}
    markers = [parent_marker.get((int(a), int(b)), interface_marker) for a, b in outer]
    sub = Mesh(mesh.points[node_map], local[tris], local[outer], markers,
               generations=mesh.generations[ids])
    return sub, node_map


def write_mesh(mesh: Mesh, path) -> None:
    """Write the line-oriented text format (ascending ids, full precision)."""
    lines = [f"nodes {mesh.n_nodes} elements {mesh.n_elements} edges {mesh.n_edges}"]
    lines += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(mesh.points.tolist())]
    lines += [f"{i} {a} {b} {c} {g}"
              for i, ((a, b, c), g) in enumerate(zip(mesh.triangles.tolist(), mesh.generations.tolist()))]
    lines += [f"{a} {b} {mk}" for (a, b), mk in zip(mesh.edges.tolist(), mesh.edge_markers)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    """Read a mesh written by :func:`write_mesh`."""
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip()]
    try:
        head = rows[0]
        if head[0::2] != ["nodes", "elements", "edges"]:
            raise ValueError
        n, m, b = (int(v) for v in head[1::2])
        body = rows[1:]
        if len(body) != n + m + b:
            raise ValueError
        pts = np.array([[float(r[1]), float(r[2])] for r in body[:n]])
        ids = [int(r[0]) for r in body[:n]]
        eids = [int(r[0]) for r in body[n:n + m]]
        tris = np.array([[int(v) for v in r[1:4]] for r in body[n:n + m]], dtype=np.int64)
        gens = np.array([int(r[4]) for r in body[n:n + m]], dtype=np.int64)
        edges = np.array([[int(r[0]), int(r[1])] for r in body[n + m:]], dtype=np.int64)
        markers = [r[2] for r in body[n + m:]]
    except (ValueError, IndexError) as exc:
        raise GeometryError(f"malformed mesh file {path}") from exc
    if ids != list(range(n)) or eids != list(range(m)):
        raise GeometryError("mesh file ids must be consecutive and ascending")
    return Mesh(pts, tris, edges.reshape(-1, 2), markers, generations=gens,
                generation=int(gens.max()) if m else 0)
