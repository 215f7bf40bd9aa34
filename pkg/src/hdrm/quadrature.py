"""Gaussian quadrature on the reference triangle and on straight segments.

Reference triangle: vertices (0,0), (1,0), (0,1), measure 1/2.
Reference segment: [-1, 1], measure 2.

Integrands are callables ``f(x, y)`` that accept numpy arrays of physical
coordinates and return an array of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NumericError


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (n, 2) on the triangle, (n,) on the segment
    weights: np.ndarray
    degree: int
    domain: str          # "triangle" or "segment"

    def __len__(self):
        return len(self.weights)


def _rule(points, weights, degree, domain):
    pts = np.array(points, dtype=float)
    w = np.array(weights, dtype=float)
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, degree, domain)


# Strang-Fix / Dunavant symmetric rules.
_A4, _B4 = 0.44594849091596488632, 0.091576213509770743460
_W4a, _W4b = 0.22338158967801146570 / 2, 0.10995174365532186764 / 2

TRIANGLE_RULES = {
    1: _rule([[1 / 3, 1 / 3]], [0.5], 1, "triangle"),
    2: _rule([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]], [1 / 6] * 3, 2, "triangle"),
    4: _rule(
        [[_A4, _A4], [1 - 2 * _A4, _A4], [_A4, 1 - 2 * _A4],
         [_B4, _B4], [1 - 2 * _B4, _B4], [_B4, 1 - 2 * _B4]],
        [_W4a] * 3 + [_W4b] * 3, 4, "triangle"),
}


def triangle_rule(degree: int = 2) -> QuadratureRule:
    """Smallest provided triangle rule exact for polynomials of ``degree``."""
    for d in sorted(TRIANGLE_RULES):
        if d >= degree:
            return TRIANGLE_RULES[d]
    raise ValueError(f"no triangle rule of degree {degree}; maximum is {max(TRIANGLE_RULES)}")


def composite_rule(rule: QuadratureRule, levels: int = 1) -> QuadratureRule:
    """Copy ``rule`` onto the 4**levels red children of the reference triangle.

    Keeps the polynomial degree but shrinks the error constant by about
    ``4**(-(degree + 1) * levels / 2)`` for smooth integrands.
    """
    pts, w = np.asarray(rule.points), np.asarray(rule.weights)
    for _ in range(levels):
        # children as (origin, edge1, edge2) of the affine map from the reference triangle
        kids = [((0.0, 0.0), (0.5, 0.0), (0.0, 0.5)), ((0.5, 0.0), (0.5, 0.0), (0.0, 0.5)),
                ((0.0, 0.5), (0.5, 0.0), (0.0, 0.5)), ((0.5, 0.5), (-0.5, 0.0), (0.0, -0.5))]
        pts = np.vstack([np.add(o, np.outer(pts[:, 0], e1) + np.outer(pts[:, 1], e2)) for o, e1, e2 in kids])
        w = np.tile(w / 4.0, 4)
    return _rule(pts, w, rule.degree, "triangle")


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [-1, 1], exact to degree 2n-1."""
    if n < 1:
        raise ValueError("need at least one point")
    x, w = np.polynomial.legendre.leggauss(n)
    return _rule(x, w, 2 * n - 1, "segment")


SEGMENT_RULES = {n: gauss_legendre(n) for n in range(1, 5)}


def _check_finite(values, x, y):
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        i = np.flatnonzero(bad.ravel())[0]
        pt = (float(np.ravel(x)[i]), float(np.ravel(y)[i]))
        raise NumericError(f"integrand is not finite at {pt}", point=pt)
    return values


def map_to_element(rule: QuadratureRule, vertices) -> tuple[np.ndarray, float]:
    """Physical quadrature points and |J| for a triangle with ``vertices`` (3, 2)."""
    v = np.asarray(vertices, dtype=float)
    jac = np.column_stack([v[1] - v[0], v[2] - v[0]])
    xy = v[0] + rule.points @ jac.T
    return xy, abs(np.linalg.det(jac))


def integrate_on_element(rule: QuadratureRule, mesh, element_id: int, integrand) -> float:
    """Sum of ``w_j * f(x_j) * |J|`` over the rule mapped onto one element."""
    e = mesh.check_element(element_id)
    xy, detj = map_to_element(rule, mesh.points[mesh.triangles[e]])
    vals = _check_finite(integrand(xy[:, 0], xy[:, 1]), xy[:, 0], xy[:, 1])
    return float(np.dot(rule.weights, vals) * detj)


def map_to_segment(rule: QuadratureRule, a, b):
    """Physical points, arc-length parameters and |J| = L/2 on segment a->b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = 0.5 * (rule.points + 1.0)
    xy = a + t[:, None] * (b - a)
    length = float(np.hypot(*(b - a)))
    return xy, t * length, 0.5 * length


def integrate_on_edge(rule: QuadratureRule, mesh, edge, integrand) -> float:
    """Integrate ``f(x, y)`` along a boundary edge (``BoundaryEdge`` or node pair)."""
    a, b = getattr(edge, "node_ids", edge)
    xy, _, detj = map_to_segment(rule, mesh.points[a], mesh.points[b])
    vals = _check_finite(integrand(xy[:, 0], xy[:, 1]), xy[:, 0], xy[:, 1])
    return float(np.dot(rule.weights, vals) * detj)


def integrate_mesh(mesh, integrand, rule: QuadratureRule | None = None) -> float:
    """Integral of ``f(x, y)`` over the whole mesh (vectorised over elements)."""
    rule = rule or triangle_rule(4)
    p = mesh.points[mesh.triangles]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    xy = p[:, None, 0] + rule.points[None, :, 0, None] * d1[:, None] + rule.points[None, :, 1, None] * d2[:, None]
    vals = _check_finite(integrand(xy[..., 0], xy[..., 1]), xy[..., 0], xy[..., 1])
    detj = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    return float(np.sum(vals @ rule.weights * detj))
