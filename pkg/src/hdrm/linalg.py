"""Sparse storage, Krylov and relaxation solvers, and discrete norms.

Sparse matrices are ``scipy.sparse.csr_matrix`` objects; everything else is
plain numpy.  The iterative solvers accept anything that behaves like a
linear operator: a dense array, a sparse matrix, a
``scipy.sparse.linalg.LinearOperator`` or a callable ``v -> A v``.

All solvers use the relative residual ``||b - A x|| / ||b||`` as stopping
criterion and report the *true* residual of the returned iterate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .errors import BreakdownError, DimensionError, NumericError, SingularMatrixError
from .mesh import element_gradients

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveStats:
    iterations: int
    final_residual_norm: float
    converged: bool


def csr_from_triplets(rows, cols, vals, shape) -> sp.csr_matrix:
    """Finalize triplets into CSR; duplicates are summed in input order."""
    A = sp.coo_matrix((np.asarray(vals, dtype=float), (np.asarray(rows), np.asarray(cols))), shape=shape)
    A = A.tocsr()
    A.sum_duplicates()
    return A


def as_operator(A, n: int | None = None) -> LinearOperator:
    if callable(A) and not isinstance(A, (np.ndarray, LinearOperator)) and not sp.issparse(A):
        if n is None:
            raise DimensionError("size must be given for a callable operator")
        return LinearOperator((n, n), matvec=A, dtype=float)
    op = aslinearoperator(A)
    if op.shape[0] != op.shape[1]:
        raise DimensionError(f"operator must be square, got {op.shape}")
    return op


def _prepare(A, b, x0):
    b = np.asarray(b, dtype=float).ravel()
    op = as_operator(A, len(b))
    if op.shape[0] != len(b):
        raise DimensionError(f"operator of size {op.shape[0]} vs right-hand side of size {len(b)}")
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float).ravel()
    if x.shape != b.shape:
        raise DimensionError("initial guess has the wrong size")
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(x))):
        raise NumericError("non-finite right-hand side or initial guess")
    return op, b, x


def _rel(rnorm, bnorm):
    return rnorm / bnorm if bnorm > 0 else rnorm


def gmres(A, b, x0=None, tol=1e-8, max_iter=1000, restart=30, callback=None):
    """Restarted GMRES with modified Gram-Schmidt and Givens rotations.

    Parameters
    ----------
    A : linear operator
    b : (n,) array
    x0 : (n,) array, optional
    tol : float
        Relative residual tolerance.
    max_iter : int
        Total number of Arnoldi steps (matrix-vector products).
    restart : int
        Krylov subspace dimension between restarts.
    callback : callable, optional
        Called with the true relative residual after every restart cycle.

    Returns
    -------
    x : (n,) array
    stats : SolveStats

    Raises
    ------
    BreakdownError
        The Arnoldi process produced a zero vector while the residual is
        still above ``tol`` (singular operator).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    op, b, x = _prepare(A, b, x0)
    n = len(b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), SolveStats(0, 0.0, True)

    r = b - op.matvec(x)
    rel = _rel(np.linalg.norm(r), bnorm)
    it = 0
    restart = max(1, min(int(restart), n))
    while rel > tol and it < max_iter:
        m = min(restart, max_iter - it)
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        beta = np.linalg.norm(r)
        g[0] = beta
        V[0] = r / beta
        k = m
        broke = False
        for j in range(m):
            w = op.matvec(V[j])
            it += 1
            wnorm0 = np.linalg.norm(w)
            for i in range(j + 1):
                H[i, j] = np.dot(w, V[i])
                w -= H[i, j] * V[i]
            # one re-orthogonalisation pass keeps V orthonormal for small n
            for i in range(j + 1):
                c = np.dot(w, V[i])
                H[i, j] += c
                w -= c * V[i]
            h = np.linalg.norm(w)
            H[j + 1, j] = h
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            if h <= 1e-14 * max(wnorm0, 1e-300):
                k = j + 1
                broke = True
                break
            V[j + 1] = w / h
            if abs(g[j + 1]) / bnorm <= tol:
                k = j + 1
                break
        R = H[:k, :k]
        diag = np.abs(np.diag(R))
        if diag.min() <= 1e-14 * diag.max():
            y = np.linalg.lstsq(R, g[:k], rcond=None)[0]
        else:
            y = _back_substitute(R, g[:k])
        x = x + V[:k].T @ y
        r = b - op.matvec(x)
        rel = _rel(np.linalg.norm(r), bnorm)
        if callback is not None:
            callback(rel)
        if broke and rel > tol:
            raise BreakdownError(f"GMRES breakdown after {it} iterations with relative residual {rel:.3e}")
    return x, SolveStats(it, float(rel), bool(rel <= tol))


def _back_substitute(R, g):
    k = len(g)
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y


def bicgstab(A, b, x0=None, tol=1e-8, max_iter=1000, callback=None):
    """Stabilised bi-conjugate gradients (van der Vorst).

    Raises
    ------
    BreakdownError
        When ``rho`` or ``omega`` vanishes before convergence.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    op, b, x = _prepare(A, b, x0)
    n = len(b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), SolveStats(0, 0.0, True)

    r = b - op.matvec(x)
    rel = _rel(np.linalg.norm(r), bnorm)
    it = 0
    scale = np.linalg.norm(r)
    while rel > tol and it < max_iter:
        rhat = r.copy()
        rho = alpha = omega = 1.0
        v = np.zeros(n)
        p = np.zeros(n)
        while it < max_iter:
            rho_new = float(np.dot(rhat, r))
            if abs(rho_new) <= 1e-30 * scale * scale:
                raise BreakdownError(f"BiCGSTAB breakdown (rho = 0) after {it} iterations")
            beta = (rho_new / rho) * (alpha / omega)
            rho = rho_new
            p = r + beta * (p - omega * v)
            v = op.matvec(p)
            alpha = rho / float(np.dot(rhat, v))
            s = r - alpha * v
            it += 1
            if _rel(np.linalg.norm(s), bnorm) <= tol:
                x = x + alpha * p
                r = s
                break
            t = op.matvec(s)
            tt = float(np.dot(t, t))
            omega = float(np.dot(t, s)) / tt if tt > 0 else 0.0
            x = x + alpha * p + omega * s
            r = s - omega * t
            if callback is not None:
                callback(_rel(np.linalg.norm(r), bnorm))
            if _rel(np.linalg.norm(r), bnorm) <= tol:
                break
            if omega == 0.0:
                raise BreakdownError(f"BiCGSTAB breakdown (omega = 0) after {it} iterations")
        # Verify against the true residual; restart from it if the recurrence drifted.
        r = b - op.matvec(x)
        rel = _rel(np.linalg.norm(r), bnorm)
    return x, SolveStats(it, float(rel), bool(rel <= tol))


@numba.njit(cache=True)
def _gs_sweep(indptr, indices, data, diag, b, x, rows):
    for i in rows:
        s = b[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i:
                s -= data[k] * x[j]
        x[i] = s / diag[i]


@numba.njit(cache=True)
def _residual_norm(indptr, indices, data, b, x):
    acc = 0.0
    for i in range(len(b)):
        s = b[i]
        for k in range(indptr[i], indptr[i + 1]):
            s -= data[k] * x[indices[k]]
        acc += s * s
    return np.sqrt(acc)


def gauss_seidel_sweep(A: sp.csr_matrix, b, x, rows=None):
    """One in-place forward Gauss-Seidel sweep over ``rows`` (default: all)."""
    diag = A.diagonal()
    if rows is None:
        rows = np.arange(A.shape[0])
    _gs_sweep(A.indptr, A.indices, A.data, diag, b, x, np.asarray(rows, dtype=np.int64))


def gauss_seidel(A, b, x0=None, tol=1e-8, max_iter=1000, callback=None):
    """Classical forward Gauss-Seidel iteration.

    ``callback(k, x)`` is invoked after sweep ``k`` (1-based) when given.

    Raises
    ------
    SingularMatrixError
        If a diagonal entry is zero.
    """
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    b = np.asarray(b, dtype=float).ravel()
    n = A.shape[0]
    if A.shape != (n, n) or len(b) != n:
        raise DimensionError("Gauss-Seidel needs a square matrix matching b")
    diag = A.diagonal()
    if np.any(diag == 0.0):
        raise SingularMatrixError(f"zero diagonal entry in row {int(np.flatnonzero(diag == 0.0)[0])}")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float).ravel()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0 and not np.any(x):
        return x, SolveStats(0, 0.0, True)
    rows = np.arange(n, dtype=np.int64)
    rnorm = _residual_norm(A.indptr, A.indices, A.data, b, x)
    rel = _rel(rnorm, bnorm)
    it = 0
    while rel > tol and it < max_iter:
        _gs_sweep(A.indptr, A.indices, A.data, diag, b, x, rows)
        it += 1
        rel = _rel(_residual_norm(A.indptr, A.indices, A.data, b, x), bnorm)
        if not np.isfinite(rel):
            break
        if callback is not None:
            callback(it, x)
    return x, SolveStats(it, float(rel), bool(rel <= tol))


def dense_solve(A, b) -> np.ndarray:
    """Gaussian elimination with partial pivoting.

    Raises
    ------
    SingularMatrixError
        When a pivot falls below ``1e-14 * ||A||_inf``.
    """
    M = np.array(A.toarray() if sp.issparse(A) else A, dtype=float)
    b = np.array(b, dtype=float)
    n = M.shape[0]
    if M.shape != (n, n) or b.shape[0] != n:
        raise DimensionError(f"dense_solve needs a square matrix matching b, got {M.shape} and {b.shape}")
    scale = np.abs(M).sum(axis=1).max() if n else 0.0
    for k in range(n):
        p = k + int(np.argmax(np.abs(M[k:, k])))
        if abs(M[p, k]) <= 1e-14 * scale or scale == 0.0:
            raise SingularMatrixError(f"matrix is singular to working precision (column {k})")
        if p != k:
            M[[k, p]] = M[[p, k]]
            b[[k, p]] = b[[p, k]]
        f = M[k + 1:, k] / M[k, k]
        M[k + 1:, k:] -= np.outer(f, M[k, k:])
        b[k + 1:] -= f[:, None] * b[k] if b.ndim == 2 else f * b[k]
    x = np.zeros_like(b)
    for k in range(n - 1, -1, -1):
        x[k] = (b[k] - M[k, k + 1:] @ x[k + 1:]) / M[k, k]
    return x


def lumped_mass(mesh) -> np.ndarray:
    """Row-sum lumped P1 mass: one third of every adjacent element's area."""
    return np.bincount(mesh.triangles.ravel(), weights=np.repeat(mesh.areas() / 3.0, 3),
                       minlength=mesh.n_nodes)


def norm(u, kind: str = "l2", mesh=None) -> float:
    """Vector or discrete function norm.

    kind
        ``"l2"``: Euclidean.  ``"L2"``: mass-lumped nodal L2 norm on ``mesh``.
        ``"H1-seminorm"``: sqrt(sum_K area_K |grad u|_K^2).  ``"H1"``: full
        H1 norm, sqrt(L2^2 + seminorm^2).
    """
    u = np.asarray(u, dtype=float)
    if kind == "l2":
        return float(np.linalg.norm(u))
    if mesh is None:
        raise ValueError(f"norm kind {kind!r} needs a mesh")
    if u.shape != (mesh.n_nodes,):
        raise DimensionError(f"expected {mesh.n_nodes} nodal values, got {u.shape}")
    l2sq = float(np.dot(lumped_mass(mesh), u * u))
    if kind == "L2":
        return np.sqrt(l2sq)
    semi = float(np.dot(mesh.areas(), np.sum(element_gradients(mesh, u) ** 2, axis=1)))
    if kind == "H1-seminorm":
        return np.sqrt(semi)
    if kind == "H1":
        return np.sqrt(l2sq + semi)
    raise ValueError(f"unknown norm kind {kind!r}")


def write_matrix(A, path) -> None:
    """Debug export: ``rows cols nnz`` header then 1-based ``i j v`` lines."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        fh.write(f"{C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for i, j, v in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def read_matrix(path) -> sp.csr_matrix:
    with open(path) as fh:
        m, n, nnz = (int(v) for v in fh.readline().split())
        rows = [ln.split() for ln in fh if ln.strip()]
    if len(rows) != nnz:
        raise DimensionError(f"expected {nnz} entries, found {len(rows)}")
    i = np.array([int(r[0]) - 1 for r in rows], dtype=np.int64)
    j = np.array([int(r[1]) - 1 for r in rows], dtype=np.int64)
    v = np.array([float(r[2]) for r in rows])
    return csr_from_triplets(i, j, v, (m, n))
