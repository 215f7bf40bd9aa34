"""Newton-Krylov iteration for problems with nonlinear boundary conditions.

A nonlinear system is any object with

``residual(u) -> R``
    residual vector,
``jacobian(u) -> matrix``
    analytic Jacobian (sparse or dense),
``step_norm(du) -> float``
    norm used for the step test (H1 on a mesh, Euclidean otherwise).

:class:`FemNonlinearSystem` builds these for a :class:`~hdrm.problem.ProblemSpec`
on a mesh.  Its residual rows are

* interior and Neumann nodes: ``F(u) - K(u) u`` (discrete ``f - L(u)``),
* Dirichlet nodes: ``u_i - g_i``,
* nodes on nonlinear segments: ``B(u_i) - h_i``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, spsolve

from . import fem
from .config import NewtonConfig
from .errors import BreakdownError, ConfigError, DimensionError, NumericError
from .linalg import bicgstab, gmres, norm
from .problem import NonlinearBc, ProblemSpec

__all__ = ["NonlinearBc", "NewtonConfig", "NewtonState", "NewtonTrace", "FemNonlinearSystem",
           "FunctionSystem", "residual", "jacobian", "newton_krylov_solve"]

log = logging.getLogger(__name__)

FD_INNER_TOL = 1e-8


@dataclass
class NewtonState:
    iteration: int
    u: np.ndarray
    residual: np.ndarray
    residual_norm: float
    step_h1: float = math.nan
    inner_iters: int = 0


class NewtonTrace(list):
    """List of :class:`NewtonState` plus the outcome of the run.

    ``reason`` is ``"residual"``, ``"step"`` or ``"max_iter"``.
    """

    converged: bool = False
    reason: str = ""

    @property
    def residual_norms(self) -> np.ndarray:
        return np.array([s.residual_norm for s in self])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "residual_norm", "step_H1", "inner_iters"])
            for s in self:
                step = "NA" if math.isnan(s.step_h1) else repr(s.step_h1)
                w.writerow([s.iteration, repr(s.residual_norm), step, s.inner_iters])


# -- systems ---------------------------------------------------------------------


class FunctionSystem:
    """Wrap plain callables as a nonlinear system with a Euclidean step norm."""

    def __init__(self, residual, jacobian=None):
        self._residual = residual
        self._jacobian = jacobian

    def residual(self, u):
        return np.atleast_1d(np.asarray(self._residual(u), dtype=float))

    def jacobian(self, u):
        if self._jacobian is None:
            raise ConfigError("no analytic Jacobian supplied; use jacobian_mode='finite-difference'")
        return np.atleast_2d(np.asarray(self._jacobian(u), dtype=float))

    def step_norm(self, du):
        return float(np.linalg.norm(du))


class FemNonlinearSystem:
    """Discrete FEM residual and Jacobian for ``problem`` on ``mesh``.

    ``extra_dirichlet`` adds node constraints (used for subdomain solves),
    overriding boundary-segment data on the same nodes.
    """

    def __init__(self, mesh, problem: ProblemSpec, extra_dirichlet=None, rule=fem.DEFAULT_RULE):
        self.mesh = mesh
        self.problem = problem
        self.rule = rule
        self.dirichlet = fem.dirichlet_data(mesh, problem)
        if extra_dirichlet:
            self.dirichlet.update({int(k): float(v) for k, v in dict(extra_dirichlet).items()})
        nl = fem.nonlinear_nodes(mesh, problem, exclude=self.dirichlet)
        self.nl_nodes = np.array(sorted(nl), dtype=np.int64)
        self.nl_ops = {}
        h = np.zeros(len(self.nl_nodes))
        for mk in sorted(set(nl.values())):
            self.nl_ops[mk] = problem.nonlinear_bc(mk)
            sel = np.array([nl[i] == mk for i in self.nl_nodes])
            x, y = mesh.points[self.nl_nodes[sel]].T
            h[sel] = self.nl_ops[mk].h(x, y)
        self.nl_markers = [nl[i] for i in self.nl_nodes]
        self.nl_h = h
        self.dir_nodes = np.array(sorted(self.dirichlet), dtype=np.int64)
        self.dir_vals = np.array([self.dirichlet[i] for i in self.dir_nodes])
        interior = np.ones(mesh.n_nodes)
        interior[self.dir_nodes] = 0.0
        interior[self.nl_nodes] = 0.0
        self.interior = interior
        self._neumann = fem.neumann_vector(mesh, problem)
        d = problem.diffusion
        self._diffusion = None if d is None or d.is_identity else d
        self._frozen = self._diffusion is None or not self._diffusion.depends_on_u
        self._K = None

    @property
    def n(self):
        return self.mesh.n_nodes

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise DimensionError(f"expected {self.n} nodal values, got {u.shape}")
        if not np.all(np.isfinite(u)):
            raise NumericError("non-finite Newton iterate")
        return u

    def _stiffness(self, u):
        if self._frozen and self._K is not None:
            return self._K
        ids = np.arange(self.mesh.n_elements)
        K = fem.scatter(self.mesh, fem.stiffness_blocks(self.mesh, ids, self._diffusion, self.problem.advection,
                                                        u, self.rule))
        if self._frozen:
            self._K = K
        return K

    def _force(self, u):
        ids = np.arange(self.mesh.n_elements)
        blocks = fem.force_blocks(self.mesh, ids, self.problem.f, self.problem.reaction, u, self.rule)
        return fem.scatter_vector(self.mesh, blocks) + self._neumann

    def stiffness(self, u) -> sp.csr_matrix:
        """Assembled ``K(u)`` without boundary rows applied."""
        return self._stiffness(self._check(u))

    def force(self, u) -> np.ndarray:
        """Assembled ``F(u)`` including Neumann data."""
        return self._force(self._check(u))

    @property
    def coefficients_frozen(self) -> bool:
        """True when neither K nor F depends on u."""
        return self._frozen and self.problem.reaction is None

    def _bc_derivative(self, u):
        d = np.zeros(len(self.nl_nodes))
        for k, (i, mk) in enumerate(zip(self.nl_nodes, self.nl_markers)):
            d[k] = self.nl_ops[mk].dB_du(u[i])
        return d

    def _bc_values(self, u):
        b = np.zeros(len(self.nl_nodes))
        for k, (i, mk) in enumerate(zip(self.nl_nodes, self.nl_markers)):
            b[k] = self.nl_ops[mk].B(u[i])
        return b

    def residual(self, u):
        u = self._check(u)
        R = self._force(u) - self._stiffness(u) @ u
        R[self.dir_nodes] = u[self.dir_nodes] - self.dir_vals
        R[self.nl_nodes] = self._bc_values(u) - self.nl_h
        return R

    def _linearisation_blocks(self, u):
        """d(K(u) u)/du - K(u) and -dF/du element blocks."""
        mesh, rule = self.mesh, self.rule
        ids = np.arange(mesh.n_elements)
        xy, detj = fem._quad_points(mesh, ids, rule)
        w = rule.weights[None, :] * detj[:, None]
        lam = fem._bary(rule)
        uq = fem._u_at_quad(mesh, ids, u, rule)
        blocks = np.zeros((mesh.n_elements, 3, 3))
        if self._diffusion is not None and self._diffusion.depends_on_u:
            G = mesh.shape_gradients()
            gh = np.einsum("ki,kid->kd", u[mesh.triangles], G)
            dA = self._diffusion.tensor_du(xy[..., 0], xy[..., 1], uq)
            blocks += np.einsum("kq,qj,kid,kqde,ke->kij", w, lam, G, dA, gh)
        if self.problem.reaction is not None:
            dc = self.problem.reaction.derivative(xy[..., 0], xy[..., 1], uq)
            blocks += np.einsum("kq,qi,qj->kij", w * dc, lam, lam)
        return blocks

    def jacobian(self, u):
        u = self._check(u)
        J = self._stiffness(u)
        if not self._frozen or self.problem.reaction is not None:
            J = J + fem.scatter(self.mesh, self._linearisation_blocks(u))
        bc = np.zeros(self.n)
        bc[self.dir_nodes] = 1.0
        bc[self.nl_nodes] = self._bc_derivative(u)
        return (-(sp.diags(self.interior) @ J) + sp.diags(bc)).tocsr()

    def step_norm(self, du):
        return norm(du, "H1", self.mesh)

    def initial_guess(self):
        """Dirichlet values on constrained nodes, their mean (or 1) elsewhere."""
        start = float(np.mean(self.dir_vals)) if len(self.dir_vals) else 1.0
        u = np.full(self.n, start)
        u[self.dir_nodes] = self.dir_vals
        return u


def _system(problem, mesh=None):
    if isinstance(problem, ProblemSpec):
        if mesh is None:
            raise ConfigError("a mesh is required to solve a ProblemSpec")
        return FemNonlinearSystem(mesh, problem)
    return problem


def residual(u, problem, mesh=None) -> np.ndarray:
    """Residual of ``problem`` (a ProblemSpec with ``mesh``, or any system) at ``u``."""
    return _system(problem, mesh).residual(u)


def _fd_step(config: NewtonConfig, u):
    if config.fd_step is not None:
        return config.fd_step
    return math.sqrt(np.finfo(float).eps) * (1.0 + float(np.linalg.norm(u)))


def jacobian(u, problem, mode: str = "analytic", mesh=None, fd_step: float | None = None):
    """Jacobian at ``u``: an assembled matrix, or a matrix-free finite-difference operator.

    The finite-difference operator is ``v -> (R(u + eps v) - R(u)) / eps`` with
    ``eps = fd_step / ||v||`` so the perturbation has length ``fd_step``.
    """
    system = _system(problem, mesh)
    if mode == "analytic":
        return system.jacobian(u)
    if mode != "finite-difference":
        raise ConfigError(f"unknown jacobian mode {mode!r}")
    if fd_step is not None and fd_step <= 0:
        raise ConfigError("fd_step must be positive")
    u = np.asarray(u, dtype=float)
    h = fd_step if fd_step is not None else _fd_step(NewtonConfig(), u)
    r0 = system.residual(u)

    def matvec(v):
        v = np.ravel(v)
        vn = np.linalg.norm(v)
        if vn == 0.0:
            return np.zeros_like(r0)
        eps = h / vn
        return (system.residual(u + eps * v) - r0) / eps

    return LinearOperator((len(r0), len(u)), matvec=matvec, dtype=float)


def _inner_solve(J, rhs, config: NewtonConfig):
    if config.linear_solver == "direct":
        if isinstance(J, LinearOperator):
            raise ConfigError("the direct inner solver needs the analytic Jacobian")
        if sp.issparse(J):
            return np.asarray(spsolve(J.tocsc(), rhs), dtype=float), 1
        return np.linalg.solve(J, rhs), 1
    # a difference Jacobian is only accurate to about sqrt(eps); tighter inner solves stall
    tol = config.inner_tol
    if isinstance(J, LinearOperator):
        tol = max(tol, FD_INNER_TOL)
    if config.linear_solver == "gmres":
        x, stats = gmres(J, rhs, tol=tol, max_iter=config.inner_max_iter, restart=config.restart)
    else:
        x, stats = bicgstab(J, rhs, tol=tol, max_iter=config.inner_max_iter)
    if not stats.converged:
        log.warning("inner %s stopped at relative residual %.3e after %d iterations",
                    config.linear_solver, stats.final_residual_norm, stats.iterations)
    return x, stats.iterations


def newton_krylov_solve(u0, problem, config: NewtonConfig | None = None, mesh=None):
    """Solve ``R(u) = 0`` from ``u0``.

    Iterates ``u <- u + damping * du`` with ``J du = -R`` until ``||R||_2 <=
    tol_residual`` or the step norm drops below ``tol_step``.  Running out of
    iterations is reported through ``trace.converged``, not raised.

    Returns
    -------
    u : ndarray
    trace : NewtonTrace
    """
    config = config or NewtonConfig()
    system = _system(problem, mesh)
    u = np.array(u0, dtype=float)
    if not np.all(np.isfinite(u)):
        raise NumericError("non-finite initial guess")
    R = system.residual(u)
    trace = NewtonTrace([NewtonState(0, u.copy(), R, float(np.linalg.norm(R)))])
    if trace[-1].residual_norm <= config.tol_residual:
        trace.converged, trace.reason = True, "residual"
        return u, trace
    for n in range(1, config.max_iter + 1):
        J = jacobian(u, system, config.jacobian_mode, fd_step=_fd_step(config, u)
                     if config.jacobian_mode == "finite-difference" else None)
        try:
            du, inner = _inner_solve(J, -R, config)
        except BreakdownError as exc:
            raise BreakdownError(f"Newton iteration {n}: {exc}") from exc
        step = config.damping * du
        u = u + step
        R = system.residual(u)
        state = NewtonState(n, u.copy(), R, float(np.linalg.norm(R)), system.step_norm(step), inner)
        trace.append(state)
        log.debug("newton %d: |R| = %.3e, step = %.3e, inner = %d", n, state.residual_norm, state.step_h1, inner)
        if not np.isfinite(state.residual_norm):
            trace.reason = "diverged"
            return u, trace
        if state.residual_norm <= config.tol_residual:
            trace.converged, trace.reason = True, "residual"
            return u, trace
        if state.step_h1 < config.tol_step:
            trace.converged, trace.reason = True, "step"
            return u, trace
    trace.reason = "max_iter"
    return u, trace
