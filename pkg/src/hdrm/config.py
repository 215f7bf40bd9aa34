"""Solver configuration records shared by the solver modules and the driver."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError

JACOBIAN_MODES = ("analytic", "finite-difference")
LINEAR_SOLVERS = ("gmres", "bicgstab", "direct")


class _Config:
    def __post_init__(self):
        self.validate()

    def validate(self):
        pass

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class NewtonConfig(_Config):
    """Outer Newton iteration and inner Krylov solve settings.

    ``tol_step`` is the H1 step tolerance; ``fd_step=None`` selects
    ``sqrt(eps) * (1 + ||u||)``.
    """

    tol_residual: float = 1e-10
    tol_step: float = 1e-12
    max_iter: int = 30
    jacobian_mode: str = "analytic"
    fd_step: float | None = None
    damping: float = 1.0
    linear_solver: str = "gmres"
    inner_tol: float = 1e-12
    inner_max_iter: int = 20000
    restart: int = 60

    def validate(self):
        if self.tol_residual <= 0 or self.tol_step <= 0:
            raise ConfigError("Newton tolerances must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.jacobian_mode not in JACOBIAN_MODES:
            raise ConfigError(f"jacobian_mode must be one of {JACOBIAN_MODES}")
        if self.fd_step is not None and self.fd_step <= 0:
            raise ConfigError("fd_step must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigError("damping must lie in (0, 1]")
        if self.linear_solver not in LINEAR_SOLVERS:
            raise ConfigError(f"linear_solver must be one of {LINEAR_SOLVERS}")
        if self.inner_tol <= 0 or self.restart < 1 or self.inner_max_iter < 1:
            raise ConfigError("invalid inner solver settings")


@dataclass
class RefinementConfig(_Config):
    """Adaptive loop settings.

    With ``marking_fraction`` set, the top fraction of elements by indicator
    is marked instead of thresholding against ``epsilon``.
    """

    epsilon: float = 1.0
    delta: float = 1e-4
    max_generations: int = 5
    marking_fraction: float | None = None
    max_nodes: int = 200_000

    def validate(self):
        if self.epsilon <= 0 or self.delta <= 0:
            raise ConfigError("epsilon and delta must be positive")
        if self.max_generations < 0:
            raise ConfigError("max_generations must be non-negative")
        if self.marking_fraction is not None and not 0.0 < self.marking_fraction <= 1.0:
            raise ConfigError("marking_fraction must lie in (0, 1]")


@dataclass
class HybridConfig(_Config):
    """Region partition and Schwarz coupling settings.

    ``fem_box`` is ``(xmin, ymin, xmax, ymax)``: elements whose centroid lies
    inside form the finite-element region.  Otherwise ``fem_threshold`` on the
    gradient indicator of a preliminary DRM solve decides.
    """

    fem_box: tuple | None = None
    fem_threshold: float | None = None
    overlap: int = 1
    coupling_tol: float = 1e-6
    max_sweeps: int = 200
    bem_subdivide: int = 1
    internal_grid: int = 6
    adapt_generations: int = 0
    adapt_fraction: float = 0.3

    def validate(self):
        if self.fem_box is not None:
            box = tuple(self.fem_box)
            if len(box) != 4 or not (box[2] > box[0] and box[3] > box[1]):
                raise ConfigError("fem_box must be 'xmin ymin xmax ymax' with positive extent")
        if self.overlap < 1:
            raise ConfigError("overlap must be at least one element layer")
        if self.coupling_tol <= 0 or self.max_sweeps < 1:
            raise ConfigError("invalid coupling settings")
        if self.bem_subdivide < 1 or self.internal_grid < 0:
            raise ConfigError("invalid boundary discretisation settings")
        if self.adapt_generations < 0 or not 0.0 < self.adapt_fraction <= 1.0:
            raise ConfigError("invalid hybrid adaptivity settings")


@dataclass
class BenchConfig(_Config):
    """Benchmark settings for the iterative baselines.

    ``max_iter`` is the sweep budget of Gauss-Seidel and dynamic relaxation;
    ``tol`` their relative residual stopping tolerance.
    """

    max_iter: int = 2000
    tol: float = 1e-12

    def validate(self):
        if self.max_iter < 1 or self.tol <= 0:
            raise ConfigError("invalid benchmark budget")
