"""Problem description: operator coefficients, source, boundary conditions.

The solved equation is

    -div(A(x, u) grad u) + B(x, u) . grad u + C(x, u) = f(x)   in the domain,

with, on every labelled boundary segment, one of

    u = g                      (dirichlet)
    grad u . n = g             (neumann, n the outward normal)
    coeff * u**power = h       (nonlinear power-law condition)

Coefficient and solution fields are small named objects so that a problem can
be written to and read back from a text file without loss.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .config import BenchConfig, HybridConfig, NewtonConfig, RefinementConfig
from .errors import ConfigError, ValidationError

# ----------------------------------------------------------------------------
# Scalar fields with analytic derivatives (exact solutions and sources)


class ScalarField:
    """A closed-form scalar field with value, gradient and Hessian."""

    name = ""
    defaults: dict = {}

    def __init__(self, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ConfigError(f"{self.name}: unknown parameter(s) {sorted(unknown)}")
        self.params = {**self.defaults, **{k: float(v) for k, v in params.items()}}

    def __call__(self, x, y):
        return self.value(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def value(self, x, y):
        raise NotImplementedError

    def grad(self, x, y):
        raise NotImplementedError

    def hessian(self, x, y):
        """Return ``(u_xx, u_xy, u_yy)``."""
        raise NotImplementedError

    def laplacian(self, x, y):
        hxx, _, hyy = self.hessian(x, y)
        return hxx + hyy

    def spec(self) -> str:
        args = " ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{self.name} {args}".strip()

    def __add__(self, other):
        return SumField([self, other])

    def __eq__(self, other):
        return isinstance(other, ScalarField) and self.spec() == other.spec()

    def __hash__(self):
        return hash(self.spec())

    def __repr__(self):
        return f"<{self.spec()}>"


class SumField(ScalarField):
    name = "sum"

    def __init__(self, terms):
        self.terms = []
        for t in terms:
            self.terms += t.terms if isinstance(t, SumField) else [t]
        self.params = {}

    def value(self, x, y):
        return sum(t.value(x, y) for t in self.terms)

    def grad(self, x, y):
        gs = [t.grad(x, y) for t in self.terms]
        return sum(g[0] for g in gs), sum(g[1] for g in gs)

    def hessian(self, x, y):
        hs = [t.hessian(x, y) for t in self.terms]
        return tuple(sum(h[i] for h in hs) for i in range(3))

    def spec(self):
        return " + ".join(t.spec() for t in self.terms)


class Constant(ScalarField):
    name = "constant"
    defaults = {"c": 0.0}

    def value(self, x, y):
        return np.full(np.broadcast(x, y).shape, self.params["c"])

    def grad(self, x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        return z, z.copy()

    def hessian(self, x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        return z, z.copy(), z.copy()


class Poly2(ScalarField):
    """a + b x + c y + d x^2 + e x y + f y^2"""

    name = "poly2"
    defaults = dict(a=0.0, b=0.0, c=0.0, d=0.0, e=0.0, f=0.0)

    def value(self, x, y):
        p = self.params
        return p["a"] + p["b"] * x + p["c"] * y + p["d"] * x * x + p["e"] * x * y + p["f"] * y * y

    def grad(self, x, y):
        p = self.params
        return p["b"] + 2 * p["d"] * x + p["e"] * y, p["c"] + p["e"] * x + 2 * p["f"] * y

    def hessian(self, x, y):
        p = self.params
        one = np.ones(np.broadcast(x, y).shape)
        return 2 * p["d"] * one, p["e"] * one, 2 * p["f"] * one


class Linear(Poly2):
    """a + b x + c y"""

    name = "linear"
    defaults = dict(a=0.0, b=0.0, c=0.0)

    def __init__(self, **params):
        super().__init__(**params)
        self.params.update(d=0.0, e=0.0, f=0.0)

    def spec(self):
        p = self.params
        return f"linear a={p['a']!r} b={p['b']!r} c={p['c']!r}"


class SinSin(ScalarField):
    """amp sin(k pi x) sin(k pi y)"""

    name = "sin_sin"
    defaults = {"k": 1.0, "amp": 1.0}

    def value(self, x, y):
        w = self.params["k"] * np.pi
        return self.params["amp"] * np.sin(w * x) * np.sin(w * y)

    def grad(self, x, y):
        w = self.params["k"] * np.pi
        a = self.params["amp"] * w
        return a * np.cos(w * x) * np.sin(w * y), a * np.sin(w * x) * np.cos(w * y)

    def hessian(self, x, y):
        w = self.params["k"] * np.pi
        a = self.params["amp"] * w * w
        s = np.sin(w * x) * np.sin(w * y)
        return -a * s, a * np.cos(w * x) * np.cos(w * y), -a * s


class LogSource(ScalarField):
    """strength * ln(r), r the distance to (cx, cy); harmonic away from the centre."""

    name = "log_source"
    defaults = {"cx": 0.0, "cy": 0.0, "strength": 1.0}

    def value(self, x, y):
        p = self.params
        return 0.5 * p["strength"] * np.log((x - p["cx"]) ** 2 + (y - p["cy"]) ** 2)

    def grad(self, x, y):
        p = self.params
        dx, dy = x - p["cx"], y - p["cy"]
        r2 = dx * dx + dy * dy
        return p["strength"] * dx / r2, p["strength"] * dy / r2

    def hessian(self, x, y):
        p = self.params
        dx, dy = x - p["cx"], y - p["cy"]
        r2 = dx * dx + dy * dy
        s = p["strength"] / (r2 * r2)
        return s * (dy * dy - dx * dx), -2 * s * dx * dy, s * (dx * dx - dy * dy)


class Gaussian(ScalarField):
    """amp exp(-|x - c|^2 / (2 width^2))"""

    name = "gaussian"
    defaults = {"cx": 0.5, "cy": 0.5, "width": 0.1, "amp": 1.0}

    def value(self, x, y):
        p = self.params
        return p["amp"] * np.exp(-((x - p["cx"]) ** 2 + (y - p["cy"]) ** 2) / (2 * p["width"] ** 2))

    def grad(self, x, y):
        p = self.params
        v = self.value(x, y)
        w2 = p["width"] ** 2
        return -(x - p["cx"]) / w2 * v, -(y - p["cy"]) / w2 * v

    def hessian(self, x, y):
        p = self.params
        v = self.value(x, y)
        w2 = p["width"] ** 2
        dx, dy = x - p["cx"], y - p["cy"]
        return (dx * dx / w2 - 1) / w2 * v, dx * dy / (w2 * w2) * v, (dy * dy / w2 - 1) / w2 * v


FIELDS = {cls.name: cls for cls in (Constant, Poly2, Linear, SinSin, LogSource, Gaussian)}


def parse_field(text: str) -> ScalarField:
    """Parse ``"name k=v ... + name k=v ..."`` into a field."""
    terms = []
    for chunk in re.split(r"(?<![eE])\+", text):
        words = chunk.split()
        if not words:
            raise ConfigError(f"empty field term in {text!r}")
        name, args = words[0], words[1:]
        if name not in FIELDS:
            raise ConfigError(f"unknown field {name!r}; known: {sorted(FIELDS)}")
        params = {}
        for a in args:
            key, sep, val = a.partition("=")
            if not sep:
                raise ConfigError(f"expected key=value, got {a!r}")
            try:
                params[key] = float(val)
            except ValueError:
                raise ConfigError(f"malformed number {val!r} for {name}.{key}") from None
        terms.append(FIELDS[name](**params))
    return terms[0] if len(terms) == 1 else SumField(terms)


# ----------------------------------------------------------------------------
# Operator coefficients


class Coefficient:
    name = ""
    defaults: dict = {}

    def __init__(self, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ConfigError(f"{self.name}: unknown parameter(s) {sorted(unknown)}")
        self.params = {**self.defaults, **{k: float(v) for k, v in params.items()}}

    def spec(self):
        args = " ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{self.name} {args}".strip()

    def __eq__(self, other):
        return type(self) is type(other) and self.params == other.params

    def __hash__(self):
        return hash(self.spec())

    def __repr__(self):
        return f"<{self.spec()}>"


class Diffusion(Coefficient):
    """Diffusion tensor A(x, u); ``tensor`` returns shape (..., 2, 2)."""

    depends_on_u = False
    is_identity = False

    def tensor(self, x, y, u):
        raise NotImplementedError

    def tensor_du(self, x, y, u):
        """dA/du, shape (..., 2, 2); zero unless ``depends_on_u``."""
        return np.zeros(np.broadcast(x, y, u).shape + (2, 2))

    def flux_divergence(self, exact: ScalarField, x, y):
        """div(A(x, u) grad u) for a closed-form ``u``."""
        raise NotImplementedError


class Isotropic(Diffusion):
    name = "isotropic"
    defaults = {"k": 1.0}

    @property
    def is_identity(self):
        return self.params["k"] == 1.0

    def tensor(self, x, y, u):
        shape = np.broadcast(x, y, u).shape
        return self.params["k"] * np.broadcast_to(np.eye(2), shape + (2, 2))

    def flux_divergence(self, exact, x, y):
        return self.params["k"] * exact.laplacian(x, y)


class Conductivity(Diffusion):
    """Temperature-dependent conductivity (k0 + beta u) I."""

    name = "conductivity"
    defaults = {"k0": 1.0, "beta": 0.0}
    depends_on_u = True

    def tensor(self, x, y, u):
        k = self.params["k0"] + self.params["beta"] * np.asarray(u, dtype=float)
        k = np.broadcast_to(k, np.broadcast(x, y, u).shape)
        return k[..., None, None] * np.eye(2)

    def tensor_du(self, x, y, u):
        shape = np.broadcast(x, y, u).shape
        return self.params["beta"] * np.broadcast_to(np.eye(2), shape + (2, 2))

    def flux_divergence(self, exact, x, y):
        gx, gy = exact.grad(x, y)
        k = self.params["k0"] + self.params["beta"] * exact.value(x, y)
        return k * exact.laplacian(x, y) + self.params["beta"] * (gx * gx + gy * gy)


class Anisotropic(Diffusion):
    name = "anisotropic"
    defaults = {"kxx": 1.0, "kxy": 0.0, "kyy": 1.0}

    def tensor(self, x, y, u):
        p = self.params
        K = np.array([[p["kxx"], p["kxy"]], [p["kxy"], p["kyy"]]])
        return np.broadcast_to(K, np.broadcast(x, y, u).shape + (2, 2))

    def flux_divergence(self, exact, x, y):
        p = self.params
        hxx, hxy, hyy = exact.hessian(x, y)
        return p["kxx"] * hxx + 2 * p["kxy"] * hxy + p["kyy"] * hyy


class ConstantAdvection(Coefficient):
    name = "constant"
    defaults = {"bx": 0.0, "by": 0.0}

    def vector(self, x, y, u):
        shape = np.broadcast(x, y, u).shape
        return np.broadcast_to(np.array([self.params["bx"], self.params["by"]]), shape + (2,))


class LinearReaction(Coefficient):
    """C(x, u) = c u + c0"""

    name = "linear"
    defaults = {"c": 0.0, "c0": 0.0}

    def value(self, x, y, u):
        return self.params["c"] * np.asarray(u, dtype=float) + self.params["c0"] + 0.0 * x

    def derivative(self, x, y, u):
        return np.full(np.broadcast(x, y, u).shape, self.params["c"])


DIFFUSIONS = {c.name: c for c in (Isotropic, Conductivity, Anisotropic)}
ADVECTIONS = {c.name: c for c in (ConstantAdvection,)}
REACTIONS = {c.name: c for c in (LinearReaction,)}


def parse_coefficient(text: str, registry: dict, what: str):
    words = text.split()
    if not words or words[0] == "none":
        return None
    if words[0] == "identity" and what == "diffusion":
        return Isotropic(k=1.0)
    if words[0] not in registry:
        raise ConfigError(f"unknown {what} {words[0]!r}; known: {sorted(registry)}")
    params = {}
    for a in words[1:]:
        key, sep, val = a.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value, got {a!r}")
        try:
            params[key] = float(val)
        except ValueError:
            raise ConfigError(f"malformed number {val!r} for {what}.{key}") from None
    return registry[words[0]](**params)


# ----------------------------------------------------------------------------
# Boundary conditions


class PowerLaw:
    """Boundary operator B(u) = coeff * u**power."""

    def __init__(self, power: float, coeff: float = 1.0):
        self.power = float(power)
        self.coeff = float(coeff)

    def __call__(self, u):
        return self.coeff * np.power(u, self.power)

    def derivative(self, u):
        return self.coeff * self.power * np.power(u, self.power - 1.0)

    def inverse(self, h):
        return np.power(np.asarray(h, dtype=float) / self.coeff, 1.0 / self.power)


@dataclass
class NonlinearBc:
    """Nonlinear condition ``B(u) = h(x)`` on the segments labelled ``marker``.

    ``B`` and ``dB_du`` act elementwise on arrays of trace values.  The
    derivative is checked against central differences at ``probes`` on
    construction.
    """

    B: object
    dB_du: object
    h: object
    marker: str = ""
    probes: tuple = (0.5, 1.0, 2.0)

    def __post_init__(self):
        u = np.asarray(self.probes, dtype=float)
        eps = 1e-6 * np.maximum(1.0, np.abs(u))
        fd = (self.B(u + eps) - self.B(u - eps)) / (2 * eps)
        an = self.dB_du(u)
        rel = np.abs(fd - an) / np.maximum(np.abs(an), 1e-12)
        if np.any(rel >= 1e-5) or not np.all(np.isfinite(rel)):
            raise ConfigError(f"dB_du is inconsistent with B on marker {self.marker!r} (rel. error {rel.max():.2e})")

    def residual(self, u, x, y):
        return self.B(u) - self.h(x, y)


@dataclass
class BoundaryCondition:
    """One condition per boundary segment label.

    ``value`` is either a :class:`ScalarField` or the string ``"exact"``,
    meaning data derived from the problem's exact solution.
    """

    kind: str
    value: object = "exact"
    power: float = 4.0
    coeff: float = 1.0

    KINDS = ("dirichlet", "neumann", "nonlinear")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"boundary condition kind must be one of {self.KINDS}, got {self.kind!r}")

    def spec_lines(self):
        lines = [f"kind = {self.kind}"]
        value = self.value if isinstance(self.value, str) else self.value.spec()
        lines.append(f"value = {value}")
        if self.kind == "nonlinear":
            lines += [f"power = {self.power!r}", f"coeff = {self.coeff!r}"]
        return lines


@dataclass
class ProblemSpec:
    corners: tuple = (0.0, 0.0, 1.0, 1.0)
    nx: int = 8
    ny: int = 8
    diffusion: Diffusion | None = None
    advection: ConstantAdvection | None = None
    reaction: LinearReaction | None = None
    source: object = "from_exact"          # ScalarField or "from_exact"
    exact: ScalarField | None = None
    bcs: dict = field(default_factory=dict)
    methods: list = field(default_factory=lambda: ["hdrm", "gauss_seidel", "dynamic_relaxation", "dual_reciprocity"])
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    adapt: RefinementConfig = field(default_factory=RefinementConfig)
    hybrid: HybridConfig = field(default_factory=HybridConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    name: str = "problem"

    # -- derived callables ------------------------------------------------------

    @property
    def laplace_type(self) -> bool:
        """Principal part is the identity and there are no lower-order terms."""
        d = self.diffusion
        return (d is None or d.is_identity) and self.advection is None and self.reaction is None

    def f(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if isinstance(self.source, ScalarField):
            return self.source(x, y)
        if self.source != "from_exact":
            raise ConfigError(f"unknown source {self.source!r}")
        if self.exact is None:
            raise ConfigError("source 'from_exact' needs an exact solution")
        return self.manufactured_source(x, y)

    def manufactured_source(self, x, y):
        u = self.exact
        d = self.diffusion or Isotropic(k=1.0)
        out = -d.flux_divergence(u, x, y)
        if self.advection is not None:
            gx, gy = u.grad(x, y)
            b = self.advection.vector(x, y, u.value(x, y))
            out = out + b[..., 0] * gx + b[..., 1] * gy
        if self.reaction is not None:
            out = out + self.reaction.value(x, y, u.value(x, y))
        return out

    def bc_value(self, marker, x, y, nx=None, ny=None):
        """Data g (or h) of the condition on ``marker`` at points with normals."""
        bc = self.bcs[marker]
        if isinstance(bc.value, ScalarField):
            return bc.value(x, y)
        if bc.value != "exact" or self.exact is None:
            raise ConfigError(f"boundary {marker!r}: value 'exact' needs an exact solution")
        u = self.exact
        if bc.kind == "dirichlet":
            return u(x, y)
        if bc.kind == "neumann":
            # conormal flux n . A(x, u) grad u
            gx, gy = u.grad(x, y)
            if self.diffusion is None or self.diffusion.is_identity:
                return gx * nx + gy * ny
            A = self.diffusion.tensor(x, y, u(x, y))
            return (nx * (A[..., 0, 0] * gx + A[..., 0, 1] * gy)
                    + ny * (A[..., 1, 0] * gx + A[..., 1, 1] * gy))
        return bc.coeff * np.power(u(x, y), bc.power)

    def nonlinear_bc(self, marker) -> NonlinearBc:
        bc = self.bcs[marker]
        op = PowerLaw(bc.power, bc.coeff)
        return NonlinearBc(op, op.derivative, lambda x, y, m=marker: self.bc_value(m, x, y), marker)

    def validate(self, markers) -> None:
        errors = [f"missing boundary condition for segment {m!r}" for m in markers if m not in self.bcs]
        errors += [f"boundary condition for unknown segment {m!r}" for m in self.bcs if m not in markers]
        if errors:
            raise ValidationError(errors)
