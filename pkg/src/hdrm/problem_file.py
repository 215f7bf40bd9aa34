"""Problem files: a flat, sectioned ``key = value`` text format.

Example::

    [problem]
    name = bump
    corners = 0.0 0.0 1.0 1.0
    nx = 16
    ny = 16
    exact = sinsin
    source = from_exact

    [bc.bottom]
    kind = dirichlet
    value = exact

    [hybrid]
    fem_box = 0.0 0.0 0.5 0.5

Sections are ``problem``, ``bc.<segment>`` (one per boundary segment),
``newton``, ``adapt``, ``hybrid`` and ``bench``.  Lines starting with ``#``
or ``;`` are comments.  Parsing collects every problem it finds before
raising :class:`ValidationError`.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .config import BenchConfig, HybridConfig, NewtonConfig, RefinementConfig
from .errors import ConfigError, ValidationError
from .problem import (ADVECTIONS, DIFFUSIONS, REACTIONS, BoundaryCondition, ProblemSpec, ScalarField,
                      parse_coefficient, parse_field)

RECT_SEGMENTS = ("bottom", "right", "top", "left")
CONFIG_SECTIONS = {"newton": NewtonConfig, "adapt": RefinementConfig, "hybrid": HybridConfig, "bench": BenchConfig}
BC_KEYS = ("kind", "value", "power", "coeff")
KNOWN_METHODS = ("hdrm", "gauss_seidel", "dynamic_relaxation", "dual_reciprocity")


def _scan(text):
    """Split into ``{section: {key: (value, line)}}`` plus section header lines and errors."""
    sections, headers, errors = {}, {}, []
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                errors.append(f"line {lineno}: malformed section header {line!r}")
                current = None
                continue
            current = line[1:-1].strip()
            if current in sections:
                errors.append(f"line {lineno}: duplicate section [{current}] (first at line {headers[current]})")
            else:
                sections[current] = {}
                headers[current] = lineno
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        if current is None:
            errors.append(f"line {lineno}: key {key!r} outside any section")
            continue
        if key in sections[current]:
            errors.append(f"line {lineno}: duplicate key {key!r} in [{current}]")
            continue
        sections[current][key] = (value, lineno)
    return sections, headers, errors


def _number(text, kind):
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"malformed number {text!r}") from None


def _coerce(text, annotation):
    """Convert ``text`` for a dataclass field annotated ``annotation``."""
    optional = "None" in annotation
    if optional and text.lower() == "none":
        return None
    base = annotation.split("|")[0].strip()
    if base == "float":
        return _number(text, float)
    if base == "int":
        return _number(text, int)
    if base == "tuple":
        return tuple(_number(t, float) for t in text.replace(",", " ").split())
    return text


def _config(cls, entries, where, errors):
    """Build config ``cls`` from ``{key: (text, line)}`` collecting errors."""
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    values = {}
    for key, (text, line) in entries.items():
        if key not in types:
            errors.append(f"line {line}: unknown key {key!r} in [{where}]")
            continue
        try:
            values[key] = _coerce(text, types[key])
        except ConfigError as exc:
            errors.append(f"line {line}: {key}: {exc}")
    try:
        return cls(**values)
    except ConfigError as exc:
        errors.append(f"[{where}]: {exc}")
        return cls()


def _problem_entry(key, text, errors, line):
    try:
        if key == "name":
            return text
        if key == "corners":
            corners = tuple(_number(t, float) for t in text.replace(",", " ").split())
            if len(corners) != 4 or not (corners[2] > corners[0] and corners[3] > corners[1]):
                raise ConfigError("corners must be 'xmin ymin xmax ymax' with xmax > xmin and ymax > ymin")
            return corners
        if key in ("nx", "ny"):
            n = _number(text, int)
            if n < 1:
                raise ConfigError("must be a positive integer")
            return n
        if key == "exact":
            return None if text.lower() == "none" else parse_field(text)
        if key == "source":
            return "from_exact" if text == "from_exact" else parse_field(text)
        if key == "diffusion":
            return parse_coefficient(text, DIFFUSIONS, "diffusion")
        if key == "advection":
            return parse_coefficient(text, ADVECTIONS, "advection")
        if key == "reaction":
            return parse_coefficient(text, REACTIONS, "reaction")
        if key == "methods":
            methods = text.replace(",", " ").split()
            bad = [m for m in methods if m not in KNOWN_METHODS]
            if bad:
                raise ConfigError(f"unknown method(s) {bad}; known: {list(KNOWN_METHODS)}")
            return methods
    except ConfigError as exc:
        errors.append(f"line {line}: {key}: {exc}")
        return None
    errors.append(f"line {line}: unknown key {key!r} in [problem]")
    return None


def _boundary_condition(marker, entries, header, errors):
    kw = {}
    for key, (text, line) in entries.items():
        if key not in BC_KEYS:
            errors.append(f"line {line}: unknown key {key!r} in [bc.{marker}]")
            continue
        try:
            if key == "kind":
                kw["kind"] = text
            elif key == "value":
                kw["value"] = "exact" if text == "exact" else parse_field(text)
            else:
                kw[key] = _number(text, float)
        except ConfigError as exc:
            errors.append(f"line {line}: {key}: {exc}")
    if "kind" not in kw:
        errors.append(f"line {header}: [bc.{marker}] has no 'kind'")
        return None
    try:
        return BoundaryCondition(**kw)
    except ConfigError as exc:
        errors.append(f"line {entries['kind'][1]}: {exc}")
        return None


def parse_problem_text(text: str) -> ProblemSpec:
    """Parse problem-file ``text``; raises :class:`ValidationError` listing every error."""
    sections, headers, errors = _scan(text)
    kwargs = {}
    if "problem" not in sections:
        errors.append("missing [problem] section")
    for key, (value, line) in sections.get("problem", {}).items():
        parsed = _problem_entry(key, value, errors, line)
        if parsed is not None:
            kwargs[key] = parsed
    bcs = {}
    for name, entries in sections.items():
        if name == "problem" or name in CONFIG_SECTIONS:
            continue
        if name.startswith("bc."):
            bc = _boundary_condition(name[3:], entries, headers[name], errors)
            if bc is not None:
                bcs[name[3:]] = bc
            continue
        errors.append(f"line {headers[name]}: unknown section [{name}]")
    for name, cls in CONFIG_SECTIONS.items():
        kwargs[name] = _config(cls, sections.get(name, {}), name, errors)
    for seg in RECT_SEGMENTS:
        if seg not in bcs and f"bc.{seg}" not in sections:
            errors.append(f"missing boundary condition for segment {seg!r}")
    for name in sections:
        if name.startswith("bc.") and name[3:] not in RECT_SEGMENTS:
            errors.append(f"line {headers[name]}: boundary condition for unknown segment {name[3:]!r}; "
                          f"segments are {list(RECT_SEGMENTS)}")
    exact_needed = kwargs.get("source", "from_exact") == "from_exact" or any(
        bc.value == "exact" for bc in bcs.values())
    exact_text = sections.get("problem", {}).get("exact", ("none", 0))[0]
    if exact_needed and exact_text.lower() == "none":
        errors.append("an exact solution is required by 'source = from_exact' or 'value = exact'")
    if errors:
        raise ValidationError(errors)
    return ProblemSpec(bcs=bcs, **kwargs)


def parse_problem(path) -> ProblemSpec:
    """Read and validate a problem file."""
    p = Path(path)
    if not p.is_file():
        raise ValidationError([f"{p}: no such file"])
    try:
        text = p.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise ValidationError([f"{p}: {exc}"]) from None
    return parse_problem_text(text)


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return " ".join(repr(float(t)) for t in v)
    return str(v)


def format_problem(spec: ProblemSpec) -> str:
    """Serialise ``spec``; ``parse_problem_text(format_problem(s)) == s``."""
    def coef(c):
        return "none" if c is None else c.spec()

    lines = ["[problem]",
             f"name = {spec.name}",
             f"corners = {_format_value(tuple(spec.corners))}",
             f"nx = {spec.nx}",
             f"ny = {spec.ny}",
             f"exact = {'none' if spec.exact is None else spec.exact.spec()}",
             f"source = {spec.source.spec() if isinstance(spec.source, ScalarField) else spec.source}",
             f"diffusion = {coef(spec.diffusion)}",
             f"advection = {coef(spec.advection)}",
             f"reaction = {coef(spec.reaction)}",
             f"methods = {' '.join(spec.methods)}"]
    for marker in sorted(spec.bcs):
        lines += ["", f"[bc.{marker}]"] + spec.bcs[marker].spec_lines()
    for name in CONFIG_SECTIONS:
        cfg = getattr(spec, name)
        lines += ["", f"[{name}]"]
        lines += [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]
    return "\n".join(lines) + "\n"


def write_problem(spec: ProblemSpec, path) -> None:
    Path(path).write_text(format_problem(spec))
