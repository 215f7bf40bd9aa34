"""Shared problem builders for the test suite."""

from hdrm.problem import BoundaryCondition, ProblemSpec, parse_field

SEGMENTS = ("bottom", "right", "top", "left")


def problem(exact, source="from_exact", kinds=None, **kw):
    """Rectangle problem with ``exact`` (field text) and per-segment kinds."""
    kinds = kinds or {}
    bcs = {s: BoundaryCondition(kinds.get(s, "dirichlet")) for s in SEGMENTS}
    src = source if source == "from_exact" else parse_field(source)
    return ProblemSpec(exact=None if exact is None else parse_field(exact), source=src, bcs=bcs, **kw)
