"""Bounded test functions on tagged state spaces.

All functions here are evaluated on regular points only; the cemetery
convention ``f(CEMETERY) = 0`` is applied by the callers. A function with
``tag=None`` ignores the copy index, i.e. it is of the form ``h ∘ π``.
Instances are plain picklable objects so they can cross process boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import ConfigurationError
from .spaces import CEMETERY, SpacePoint


class StateFunction:
    sup_norm: float = 0.0

    def __call__(self, p: SpacePoint) -> float:  # pragma: no cover - abstract
        raise NotImplementedError

    def value_at(self, p) -> float:
        """``self(p)`` with the cemetery convention applied."""
        if p is CEMETERY:
            return 0.0
        return self(p)

    def vector(self, tag: int, labels) -> np.ndarray:
        return np.array([self(SpacePoint(tag, lab)) for lab in labels], dtype=float)

    @property
    def is_constant(self) -> bool:
        return False


@dataclass(frozen=True)
class Const(StateFunction):
    c: float = 1.0

    def __call__(self, p):
        return self.c

    @property
    def sup_norm(self):
        return abs(self.c)

    @property
    def is_constant(self):
        return True


@dataclass(frozen=True)
class Indicator(StateFunction):
    values: frozenset = field(default_factory=frozenset)
    tag: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", frozenset(self.values))

    def __call__(self, p):
        if self.tag is not None and p.tag != self.tag:
            return 0.0
        return 1.0 if p.value in self.values else 0.0

    @property
    def sup_norm(self):
        return 1.0


@dataclass(frozen=True)
class Table(StateFunction):
    """Values per label; labels missing from the table map to ``default``."""

    table: tuple = ()
    tag: int | None = None
    default: float = 0.0

    def __post_init__(self):
        items = self.table.items() if isinstance(self.table, Mapping) else self.table
        object.__setattr__(self, "table", tuple(sorted(((k, float(v)) for k, v in items), key=repr)))
        object.__setattr__(self, "_lookup", dict(self.table))

    def __call__(self, p):
        if self.tag is not None and p.tag != self.tag:
            return 0.0
        return self._lookup.get(p.value, self.default)

    @property
    def sup_norm(self):
        return max([abs(self.default)] + [abs(v) for _, v in self.table])


@dataclass(frozen=True)
class IntervalIndicator(StateFunction):
    lo: float
    hi: float
    tag: int | None = None

    def __call__(self, p):
        if self.tag is not None and p.tag != self.tag:
            return 0.0
        return 1.0 if self.lo <= p.value <= self.hi else 0.0

    @property
    def sup_norm(self):
        return 1.0


def function_from_json(doc: Any) -> StateFunction:
    """Parse ``{"const": c}``, ``{"indicator": [...]}``, ``{"table": {...}}`` or
    ``{"interval": [lo, hi]}``, each with an optional ``"tag"``."""
    if isinstance(doc, (int, float)) and not isinstance(doc, bool):
        return Const(float(doc))
    if not isinstance(doc, Mapping):
        raise ConfigurationError(f"cannot parse test function from {doc!r}")
    tag = doc.get("tag")
    if "const" in doc:
        return Const(float(doc["const"]))
    if "indicator" in doc:
        vals = doc["indicator"]
        if not isinstance(vals, (list, tuple)):
            vals = [vals]
        return Indicator(frozenset(vals), tag)
    if "table" in doc:
        return Table(dict(doc["table"]), tag, float(doc.get("default", 0.0)))
    if "interval" in doc:
        lo, hi = doc["interval"]
        return IntervalIndicator(float(lo), float(hi), tag)
    raise ConfigurationError(f"unknown test function {doc!r}")


def function_to_json(f: StateFunction) -> dict:
    if isinstance(f, Const):
        return {"const": f.c}
    out: dict
    if isinstance(f, Indicator):
        out = {"indicator": sorted(f.values, key=repr)}
    elif isinstance(f, Table):
        out = {"table": dict(f.table), "default": f.default}
    elif isinstance(f, IntervalIndicator):
        out = {"interval": [f.lo, f.hi]}
    else:
        return {"repr": repr(f)}
    if f.tag is not None:
        out["tag"] = f.tag
    return out
