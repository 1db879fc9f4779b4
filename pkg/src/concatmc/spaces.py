"""State spaces: finite label sets, real intervals, tagged copies and the cemetery.

A point of the composite state space is either the cemetery ``CEMETERY`` or a
``SpacePoint(tag, value)``. Tag ``0`` is reserved for the projected (tag-erased)
space of a pasted process; stage copies carry tags ``n >= 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Hashable, Iterable, Sequence, Union

from .errors import ConfigurationError

__all__ = [
    "SpacePoint",
    "Cemetery",
    "CEMETERY",
    "FiniteLabels",
    "RealInterval",
    "StateSpaceDesc",
    "TaggedSpace",
    "Region",
    "contains",
    "union_membership",
    "space_from_json",
    "space_to_json",
    "shared_region",
    "difference_region",
]


class Cemetery:
    """The isolated absorbing point adjoined to every state space."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "CEMETERY"

    def __reduce__(self):
        return (Cemetery, ())

    @property
    def is_cemetery(self) -> bool:
        return True


CEMETERY = Cemetery()


@dataclass(frozen=True)
class SpacePoint:
    """A regular point: copy index ``tag`` and a label or real coordinate."""

    tag: int
    value: Hashable

    is_cemetery = False

    def untagged(self) -> "SpacePoint":
        return SpacePoint(0, self.value)

    def retag(self, tag: int) -> "SpacePoint":
        return SpacePoint(tag, self.value)


Point = Union[SpacePoint, Cemetery]


@dataclass(frozen=True)
class FiniteLabels:
    labels: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        if not labels:
            raise ConfigurationError("label set must be non-empty")
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"labels must be distinct: {labels!r}")
        object.__setattr__(self, "labels", labels)

    kind = "labels"

    def contains_value(self, value) -> bool:
        try:
            return value in self._index
        except TypeError:
            return False

    @property
    def _index(self) -> dict:
        # cached lazily; frozen dataclass so go through object.__setattr__
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {lab: i for i, lab in enumerate(self.labels)}
            object.__setattr__(self, "_idx", idx)
        return idx

    def index(self, value) -> int:
        return self._index[value]

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class RealInterval:
    lo: float
    hi: float
    closed_ends: tuple = (True, True)

    kind = "interval"

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not lo < hi:
            raise ConfigurationError(f"interval needs lo < hi, got [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "closed_ends", tuple(bool(c) for c in self.closed_ends))

    def contains_value(self, value) -> bool:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        x = float(value)
        lo_ok = x >= self.lo if self.closed_ends[0] else x > self.lo
        hi_ok = x <= self.hi if self.closed_ends[1] else x < self.hi
        return lo_ok and hi_ok


StateSpaceDesc = Union[FiniteLabels, RealInterval]


@dataclass(frozen=True)
class TaggedSpace:
    """The copy ``{tag} x base``; different tags are disjoint whatever the bases."""

    tag: int
    base: StateSpaceDesc

    def __post_init__(self):
        if not isinstance(self.tag, int) or self.tag < 0:
            raise ConfigurationError(f"tag must be a non-negative integer, got {self.tag!r}")

    def point(self, value) -> SpacePoint:
        return SpacePoint(self.tag, value)

    def retag(self, tag: int) -> "TaggedSpace":
        return TaggedSpace(tag, self.base)


def contains(space: TaggedSpace, p: Point) -> bool:
    if p is CEMETERY or not isinstance(p, SpacePoint):
        return False
    return p.tag == space.tag and space.base.contains_value(p.value)


def union_membership(spaces: Sequence[TaggedSpace], p: Point) -> int | None:
    """Tag of the unique space in ``spaces`` containing ``p``, or ``None``."""
    seen: set[int] = set()
    for s in spaces:
        if s.tag in seen:
            raise ConfigurationError(f"duplicate tag {s.tag} in union")
        seen.add(s.tag)
    for s in spaces:
        if contains(s, p):
            return s.tag
    return None


@dataclass(frozen=True)
class Region:
    """A finite union of base-space pieces, used as a first-entry target.

    ``tag=None`` matches any copy (a condition on the projected value only).
    """

    pieces: tuple = ()
    tag: int | None = None

    def contains_value(self, value) -> bool:
        return any(piece.contains_value(value) for piece in self.pieces)

    def contains_point(self, p: Point) -> bool:
        if p is CEMETERY:
            return False
        if self.tag is not None and p.tag != self.tag:
            return False
        return self.contains_value(p.value)

    @property
    def is_empty(self) -> bool:
        return not self.pieces

    def labels(self) -> tuple:
        out: list = []
        for piece in self.pieces:
            if not isinstance(piece, FiniteLabels):
                raise ConfigurationError("region is not a finite label set")
            out.extend(piece.labels)
        return tuple(out)

    @classmethod
    def of_labels(cls, labels: Iterable, tag: int | None = None) -> "Region":
        labels = tuple(labels)
        return cls((FiniteLabels(labels),) if labels else (), tag)


def shared_region(a: StateSpaceDesc, b: StateSpaceDesc) -> Region:
    """``a ∩ b`` for two descriptors of the same kind."""
    if isinstance(a, FiniteLabels) and isinstance(b, FiniteLabels):
        return Region.of_labels(lab for lab in a.labels if b.contains_value(lab))
    if isinstance(a, RealInterval) and isinstance(b, RealInterval):
        lo_a = (a.lo, a.closed_ends[0])
        lo_b = (b.lo, b.closed_ends[0])
        hi_a = (a.hi, a.closed_ends[1])
        hi_b = (b.hi, b.closed_ends[1])
        # larger lower end wins; on ties the open end wins
        lo = max(lo_a, lo_b, key=lambda e: (e[0], not e[1]))
        hi = min(hi_a, hi_b, key=lambda e: (e[0], e[1]))
        if lo[0] < hi[0]:
            return Region((RealInterval(lo[0], hi[0], (lo[1], hi[1])),))
        return Region()
    raise ConfigurationError("cannot intersect a label set with an interval")


def difference_region(a: StateSpaceDesc, b: StateSpaceDesc) -> Region:
    """``a \\ b`` for two descriptors of the same kind."""
    if isinstance(a, FiniteLabels) and isinstance(b, FiniteLabels):
        return Region.of_labels(lab for lab in a.labels if not b.contains_value(lab))
    if isinstance(a, RealInterval) and isinstance(b, RealInterval):
        pieces = []
        # left remainder [a.lo, b.lo)
        if a.lo < b.lo:
            hi = min(a.hi, b.lo)
            hi_closed = (not b.closed_ends[0]) if hi == b.lo else a.closed_ends[1]
            if a.lo < hi:
                pieces.append(RealInterval(a.lo, hi, (a.closed_ends[0], hi_closed)))
        # right remainder (b.hi, a.hi]
        if a.hi > b.hi:
            lo = max(a.lo, b.hi)
            lo_closed = (not b.closed_ends[1]) if lo == b.hi else a.closed_ends[0]
            if lo < a.hi:
                pieces.append(RealInterval(lo, a.hi, (lo_closed, a.closed_ends[1])))
        return Region(tuple(pieces))
    raise ConfigurationError("cannot subtract a label set from an interval")


def space_from_json(doc: dict[str, Any]) -> StateSpaceDesc:
    kind = doc.get("kind")
    if kind == "labels":
        return FiniteLabels(tuple(doc["labels"]))
    if kind == "interval":
        closed = doc.get("closed", [True, True])
        if len(closed) != 2:
            raise ConfigurationError("interval 'closed' must have two entries")
        return RealInterval(doc["lo"], doc["hi"], tuple(closed))
    raise ConfigurationError(f"unknown space kind {kind!r}")


def space_to_json(desc: StateSpaceDesc) -> dict[str, Any]:
    if isinstance(desc, FiniteLabels):
        return {"kind": "labels", "labels": list(desc.labels)}
    return {"kind": "interval", "lo": desc.lo, "hi": desc.hi, "closed": list(desc.closed_ends)}
