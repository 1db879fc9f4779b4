"""Transfer kernels: how a dying process chooses the next process's start point.

Every shipped kernel factors through the exit point ``X_{ζ-}`` of the dying
path (``row_for_path`` looks only at ``exit_point``). Path-dependent kernels
can subclass ``TransferKernel`` and override ``row_for_path``; the
shift-invariance checker then tells whether they are admissible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Hashable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, RevivalUndefined
from .functions import StateFunction
from .process import Path, exit_point, shift
from .rng import RngStream
from .spaces import SpacePoint, StateSpaceDesc

__all__ = [
    "TransferKernel",
    "ExitPointTable",
    "Dirac",
    "ExitIdentity",
    "KernelSpec",
    "sample_revival",
    "kernel_expectation",
    "check_shift_invariance",
    "kernel_from_json",
    "kernel_to_json",
]

ROW_TOL = 1e-12

Row = tuple  # ((SpacePoint, weight), ...)


class TransferKernel:
    target_tag: int = 0

    def row_for_exit(self, exit: SpacePoint) -> Row:  # pragma: no cover - abstract
        raise NotImplementedError

    def row_for_path(self, path: Path) -> Row:
        ep = exit_point(path)
        if ep is None:
            raise RevivalUndefined(f"no exit point on {path!r}")
        return self.row_for_exit(ep)

    def retarget(self, tag: int) -> "TransferKernel":  # pragma: no cover - abstract
        raise NotImplementedError

    def targets_in(self, base: StateSpaceDesc, sources: Sequence[Hashable] | None = None) -> bool:
        """Whether every reachable target value lies in ``base``."""
        raise NotImplementedError  # pragma: no cover

    def matrix(self, source_labels: Sequence, target_labels: Sequence) -> np.ndarray:
        """Row-stochastic matrix over label sets; rows of never-dying sources may be absent (zero)."""
        index = {lab: j for j, lab in enumerate(target_labels)}
        out = np.zeros((len(source_labels), len(target_labels)))
        for i, lab in enumerate(source_labels):
            try:
                row = self.row_for_exit(SpacePoint(0, lab))
            except ConfigurationError:
                continue
            for pt, w in row:
                if pt.value not in index:
                    raise ConfigurationError(f"kernel target {pt.value!r} outside target labels")
                out[i, index[pt.value]] += w
        return out


def _normalize_row(items) -> tuple:
    row = tuple((v, float(w)) for v, w in items)
    if not row:
        raise ConfigurationError("kernel row must be non-empty")
    if any(w < 0 or not math.isfinite(w) for _, w in row):
        raise ConfigurationError(f"kernel weights must be finite and non-negative: {row}")
    total = math.fsum(w for _, w in row)
    if abs(total - 1.0) > ROW_TOL:
        raise ConfigurationError(f"kernel row sums to {total!r}, not 1")
    return row


@dataclass(frozen=True)
class ExitPointTable(TransferKernel):
    """``rows[x]`` is the distribution ``k(x, .)`` of the revival value given exit value ``x``."""

    rows: tuple
    target_tag: int = 0

    def __post_init__(self):
        items = self.rows.items() if isinstance(self.rows, Mapping) else self.rows
        norm = []
        for src, row in items:
            row_items = row.items() if isinstance(row, Mapping) else row
            norm.append((src, _normalize_row(row_items)))
        object.__setattr__(self, "rows", tuple(norm))
        lookup = {}
        for src, row in norm:
            weights = [w for _, w in row]
            lookup[src] = (
                tuple((SpacePoint(self.target_tag, v), w) for v, w in row),
                list(np.cumsum(weights)),
            )
        object.__setattr__(self, "_lookup", lookup)

    def _entry(self, exit: SpacePoint):
        try:
            return self._lookup[exit.value]
        except (KeyError, TypeError):
            raise ConfigurationError(f"exit point {exit.value!r} has no row in the kernel table") from None

    def row_for_exit(self, exit):
        return self._entry(exit)[0]

    def sample(self, path: Path, rng: RngStream) -> SpacePoint:
        ep = exit_point(path)
        if ep is None:
            raise RevivalUndefined(f"no exit point on {path!r}")
        row, cum = self._entry(ep)
        return row[rng.choice(cum)][0]

    def retarget(self, tag):
        return ExitPointTable(self.rows, tag)

    def targets_in(self, base, sources=None):
        rows = dict(self.rows)
        keys = rows.keys() if sources is None else [s for s in sources if s in rows]
        return all(base.contains_value(v) for k in keys for v, _ in rows[k])


@dataclass(frozen=True)
class Dirac(TransferKernel):
    target: SpacePoint

    def __post_init__(self):
        if not isinstance(self.target, SpacePoint):
            raise ConfigurationError("Dirac target must be a regular point")

    @property
    def target_tag(self):
        return self.target.tag

    def row_for_exit(self, exit):
        return ((self.target, 1.0),)

    def row_for_path(self, path):
        # constant in the path; still requires a death to have happened
        if exit_point(path) is None:
            raise RevivalUndefined(f"no exit point on {path!r}")
        return ((self.target, 1.0),)

    def sample(self, path, rng):
        self.row_for_path(path)
        return self.target

    def retarget(self, tag):
        return Dirac(self.target.retag(tag))

    def targets_in(self, base, sources=None):
        return base.contains_value(self.target.value)


@dataclass(frozen=True)
class ExitIdentity(TransferKernel):
    """Revive at the exit value itself, on copy ``retarget_tag``."""

    retarget_tag: int

    @property
    def target_tag(self):
        return self.retarget_tag

    def row_for_exit(self, exit):
        return ((SpacePoint(self.retarget_tag, exit.value), 1.0),)

    def sample(self, path, rng):
        return self.row_for_path(path)[0][0]

    def retarget(self, tag):
        return ExitIdentity(tag)

    def targets_in(self, base, sources=None):
        if sources is None:
            return True
        return all(base.contains_value(s) for s in sources)


KernelSpec = TransferKernel


def sample_revival(kernel: TransferKernel, dying_path: Path, rng: RngStream) -> SpacePoint:
    """Draw the revival point for a path that has just died."""
    if hasattr(kernel, "sample"):
        return kernel.sample(dying_path, rng)
    row = kernel.row_for_path(dying_path)
    cum = list(np.cumsum([w for _, w in row]))
    return row[rng.choice(cum)][0]


def kernel_expectation(kernel: TransferKernel, exit: SpacePoint, f: StateFunction) -> float:
    """``Kf`` at a given exit point: ``sum_y f(y) k(exit, {y})``."""
    row = kernel.row_for_exit(exit)
    if f.is_constant:
        # rows are probability vectors
        return f(row[0][0])
    return math.fsum(f(pt) * w for pt, w in row)


def check_shift_invariance(kernel: TransferKernel, paths: Sequence[Path], r_grid: Sequence[float]) -> bool:
    """True iff the row chosen for ``shift(p, r)`` equals the row for ``p`` whenever ``r < ζ(p) < inf``."""
    for p in paths:
        if math.isinf(p.lifetime) or p.censored:
            continue
        try:
            base = kernel.row_for_path(p)
        except RevivalUndefined:
            continue
        for r in r_grid:
            if r < 0 or r >= p.lifetime:
                continue
            if kernel.row_for_path(shift(p, r)) != base:
                return False
    return True


def _parse_target(doc) -> SpacePoint:
    if isinstance(doc, Mapping):
        return SpacePoint(int(doc.get("tag", 0)), doc["value"])
    return SpacePoint(0, doc)


def kernel_from_json(doc: Mapping[str, Any], source_kind: str = "labels") -> TransferKernel:
    """Parse a kernel document. Interval sources get their row keys read as floats."""
    kind = doc.get("kind")
    if kind == "exit_table":
        rows = doc.get("rows")
        if not isinstance(rows, Mapping) or not rows:
            raise ConfigurationError("exit_table needs a non-empty 'rows' mapping")
        conv = float if source_kind == "interval" else (lambda k: k)
        try:
            parsed = {conv(k): dict(v) for k, v in rows.items()}
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad exit_table rows: {exc}") from exc
        return ExitPointTable(parsed)
    if kind == "dirac":
        if "target" not in doc:
            raise ConfigurationError("dirac kernel needs a 'target'")
        return Dirac(_parse_target(doc["target"]))
    if kind == "exit_identity":
        return ExitIdentity(int(doc.get("retag", 0)))
    raise ConfigurationError(f"unknown kernel kind {kind!r}")


def kernel_to_json(kernel: TransferKernel) -> dict[str, Any]:
    if isinstance(kernel, ExitPointTable):
        return {"kind": "exit_table", "rows": {str(k): {str(v): w for v, w in row} for k, row in kernel.rows}}
    if isinstance(kernel, Dirac):
        return {"kind": "dirac", "target": {"tag": kernel.target.tag, "value": kernel.target.value}}
    if isinstance(kernel, ExitIdentity):
        return {"kind": "exit_identity", "retag": kernel.retarget_tag}
    return {"kind": type(kernel).__name__}
