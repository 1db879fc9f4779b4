"""Pathwise concatenation of killed processes via transfer kernels.

Stage ``n`` of a plan runs on the tagged copy ``{n} x E^n``. A composite path
is the list of its stage segments; stages before the starting stage are dead
paths, and each death is followed by a revival point drawn from that stage's
kernel, until the revival budget, the time horizon, an immortal segment or a
stage without kernel ends the construction.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import CensoredRegionError, ConfigurationError, DomainError, RevivalUndefined
from .process import FiniteChain, Path, ProcessSpec, dead_path, evaluate, sample_path, shift
from .rng import RngStream
from .spaces import CEMETERY, RealInterval, SpacePoint, contains
from .transfer import TransferKernel, sample_revival

__all__ = [
    "Stage",
    "ConcatenationPlan",
    "Segment",
    "ConcatPath",
    "sample_concatenated",
    "evaluate_concat",
    "revival_time",
    "kill_at_revival",
    "shift_concat",
    "segments_of",
    "concat_path_rows",
    "value_at",
    "first_entry_time",
]


class _ExactSum:
    """Running sum whose reads equal ``math.fsum`` of everything added so far."""

    __slots__ = ("partials",)

    def __init__(self):
        self.partials: list[float] = []

    def add(self, x: float) -> None:
        # Shewchuk's exact partials, as used by math.fsum
        partials = self.partials
        i = 0
        for y in partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                partials[i] = lo
                i += 1
            x = hi
        partials[i:] = [x]

    def value(self) -> float:
        return math.fsum(self.partials)


def _cumulative(lifetimes: Sequence[float]) -> tuple:
    if any(math.isinf(z) for z in lifetimes):
        out, acc = [], _ExactSum()
        for z in lifetimes:
            if math.isinf(z):
                out.append(math.inf)
                acc = None
            elif acc is None:
                out.append(math.inf)
            else:
                acc.add(z)
                out.append(acc.value())
        return tuple(out)
    acc = _ExactSum()
    out = []
    for z in lifetimes:
        acc.add(z)
        out.append(acc.value())
    return tuple(out)


@dataclass(frozen=True)
class Stage:
    process: ProcessSpec
    kernel: TransferKernel | None = None


def _kernel_sources(process: ProcessSpec):
    """Values at which a stage can die (``None`` = unknown, check every row)."""
    if isinstance(process, FiniteChain):
        return [lab for lab, c in zip(process.labels, process.kill) if c > 0]
    return [process.space.base.lo, process.space.base.hi]


def tag_stage(stage: Stage, n: int, next_stage: Stage | None) -> Stage:
    """Put stage ``n`` on copy ``n`` and point its kernel at copy ``n+1``."""
    proc = stage.process.retag(n)
    kernel = stage.kernel
    if kernel is not None:
        kernel = kernel.retarget(n + 1)
        if next_stage is not None and not kernel.targets_in(next_stage.process.space.base, _kernel_sources(proc)):
            raise ConfigurationError(f"kernel of stage {n} has targets outside the space of stage {n + 1}")
    return Stage(proc, kernel)


@dataclass
class ConcatenationPlan:
    """Ordered stages plus truncation; ``rule(n)`` supplies stages past the explicit list.

    Stages passed in are untagged blueprints; the plan assigns copy ``n`` to
    stage ``n`` so that stage spaces are pairwise disjoint.
    """

    stages: Sequence[Stage] = ()
    rule: Callable[[int], Stage] | None = None
    max_revivals: int = 0
    horizon: float = math.inf
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.stages = tuple(self.stages)
        if not self.stages and self.rule is None:
            raise ConfigurationError("plan needs at least one stage")
        if self.max_revivals < 0:
            raise ConfigurationError("max_revivals must be non-negative")
        if not self.horizon > 0:
            raise ConfigurationError("horizon must be positive")
        for n in range(1, len(self.stages) + 1):
            self.stage(n)

    def _raw(self, n: int) -> Stage | None:
        if 1 <= n <= len(self.stages):
            return self.stages[n - 1]
        if self.rule is not None and n >= 1:
            return self.rule(n)
        return None

    def stage(self, n: int) -> Stage | None:
        """The tagged stage ``n`` (1-based), or ``None`` past the end of a finite plan."""
        st = self._cache.get(n)
        if st is None:
            raw = self._raw(n)
            if raw is None:
                return None
            st = tag_stage(raw, n, self._raw(n + 1) if raw.kernel is not None else None)
            self._cache[n] = st
        return st

    def with_truncation(self, max_revivals: int | None = None, horizon: float | None = None) -> "ConcatenationPlan":
        return ConcatenationPlan(
            self.stages,
            self.rule,
            self.max_revivals if max_revivals is None else max_revivals,
            self.horizon if horizon is None else horizon,
        )

    @classmethod
    def single(cls, process: ProcessSpec, horizon: float = math.inf) -> "ConcatenationPlan":
        return cls((Stage(process),), None, 0, horizon)


@dataclass(frozen=True)
class Segment:
    stage: int
    path: Path
    revival_point: SpacePoint | None = None


@dataclass(frozen=True)
class ConcatPath:
    segments: tuple
    cumulative_lifetimes: tuple
    censored: bool = False
    censored_at: float | None = None
    start_stage: int = 1
    end_reason: str = "died"

    @property
    def lifetime(self) -> float:
        return self.cumulative_lifetimes[-1] if self.cumulative_lifetimes else 0.0

    @property
    def revivals(self) -> int:
        return sum(1 for s in self.segments if s.revival_point is not None)

    def segment_start(self, k: int) -> float:
        """``ζ^(k)`` for the 0-based segment ``k``, i.e. the start time of segment ``k``."""
        return self.cumulative_lifetimes[k - 1] if k > 0 else 0.0

    def end_time(self) -> float:
        return self.censored_at if self.censored else self.lifetime


def segments_of(traj) -> Iterator[tuple[float, Path]]:
    """``(start time, segment path)`` pairs for a ``Path`` or ``ConcatPath``, skipping dead stages."""
    if isinstance(traj, Path):
        yield 0.0, traj
        return
    for k, seg in enumerate(traj.segments):
        if seg.path.is_dead:
            continue
        yield traj.segment_start(k), seg.path


def sample_concatenated(plan: ConcatenationPlan, start: tuple[int, object], rng: RngStream) -> ConcatPath:
    """Sample a composite path started at ``start = (stage n, point)``.

    ``point`` may be a ``SpacePoint`` of any tag (it is placed on copy ``n``)
    or a bare value.
    """
    n, x = start
    stage = plan.stage(n)
    if stage is None:
        raise DomainError(f"plan has no stage {n}")
    value = x.value if isinstance(x, SpacePoint) else x
    point = SpacePoint(n, value)
    if not contains(stage.process.space, point):
        raise DomainError(f"start {value!r} not in the space of stage {n}")

    segments = [Segment(j, dead_path(j)) for j in range(1, n)]
    lifetimes = [0.0] * (n - 1)
    elapsed = _ExactSum()
    revivals = 0
    censored_at = None
    reason = "died"
    while True:
        remaining = plan.horizon - elapsed.value()
        if remaining <= 0:
            path = Path(point.tag, (0.0,), (point.value,), math.inf, censored_at=0.0)
        else:
            path = sample_path(stage.process, point, remaining, rng)
        if path.censored:
            censored_at = elapsed.value() + path.censored_at
            segments.append(Segment(n, path))
            lifetimes.append(path.lifetime)
            reason = "censored"
            break
        segments.append(Segment(n, path))
        lifetimes.append(path.lifetime)
        if math.isinf(path.lifetime):
            reason = "immortal"
            break
        elapsed.add(path.lifetime)
        nxt = plan.stage(n + 1) if stage.kernel is not None else None
        if nxt is None:
            reason = "died"
            break
        if revivals >= plan.max_revivals:
            reason = "max_revivals"
            break
        try:
            point = sample_revival(stage.kernel, path, rng)
        except RevivalUndefined:
            reason = "revival_undefined"
            break
        segments[-1] = Segment(n, path, point)
        revivals += 1
        n += 1
        stage = nxt
    return ConcatPath(
        tuple(segments),
        _cumulative(lifetimes),
        censored_at is not None,
        censored_at,
        start[0],
        reason,
    )


def _eval_segment(path: Path, s: float, inside: bool):
    """State of ``path`` at local time ``s``; ``inside`` forces the pre-death state."""
    if inside and s >= path.lifetime:
        # rounding between ζ^(k-1) + s and ζ^(k); the composite is still in segment k
        return path.point(len(path.times) - 1)
    return evaluate(path, s)


def evaluate_concat(cp: ConcatPath, t: float):
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t}")
    if cp.censored and t > cp.censored_at:
        raise CensoredRegionError(f"composite censored at {cp.censored_at}, asked for t={t}")
    cum = cp.cumulative_lifetimes
    k = bisect.bisect_right(cum, t)
    if k >= len(cum):
        return CEMETERY
    start = cp.segment_start(k)
    return _eval_segment(cp.segments[k].path, t - start, True)


def revival_time(cp: ConcatPath, n: int) -> float:
    """``R^n``: the time of the ``n``-th revival (0 for stages skipped at start)."""
    if n < 0:
        raise DomainError("revival index must be non-negative")
    if n == 0 or n < cp.start_stage:
        return 0.0
    if n <= len(cp.segments) and cp.segments[n - 1].revival_point is not None:
        return cp.cumulative_lifetimes[n - 1]
    return math.inf


def kill_at_revival(cp: ConcatPath, n: int) -> ConcatPath:
    """The composite killed at ``R^n``: agrees with ``cp`` before ``R^n``, cemetery after."""
    if n < 1:
        raise DomainError("revival index must be at least 1")
    if math.isinf(revival_time(cp, n)):
        return cp
    segs = list(cp.segments[:n])
    last = segs[-1]
    segs[-1] = Segment(last.stage, last.path, None)
    return ConcatPath(tuple(segs), cp.cumulative_lifetimes[:n], False, None, cp.start_stage, "killed_at_revival")


def shift_concat(cp: ConcatPath, r: float) -> ConcatPath:
    """``Θ_r`` on composites: earlier segments become dead, the active one is shifted."""
    if r < 0:
        raise DomainError(f"shift must be non-negative, got {r}")
    if r == 0:
        return cp
    if cp.censored and r > cp.censored_at:
        raise CensoredRegionError(f"cannot shift past censoring time {cp.censored_at}")
    cum = cp.cumulative_lifetimes
    k = bisect.bisect_right(cum, r)
    if k >= len(cum):
        segs = tuple(Segment(s.stage, dead_path(s.stage)) for s in cp.segments)
        return ConcatPath(segs, tuple(0.0 for _ in segs), False, None, cp.start_stage, "dead")
    segs = [Segment(s.stage, dead_path(s.stage)) for s in cp.segments[:k]]
    active = cp.segments[k]
    local = r - cp.segment_start(k)
    if local >= active.path.lifetime:
        local = math.nextafter(active.path.lifetime, 0.0)
    segs.append(Segment(active.stage, shift(active.path, local), active.revival_point))
    segs.extend(cp.segments[k + 1 :])
    lifetimes = [s.path.lifetime for s in segs]
    censored_at = cp.censored_at - r if cp.censored else None
    return ConcatPath(tuple(segs), _cumulative(lifetimes), cp.censored, censored_at, active.stage, cp.end_reason)


def concat_path_rows(cp, path_id: int = 0) -> Iterator[tuple]:
    """CSV rows ``(path_id, time, tag, state)``; the final row marks death or censoring."""
    for start, path in segments_of(cp):
        for t, v in zip(path.times, path.values):
            if isinstance(v, float) or hasattr(v, "item"):
                v = float(v)
            yield (path_id, start + float(t), path.tag, v)
    if isinstance(cp, ConcatPath):
        end, censored = cp.end_time(), cp.censored
    else:
        end, censored = cp.end_time(), cp.censored
    if not math.isinf(end):
        yield (path_id, end, "", "censored" if censored else "cemetery")


def value_at(traj, t: float):
    """``X_t`` for either a single path or a composite."""
    if isinstance(traj, ConcatPath):
        return evaluate_concat(traj, t)
    return evaluate(traj, t)


def first_entry_time(traj, region) -> float:
    """``inf{t >= 0 : X_t in region}``; ``inf`` if the region is not entered while observed.

    Exact on event representations; the first grid time on grid paths.
    """
    for start, path in segments_of(traj):
        if path.is_grid:
            mask = region_mask(region, path)
            hits = np.flatnonzero(mask)
            if hits.size:
                return start + float(path.times[hits[0]])
            continue
        if region.tag is not None and region.tag != path.tag:
            continue
        contains_value = region.contains_value
        for t, v in zip(path.times, path.values):
            if contains_value(v):
                return start + t
    return math.inf


def region_mask(region, path: Path) -> np.ndarray:
    if region.tag is not None and region.tag != path.tag:
        return np.zeros(len(path.times), dtype=bool)
    vals = np.asarray(path.values)
    mask = np.zeros(vals.shape[0], dtype=bool)
    for piece in region.pieces:
        if isinstance(piece, RealInterval) and vals.dtype.kind == "f":
            lo_ok = vals >= piece.lo if piece.closed_ends[0] else vals > piece.lo
            hi_ok = vals <= piece.hi if piece.closed_ends[1] else vals < piece.hi
            mask |= lo_ok & hi_ok
        else:
            mask |= np.array([piece.contains_value(v) for v in path.values], dtype=bool)
    return mask
