"""Paths, killed process specifications and their samplers.

Two process families are built in:

* ``FiniteChain`` -- a continuous-time chain on a finite label set with
  per-state kill rates, sampled exactly (exponential holding times, exact
  competition between jumps and killing);
* ``IntervalDiffusion`` -- an Euler-Maruyama diffusion on a real interval,
  killed at the first grid time it leaves through a killing endpoint and
  reflected at the other endpoints.

A ``Path`` lives on a single tagged copy. Its lifetime ``ζ`` is exact for
chains; ``ζ = inf`` means the process never dies. Horizon truncation is *not*
death: a truncated path records ``censored_at`` and its lifetime stays ``inf``
(unobserved).
"""

from __future__ import annotations

import bisect
import math
import re
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

from .errors import CensoredRegionError, ConfigurationError, DomainError
from .rng import RngStream
from .spaces import CEMETERY, FiniteLabels, RealInterval, SpacePoint, TaggedSpace, contains

__all__ = [
    "Path",
    "dead_path",
    "FiniteChain",
    "IntervalDiffusion",
    "ProcessSpec",
    "Coefficient",
    "parse_coefficient",
    "sample_path",
    "evaluate",
    "shift",
    "exit_point",
    "lifetime",
]


class Path:
    """A right-continuous trajectory on one tagged copy.

    ``times[0] == 0`` and times are strictly increasing; ``values[i]`` is held
    on ``[times[i], times[i+1])``. For grid paths (``dt`` set) the entries are
    Euler grid values and ``times``/``values`` are numpy arrays.
    """

    __slots__ = ("tag", "times", "values", "lifetime", "censored_at", "dt", "exit_value")

    def __init__(self, tag, times, values, lifetime, censored_at=None, dt=None, exit_value=None):
        self.tag = tag
        self.times = times
        self.values = values
        self.lifetime = lifetime
        self.censored_at = censored_at
        self.dt = dt
        self.exit_value = exit_value

    @property
    def is_dead(self) -> bool:
        return self.lifetime == 0.0

    @property
    def censored(self) -> bool:
        return self.censored_at is not None

    @property
    def is_grid(self) -> bool:
        return self.dt is not None

    def __len__(self) -> int:
        return len(self.times)

    def _key(self):
        times = tuple(np.asarray(self.times, dtype=float).tolist()) if self.is_grid else tuple(self.times)
        values = tuple(np.asarray(self.values).tolist()) if self.is_grid else tuple(self.values)
        return (self.tag, times, values, self.lifetime, self.censored_at, self.dt, self.exit_value)

    def __eq__(self, other):
        if not isinstance(other, Path):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self) -> str:
        return (
            f"Path(tag={self.tag}, n_events={len(self.times)}, lifetime={self.lifetime}, "
            f"censored_at={self.censored_at}, exit={self.exit_value!r})"
        )

    def point(self, i: int) -> SpacePoint:
        v = self.values[i]
        if isinstance(v, np.generic):
            v = v.item()
        return SpacePoint(self.tag, v)

    def index_at(self, t: float) -> int:
        """Index of the last event with time <= t (assumes ``t < lifetime``)."""
        if self.is_grid:
            return int(np.searchsorted(self.times, t, side="right")) - 1
        return bisect.bisect_right(self.times, t) - 1

    def end_time(self) -> float:
        """Time up to which the path is known: ``ζ`` or the censoring time."""
        return self.censored_at if self.censored_at is not None else self.lifetime


def dead_path(tag: int = 0) -> Path:
    return Path(tag, (), (), 0.0)


def lifetime(path: Path) -> float:
    return path.lifetime


def evaluate(path: Path, t: float):
    """``X_t``: the held state for ``t < ζ``, ``CEMETERY`` for ``t >= ζ``.

    Raises ``CensoredRegionError`` for ``t`` past the censoring time, where the
    state was never observed.
    """
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t}")
    if t >= path.lifetime:
        return CEMETERY
    if path.censored_at is not None and t > path.censored_at:
        raise CensoredRegionError(f"path censored at {path.censored_at}, asked for t={t}")
    return path.point(path.index_at(t))


def shift(path: Path, r: float) -> Path:
    """The path ``Θ_r``: ``evaluate(shift(p, r), t) == evaluate(p, r + t)``."""
    if r < 0:
        raise DomainError(f"shift must be non-negative, got {r}")
    if r == 0:
        return path
    if r >= path.lifetime:
        return dead_path(path.tag)
    if path.censored_at is not None and r > path.censored_at:
        raise CensoredRegionError(f"cannot shift past censoring time {path.censored_at}")
    i = path.index_at(r)
    censored_at = None if path.censored_at is None else path.censored_at - r
    new_lifetime = path.lifetime - r
    if path.is_grid:
        times = np.concatenate(([0.0], path.times[i + 1 :] - r))
        values = path.values[i:].copy()
    else:
        times = (0.0,) + tuple(t - r for t in path.times[i + 1 :])
        values = tuple(path.values[i:])
    return Path(path.tag, times, values, new_lifetime, censored_at, path.dt, path.exit_value)


def exit_point(path: Path) -> SpacePoint | None:
    """The left limit ``X_{ζ-}``; ``None`` for the dead path, ``ζ = inf`` or censoring."""
    if path.exit_value is None or path.is_dead or math.isinf(path.lifetime):
        return None
    return SpacePoint(path.tag, path.exit_value)


# --------------------------------------------------------------------------
# finite chains


@dataclass(frozen=True)
class FiniteChain:
    """Jump rates ``rates[i][j]`` (diagonal ignored) and kill rates ``kill[i]``."""

    space: TaggedSpace
    rates: tuple
    kill: tuple

    def __post_init__(self):
        if not isinstance(self.space.base, FiniteLabels):
            raise ConfigurationError("FiniteChain needs a finite label space")
        n = len(self.space.base)
        rates = np.asarray(self.rates, dtype=float)
        kill = np.asarray(self.kill, dtype=float)
        if rates.shape != (n, n):
            raise ConfigurationError(f"rate matrix must be {n}x{n}, got {rates.shape}")
        if kill.shape != (n,):
            raise ConfigurationError(f"kill vector must have length {n}")
        if not (np.all(np.isfinite(rates)) and np.all(np.isfinite(kill))):
            raise ConfigurationError("rates and kill rates must be finite")
        np.fill_diagonal(rates, 0.0)
        if np.any(rates < 0) or np.any(kill < 0):
            raise ConfigurationError("rates and kill rates must be non-negative")
        object.__setattr__(self, "rates", tuple(tuple(row) for row in rates.tolist()))
        object.__setattr__(self, "kill", tuple(kill.tolist()))
        # per state: targets, cumulative masses (jumps then kill), total rate
        table = []
        for i in range(n):
            targets, cum, acc = [], [], 0.0
            for j in range(n):
                if rates[i, j] > 0:
                    acc += rates[i, j]
                    targets.append(j)
                    cum.append(acc)
            total = acc + kill[i]
            cum.append(total)
            table.append((tuple(targets), cum, total))
        object.__setattr__(self, "_table", tuple(table))

    @property
    def labels(self) -> tuple:
        return self.space.base.labels

    @property
    def tag(self) -> int:
        return self.space.tag

    def retag(self, tag: int) -> "FiniteChain":
        return FiniteChain(self.space.retag(tag), self.rates, self.kill)

    def subgenerator(self) -> np.ndarray:
        """``Q_sub = Q - diag(row sums) - diag(kill)``."""
        q = np.array(self.rates, dtype=float)
        q -= np.diag(q.sum(axis=1) + np.array(self.kill))
        return q

    def same_law(self, other: "FiniteChain") -> bool:
        return self.space.base == other.space.base and self.rates == other.rates and self.kill == other.kill

    def _sample(self, start_value, horizon: float, rng: RngStream) -> Path:
        labels = self.labels
        i = self.space.base.index(start_value)
        table = self._table
        times = [0.0]
        values = [labels[i]]
        t = 0.0
        while True:
            targets, cum, total = table[i]
            if total <= 0.0:
                return Path(self.tag, tuple(times), tuple(values), math.inf)
            t_next = t - math.log(1.0 - rng.uniform()) / total
            if t_next > horizon:
                return Path(self.tag, tuple(times), tuple(values), math.inf, censored_at=horizon)
            t = t_next
            k = rng.choice(cum)
            if k == len(targets):
                return Path(self.tag, tuple(times), tuple(values), t, exit_value=labels[i])
            i = targets[k]
            times.append(t)
            values.append(labels[i])


# --------------------------------------------------------------------------
# interval diffusions

_COEF_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


@dataclass(frozen=True)
class Coefficient:
    """A registered drift or diffusion coefficient, referenced by key."""

    key: str
    kind: str
    params: tuple = ()

    @property
    def constant(self) -> float | None:
        if self.kind == "zero":
            return 0.0
        if self.kind == "one":
            return 1.0
        if self.kind == "const":
            return self.params[0]
        return None

    def __call__(self, x: float) -> float:
        c = self.constant
        if c is not None:
            return c
        if self.kind == "ou":
            theta, mu = self.params
            return theta * (mu - x)
        raise ConfigurationError(f"unknown coefficient {self.key!r}")  # pragma: no cover


def parse_coefficient(key: str, role: str) -> Coefficient:
    """Registry lookup. ``role`` is ``"drift"`` or ``"sigma"``.

    Keys: ``bm`` (zero drift / unit sigma), ``const(c)``, ``ou(theta,mu)``
    (drift only).
    """
    m = _COEF_RE.match(str(key))
    if not m:
        raise ConfigurationError(f"bad coefficient key {key!r}")
    name, arg = m.group(1), m.group(2)
    try:
        params = tuple(float(a) for a in arg.split(",")) if arg else ()
    except ValueError as exc:
        raise ConfigurationError(f"bad coefficient parameters in {key!r}") from exc
    if name == "bm" and not params:
        return Coefficient(key, "zero" if role == "drift" else "one")
    if name == "const" and len(params) == 1:
        if role == "sigma" and params[0] <= 0:
            raise ConfigurationError("sigma must be positive")
        return Coefficient(key, "const", params)
    if name == "ou" and len(params) == 2 and role == "drift":
        return Coefficient(key, "ou", params)
    raise ConfigurationError(f"unregistered {role} coefficient {key!r}")


_CHUNK = 4096


@dataclass(frozen=True)
class IntervalDiffusion:
    space: TaggedSpace
    drift: Coefficient
    sigma: Coefficient
    killing_boundary: frozenset = field(default_factory=lambda: frozenset({"lo", "hi"}))
    dt: float = 1e-3

    def __post_init__(self):
        if not isinstance(self.space.base, RealInterval):
            raise ConfigurationError("IntervalDiffusion needs an interval space")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        kb = frozenset(self.killing_boundary)
        if not kb <= {"lo", "hi"}:
            raise ConfigurationError(f"killing boundary must be a subset of {{'lo','hi'}}, got {set(kb)}")
        object.__setattr__(self, "killing_boundary", kb)

    @property
    def tag(self) -> int:
        return self.space.tag

    def retag(self, tag: int) -> "IntervalDiffusion":
        return IntervalDiffusion(self.space.retag(tag), self.drift, self.sigma, self.killing_boundary, self.dt)

    def same_law(self, other) -> bool:
        return (
            isinstance(other, IntervalDiffusion)
            and self.space.base == other.space.base
            and (self.drift, self.sigma, self.killing_boundary, self.dt)
            == (other.drift, other.sigma, other.killing_boundary, other.dt)
        )

    def _sample(self, start_value, horizon: float, rng: RngStream) -> Path:
        lo, hi = self.space.base.lo, self.space.base.hi
        kill_lo = "lo" in self.killing_boundary
        kill_hi = "hi" in self.killing_boundary
        dt = self.dt
        sqdt = math.sqrt(dt)
        max_steps = math.inf if math.isinf(horizon) else int(math.floor(horizon / dt + 1e-9))
        b0, s0 = self.drift.constant, self.sigma.constant
        fast = b0 is not None and s0 is not None and kill_lo and kill_hi

        chunks = [np.array([float(start_value)])]
        x = float(start_value)
        k = 0  # grid steps taken so far
        while k < max_steps:
            m = int(min(_CHUNK, max_steps - k))
            z = rng.normals(m)
            if fast:
                xs = x + np.cumsum(b0 * dt + s0 * sqdt * z)
            else:
                xs = np.empty(m)
                for j in range(m):
                    x = x + self.drift(x) * dt + self.sigma(x) * sqdt * z[j]
                    if not kill_lo and x < lo:
                        x = 2 * lo - x
                    if not kill_hi and x > hi:
                        x = 2 * hi - x
                    xs[j] = x
            out = np.zeros(m, dtype=bool)
            if kill_lo:
                out |= xs <= lo
            if kill_hi:
                out |= xs >= hi
            hits = np.flatnonzero(out)
            if hits.size:
                j = int(hits[0])
                chunks.append(xs[:j])
                values = np.concatenate(chunks)
                times = np.arange(values.size) * dt
                exit_value = lo if kill_lo and xs[j] <= lo else hi
                return Path(self.tag, times, values, (k + j + 1) * dt, dt=dt, exit_value=exit_value)
            chunks.append(xs)
            x = float(xs[-1])
            k += m
        values = np.concatenate(chunks)
        times = np.arange(values.size) * dt
        return Path(self.tag, times, values, math.inf, censored_at=horizon, dt=dt)


ProcessSpec = Union[FiniteChain, IntervalDiffusion]


def sample_path(spec: ProcessSpec, start, horizon: float, rng: RngStream) -> Path:
    """Draw one path of ``spec`` started at ``start`` and run until death or ``horizon``.

    ``start`` is a ``SpacePoint`` in ``spec.space`` or ``CEMETERY`` (which gives
    the dead path).
    """
    if not horizon > 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    if start is CEMETERY:
        return dead_path(spec.tag)
    if not contains(spec.space, start):
        raise DomainError(f"start {start!r} not in space {spec.space!r}")
    return spec._sample(start.value, horizon, rng)


def process_to_json(spec: ProcessSpec) -> dict[str, Any]:
    from .spaces import space_to_json

    if isinstance(spec, FiniteChain):
        labels = spec.labels
        rates = {
            str(labels[i]): {str(labels[j]): r for j, r in enumerate(row) if r > 0}
            for i, row in enumerate(spec.rates)
        }
        return {
            "kind": "chain",
            "space": space_to_json(spec.space.base),
            "rates": {k: v for k, v in rates.items() if v},
            "kill": {str(lab): c for lab, c in zip(labels, spec.kill) if c > 0},
        }
    return {
        "kind": "diffusion",
        "space": space_to_json(spec.space.base),
        "drift": spec.drift.key,
        "sigma": spec.sigma.key,
        "killing": sorted(spec.killing_boundary),
        "dt": spec.dt,
    }


def process_from_json(doc: dict[str, Any], tag: int = 1) -> ProcessSpec:
    from .spaces import space_from_json

    kind = doc.get("kind")
    if "space" not in doc:
        raise ConfigurationError("process needs a 'space'")
    base = space_from_json(doc["space"])
    space = TaggedSpace(tag, base)
    if kind == "chain":
        if not isinstance(base, FiniteLabels):
            raise ConfigurationError("chain process needs a label space")
        n = len(base)
        rates_doc = doc.get("rates", {})
        if isinstance(rates_doc, list):
            rates = rates_doc
        else:
            rates = [[0.0] * n for _ in range(n)]
            for src, row in rates_doc.items():
                if not base.contains_value(src):
                    raise ConfigurationError(f"rate source {src!r} not in labels")
                for dst, r in row.items():
                    if not base.contains_value(dst):
                        raise ConfigurationError(f"rate target {dst!r} not in labels")
                    rates[base.index(src)][base.index(dst)] = float(r)
        kill_doc = doc.get("kill", {})
        if isinstance(kill_doc, list):
            kill = kill_doc
        else:
            kill = [0.0] * n
            for lab, c in kill_doc.items():
                if not base.contains_value(lab):
                    raise ConfigurationError(f"kill state {lab!r} not in labels")
                kill[base.index(lab)] = float(c)
        return FiniteChain(space, rates, kill)
    if kind == "diffusion":
        return IntervalDiffusion(
            space,
            parse_coefficient(doc.get("drift", "bm"), "drift"),
            parse_coefficient(doc.get("sigma", "bm"), "sigma"),
            frozenset(doc.get("killing", ["lo", "hi"])),
            float(doc.get("dt", 1e-3)),
        )
    raise ConfigurationError(f"unknown process kind {kind!r}")
