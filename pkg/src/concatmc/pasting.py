"""Pasting two killed processes on overlapping spaces.

Copies alternate: odd stages run the minus process and revive through
``K^{-1}`` into the plus process, even stages run the plus process and revive
through ``K^{+1}``. Erasing the copy index gives a trajectory on
``E = E^{-1} ∪ E^{+1}``, which is Markov when the consistency conditions hold
at every shared point.

The consistency quantities, per shared ``x`` and with ``τ^∓`` the first entry
of each side into its own exclusive set:

* ``A^∓ f``  -- ``E_x ∫_0^τ e^{-αt} f dt``
* ``B^∓ g``  -- ``E_x(e^{-ατ} g(X_τ); τ < ζ)``
* ``C^∓ h``  -- ``E_x(e^{-αζ} h(X_{ζ-}); ζ < τ)``

Condition (1) is ``A^- f = A^+ f``; condition (2) is ``B^- g^- = C^+ K^+ g^-``
and ``B^+ g^+ = C^- K^- g^+``. When both sides are the same process and
kernel, the exclusive sets are empty and the pasting is consistent by the
identical-iterations result; the direct comparisons ``B^- = B^+`` and
``C^- = C^+`` are what that argument uses, so they are checked instead of the
literal condition (2).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .concat import ConcatenationPlan, ConcatPath, Stage, first_entry_time, segments_of
from .errors import ConfigurationError, UnsupportedEngineError
from .estimate import _FUNCTIONALS, EstimateReport, _auto_horizon, _Job, _replicate, discounted_integral, mc_resolvent
from .functions import Const, Indicator, StateFunction, function_to_json
from .oracle import SubGenerator, assemble_alternating_pair, exact_entry_functionals, exact_resolvent
from .process import FiniteChain, Path, ProcessSpec, evaluate, exit_point
from .rng import RngStream
from .spaces import FiniteLabels, Region, SpacePoint, contains, difference_region, shared_region
from .transfer import TransferKernel, kernel_expectation

__all__ = [
    "PastingSpec",
    "AlternatingRule",
    "make_alternating_plan",
    "project_path",
    "first_entry_times",
    "ConsistencyReport",
    "check_consistency",
    "ProjectionReport",
    "projection_criterion_test",
    "default_test_functions",
]

ORACLE_TOL = 1e-9


@dataclass(frozen=True)
class PastingSpec:
    minus: ProcessSpec
    plus: ProcessSpec
    kernel_minus: TransferKernel
    kernel_plus: TransferKernel

    def __post_init__(self):
        base_m, base_p = self.minus.space.base, self.plus.space.base
        object.__setattr__(self, "shared", shared_region(base_m, base_p))
        object.__setattr__(self, "minus_only", difference_region(base_m, base_p))
        object.__setattr__(self, "plus_only", difference_region(base_p, base_m))
        if self.shared.is_empty:
            raise ConfigurationError("the two spaces do not overlap; nothing to paste")
        # tag_stage would catch this later, but only for stages actually built
        if not self.kernel_minus.targets_in(base_p, _death_values(self.minus)):
            raise ConfigurationError("K^-1 has targets outside the plus space")
        if not self.kernel_plus.targets_in(base_m, _death_values(self.plus)):
            raise ConfigurationError("K^+1 has targets outside the minus space")

    @property
    def identical(self) -> bool:
        return _same_law(self.minus, self.plus) and self.kernel_minus == self.kernel_plus

    def side(self, sign: int):
        """``(process, own kernel, exclusive region)`` for side ``-1`` or ``+1``."""
        if sign < 0:
            return self.minus, self.kernel_minus, self.minus_only
        return self.plus, self.kernel_plus, self.plus_only


def _same_law(a, b) -> bool:
    return type(a) is type(b) and a.same_law(b)


def _death_values(proc):
    if isinstance(proc, FiniteChain):
        return [lab for lab, c in zip(proc.labels, proc.kill) if c > 0]
    return [proc.space.base.lo, proc.space.base.hi]


@dataclass(frozen=True)
class AlternatingRule:
    """Stage ``n`` is the minus side for odd ``n`` and the plus side for even ``n``."""

    minus: Stage
    plus: Stage

    def __call__(self, n: int) -> Stage:
        return self.minus if n % 2 else self.plus


def make_alternating_plan(ps: PastingSpec, max_revivals: int = 0, horizon: float = math.inf) -> ConcatenationPlan:
    rule = AlternatingRule(Stage(ps.minus, ps.kernel_minus), Stage(ps.plus, ps.kernel_plus))
    return ConcatenationPlan((), rule, max_revivals, horizon)


def project_path(cp) -> Path:
    """``π(X)``: one tag-0 event path over the union space.

    Consecutive records with equal values are merged, so a revival at the
    exit value leaves no visible jump. The lifetime is the composite's.
    """
    times: list[float] = []
    values: list = []
    exit_value = None
    for start, path in segments_of(cp):
        vals = path.values.tolist() if isinstance(path.values, np.ndarray) else path.values
        for t, v in zip(path.times, vals):
            if values and values[-1] == v:
                continue
            times.append(start + float(t))
            values.append(v)
        exit_value = path.exit_value
    if not times:
        return Path(0, (), (), 0.0)
    if isinstance(cp, ConcatPath):
        life, censored_at = cp.lifetime, cp.censored_at
    else:
        life, censored_at = cp.lifetime, cp.censored_at
    if censored_at is not None:
        life = math.inf
    # guard against rounding placing a record at or past the composite end
    while len(times) > 1 and times[-1] >= life:
        times.pop()
        values.pop()
    return Path(0, tuple(times), tuple(values), life, censored_at=censored_at, exit_value=exit_value)


def _named_region(ps: PastingSpec, name: str) -> Region:
    if name == "minus-only":
        return ps.minus_only
    if name == "plus-only":
        return ps.plus_only
    if name == "shared-complement":
        return Region(ps.minus_only.pieces + ps.plus_only.pieces)
    raise ConfigurationError(f"unknown target {name!r}")


def first_entry_times(path, target, ps: PastingSpec | None = None) -> float:
    """First entry of ``path`` into ``target`` (a ``Region`` or a named set of ``ps``)."""
    if isinstance(target, str):
        if ps is None:
            raise ConfigurationError("named targets need the pasting spec")
        target = _named_region(ps, target)
    return first_entry_time(path, target)


def default_test_functions(ps: PastingSpec):
    """Indicators of every label plus the constant 1 on each side; chains only."""
    if not isinstance(ps.minus, FiniteChain) or not isinstance(ps.plus, FiniteChain):
        one = [Const(1.0)]
        return one, one, one
    union = list(ps.minus.labels) + [lab for lab in ps.plus.labels if lab not in ps.minus.labels]
    fs = [Indicator(frozenset([lab])) for lab in union] + [Const(1.0)]
    gm = [Indicator(frozenset([lab])) for lab in ps.minus.labels] + [Const(1.0)]
    gp = [Indicator(frozenset([lab])) for lab in ps.plus.labels] + [Const(1.0)]
    return fs, gm, gp


# --------------------------------------------------------------------------
# consistency report


@dataclass
class Residual:
    condition: str
    point: Any
    function: str
    value: float
    lhs: float
    rhs: float
    tolerance: float
    passed: bool


@dataclass
class ConsistencyReport:
    engine: str
    alpha: float
    residuals: list = field(default_factory=list)
    identical: bool = False
    passed: bool = False
    route: str = ""

    def worst(self, condition: str) -> float:
        vals = [r.value for r in self.residuals if r.condition == condition]
        return max(vals) if vals else 0.0

    def failing(self) -> list:
        return [r for r in self.residuals if not r.passed]

    def to_json(self) -> str:
        doc = {
            "engine": self.engine,
            "alpha": self.alpha,
            "identical": self.identical,
            "route": self.route,
            "passed": self.passed,
            "residuals": [
                {
                    "condition": r.condition,
                    "point": r.point,
                    "function": r.function,
                    "residual": r.value,
                    "lhs": r.lhs,
                    "rhs": r.rhs,
                    "tolerance": r.tolerance,
                    "passed": r.passed,
                }
                for r in self.residuals
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True, default=repr)


def _fname(f: StateFunction) -> str:
    return json.dumps(function_to_json(f), sort_keys=True, default=repr)


def _kernel_vector(kernel: TransferKernel, proc: FiniteChain, g: StateFunction) -> np.ndarray:
    out = np.zeros(len(proc.labels))
    for i, (lab, c) in enumerate(zip(proc.labels, proc.kill)):
        if c > 0:
            out[i] = kernel_expectation(kernel, SpacePoint(0, lab), g)
    return out


class _OracleSide:
    """Exact ``A f``, ``B g``, ``C h`` for one side, as vectors over its labels."""

    def __init__(self, proc: FiniteChain, region: Region, alpha: float):
        self.proc = proc
        self.sg = SubGenerator(tuple(SpacePoint(0, lab) for lab in proc.labels), proc.subgenerator())
        self.absorbing = [lab for lab in proc.labels if region.contains_value(lab)]
        self.alpha = alpha

    def _ef(self, f, g, kg):
        return exact_entry_functionals(self.sg, self.alpha, self.absorbing, f, g, kg)

    def at(self, x, arr) -> float:
        return float(arr[self.proc.labels.index(x)])

    def integral(self, f, x):
        return self.at(x, self._ef(f, Const(0.0), None).integral)

    def boundary(self, g, x):
        return self.at(x, self._ef(Const(0.0), g, None).boundary)

    def kill(self, kg: np.ndarray, x):
        return self.at(x, self._ef(Const(0.0), Const(0.0), kg).kill)


def _residual(cond, x, name, lhs, rhs, tol) -> Residual:
    val = abs(lhs - rhs)
    return Residual(cond, x, name, val, lhs, rhs, tol, val <= tol)


def _oracle_consistency(ps: PastingSpec, alpha, fs, gms, gps, tol) -> ConsistencyReport:
    if not isinstance(ps.minus, FiniteChain) or not isinstance(ps.plus, FiniteChain):
        raise UnsupportedEngineError("the oracle engine needs finite chains on both sides")
    m = _OracleSide(ps.minus, ps.minus_only, alpha)
    p = _OracleSide(ps.plus, ps.plus_only, alpha)
    identical = ps.identical
    rep = ConsistencyReport("oracle", alpha, identical=identical)
    shared = ps.shared.labels()
    pair = assemble_alternating_pair(ps.minus, ps.plus, ps.kernel_minus, ps.kernel_plus)
    for x in shared:
        for f in fs:
            rep.residuals.append(_residual("1", x, _fname(f), m.integral(f, x), p.integral(f, x), tol))
        for g in gms:
            rhs = p.kill(_kernel_vector(ps.kernel_plus, ps.plus, g), x)
            rep.residuals.append(_residual("2a", x, _fname(g), m.boundary(g, x), rhs, tol))
        for g in gps:
            rhs = m.kill(_kernel_vector(ps.kernel_minus, ps.minus, g), x)
            rep.residuals.append(_residual("2b", x, _fname(g), p.boundary(g, x), rhs, tol))
        if identical:
            for g in gms:
                rep.residuals.append(_residual("direct-B", x, _fname(g), m.boundary(g, x), p.boundary(g, x), tol))
                km = _kernel_vector(ps.kernel_minus, ps.minus, g)
                kp = _kernel_vector(ps.kernel_plus, ps.plus, g)
                rep.residuals.append(_residual("direct-C", x, _fname(g), m.kill(km, x), p.kill(kp, x), tol))
        i_odd = pair.states.index(SpacePoint(1, x))
        i_even = pair.states.index(SpacePoint(2, x))
        for f in fs:
            u = exact_resolvent(pair, alpha, f)
            rep.residuals.append(_residual("projection", x, _fname(f), float(u[i_odd]), float(u[i_even]), tol))
    _verdict(rep)
    return rep


def _verdict(rep: ConsistencyReport) -> None:
    ok = {c: all(r.passed for r in rep.residuals if r.condition == c) for c in ("1", "2a", "2b", "direct-B", "direct-C")}
    if ok["1"] and ok["2a"] and ok["2b"]:
        rep.passed, rep.route = True, "conditions (1)-(2)"
    elif rep.identical and ok["1"] and ok["direct-B"] and ok["direct-C"]:
        rep.passed, rep.route = True, "identical iterations"
    else:
        rep.passed, rep.route = False, "violated"


# --------------------------------------------------------------------------
# Monte Carlo engine


def _entry_fn(job, path, rng):
    alpha, region, fs, gs, kernel, hs = job.params
    tau = first_entry_time(path, region)
    life = path.lifetime
    row = [discounted_integral(path, f, alpha, until=tau) for f in fs]
    if tau < life and math.isfinite(tau):
        x_tau = evaluate(path, tau)
        disc = math.exp(-alpha * tau)
        row += [disc * g.value_at(x_tau) for g in gs]
    else:
        row += [0.0] * len(gs)
    if math.isfinite(life) and life < tau and not path.censored:
        disc = math.exp(-alpha * life)
        ep = exit_point(path)
        row += [disc * kernel_expectation(kernel, ep, h) for h in hs]
    else:
        row += [0.0] * len(hs)
    return row, int(path.censored)


_FUNCTIONALS["entry"] = _entry_fn


def _mc_side(proc, kernel, region, alpha, fs, gs, hs, x, n, rng, workers):
    """Per-function reports for ``A f``, ``B g`` and ``C (K h)`` from one side started at ``x``."""
    sup = max([f.sup_norm for f in fs] + [1.0])
    horizon = _auto_horizon(alpha, sup)
    start = SpacePoint(proc.tag, x)
    job = _Job("entry", proc, start, horizon, (alpha, region, tuple(fs), tuple(gs), kernel, tuple(hs)))
    values, censored = _replicate(job, n, rng, workers)
    bias = sup * math.exp(-alpha * horizon) / alpha
    reps = []
    for j in range(values.shape[1]):
        col = values[:, j]
        se = float(np.std(col, ddof=1) / math.sqrt(n))
        reps.append(EstimateReport(float(np.mean(col)), se, n, rng.seed, censored / n, bias))
    a = reps[: len(fs)]
    b = reps[len(fs) : len(fs) + len(gs)]
    c = reps[len(fs) + len(gs) :]
    return a, b, c


def _mc_residual(cond, x, name, lhs: EstimateReport, rhs: EstimateReport, sigma) -> Residual:
    pooled = math.hypot(lhs.stderr, rhs.stderr)
    tol = sigma * pooled + lhs.bias_bound + rhs.bias_bound
    return _residual(cond, x, name, lhs.value, rhs.value, tol)


def _mc_consistency(ps, alpha, fs, gms, gps, n, rng, sigma, workers) -> ConsistencyReport:
    rep = ConsistencyReport(f"monte_carlo({n})", alpha, identical=ps.identical)
    shared = ps.shared
    points = shared.labels() if all(isinstance(pc, FiniteLabels) for pc in shared.pieces) else _interval_points(shared)
    for k, x in enumerate(points):
        # minus side: A f, B g^-, C K^- g^+ ; plus side: A f, B g^+, C K^+ g^-
        am, bm, cm = _mc_side(ps.minus, ps.kernel_minus, ps.minus_only, alpha, fs, gms, gps, x, n, rng.child(k, 0), workers)
        ap, bp, cp = _mc_side(ps.plus, ps.kernel_plus, ps.plus_only, alpha, fs, gps, gms, x, n, rng.child(k, 1), workers)
        for f, l, r in zip(fs, am, ap):
            rep.residuals.append(_mc_residual("1", x, _fname(f), l, r, sigma))
        for g, l, r in zip(gms, bm, cp):
            rep.residuals.append(_mc_residual("2a", x, _fname(g), l, r, sigma))
        for g, l, r in zip(gps, bp, cm):
            rep.residuals.append(_mc_residual("2b", x, _fname(g), l, r, sigma))
        if ps.identical:
            # same law and kernel: g^- and g^+ run over the same list
            for g, l, r in zip(gms, bm, bp):
                rep.residuals.append(_mc_residual("direct-B", x, _fname(g), l, r, sigma))
            for g, l, r in zip(gms, cp, cm):
                rep.residuals.append(_mc_residual("direct-C", x, _fname(g), l, r, sigma))
    _verdict(rep)
    return rep


def _interval_points(region: Region, m: int = 3) -> list[float]:
    pts = []
    for piece in region.pieces:
        pts.extend(piece.lo + (piece.hi - piece.lo) * (i + 1) / (m + 1) for i in range(m))
    return pts


def check_consistency(
    ps: PastingSpec,
    alpha: float,
    fs: Sequence[StateFunction] | None = None,
    g_minus: Sequence[StateFunction] | None = None,
    g_plus: Sequence[StateFunction] | None = None,
    engine: str | tuple = "oracle",
    rng: RngStream | None = None,
    tolerance: float | None = None,
    sigma: float = 3.0,
    workers: int = 1,
) -> ConsistencyReport:
    """Evaluate the pasting consistency conditions at every shared point.

    ``engine`` is ``"oracle"`` (finite chains, exact solves, residuals against
    ``tolerance``, default 1e-9) or ``("monte_carlo", N)`` (residuals against
    ``sigma`` pooled standard errors). With the oracle the report also holds
    the exact projection residuals ``|U_α(f∘π)(odd, x) - U_α(f∘π)(even, x)|``.
    """
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    dfs, dgm, dgp = default_test_functions(ps)
    fs = list(fs) if fs is not None else dfs
    g_minus = list(g_minus) if g_minus is not None else dgm
    g_plus = list(g_plus) if g_plus is not None else dgp
    if engine == "oracle":
        return _oracle_consistency(ps, alpha, fs, g_minus, g_plus, ORACLE_TOL if tolerance is None else tolerance)
    if isinstance(engine, tuple) and engine[0] == "monte_carlo":
        if rng is None:
            raise ConfigurationError("the Monte Carlo engine needs an rng")
        n = int(engine[1])
        if n < 2:
            raise ConfigurationError("the Monte Carlo engine needs N >= 2")
        return _mc_consistency(ps, alpha, fs, g_minus, g_plus, n, rng, sigma, workers)
    raise ConfigurationError(f"unknown engine {engine!r}")


# --------------------------------------------------------------------------
# projection criterion


@dataclass
class PointResult:
    point: Any
    status: str
    odd: EstimateReport | None = None
    even: EstimateReport | None = None
    difference: float = 0.0
    pooled_stderr: float = 0.0
    passed: bool = True


@dataclass
class ProjectionReport:
    alpha: float
    n_odd: int
    n_even: int
    points: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.points if p.status == "tested")

    def result(self, x) -> PointResult:
        for p in self.points:
            if p.point == x:
                return p
        raise KeyError(x)


def projection_criterion_test(
    plan: ConcatenationPlan,
    alpha: float,
    f: StateFunction,
    points: Sequence,
    n: int,
    rng: RngStream,
    n_odd: int = 1,
    n_even: int = 2,
    sigma: float = 3.0,
    workers: int = 1,
) -> ProjectionReport:
    """Compare ``U_α(f∘π)`` started at ``(n_odd, x)`` and ``(n_even, x)``.

    ``f`` should ignore the copy index (``tag=None``). A point lying in only
    one of the two copies cannot be started on the other and is reported as
    ``"single-sided, skipped"``.
    """
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    if n_odd % 2 != 1 or n_even % 2 != 0:
        raise ConfigurationError("n_odd must be odd and n_even even")
    st_o, st_e = plan.stage(n_odd), plan.stage(n_even)
    if st_o is None or st_e is None:
        raise ConfigurationError("plan has no such stages")
    rep = ProjectionReport(alpha, n_odd, n_even)
    for k, x in enumerate(points):
        in_o = contains(st_o.process.space, SpacePoint(n_odd, x))
        in_e = contains(st_e.process.space, SpacePoint(n_even, x))
        if not (in_o and in_e):
            rep.points.append(PointResult(x, "single-sided, skipped"))
            continue
        ro = mc_resolvent(plan, (n_odd, x), alpha, f, n, rng.child(k, 0), workers=workers)
        re = mc_resolvent(plan, (n_even, x), alpha, f, n, rng.child(k, 1), workers=workers)
        diff = ro.value - re.value
        pooled = math.hypot(ro.stderr, re.stderr)
        ok = abs(diff) <= sigma * pooled + ro.bias_bound + re.bias_bound
        rep.points.append(PointResult(x, "tested", ro, re, diff, pooled, ok))
    return rep
