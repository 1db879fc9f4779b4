"""Monte Carlo estimators, statistical test batteries and Post-Widder inversion.

All estimators replicate in chunks of ``CHUNK`` paths; chunk ``i`` draws from
``rng.child(i)``, so results do not depend on the worker count. Per-path values
are kept and reduced once, in chunk order, which makes every report
reproducible bit-for-bit from ``(seed, stream_id, config)``.

Path functionals on piecewise-constant paths are integrated in closed form
segment by segment; grid (diffusion) paths use the trapezoid rule.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .concat import (
    ConcatenationPlan,
    ConcatPath,
    first_entry_time,
    revival_time,
    sample_concatenated,
    segments_of,
    value_at,
)
from .errors import ConfigurationError, DomainError, UnsupportedEngineError
from .functions import StateFunction
from .oracle import SubGenerator, assemble_concatenated, exact_resolvent
from .process import FiniteChain, Path, ProcessSpec, exit_point, sample_path
from .rng import RngStream
from .spaces import CEMETERY, Region, SpacePoint
from .transfer import kernel_expectation

__all__ = [
    "EstimateReport",
    "CHUNK",
    "CENSOR_CAP",
    "discounted_integral",
    "mc_resolvent",
    "mc_semigroup",
    "mc_lifetime",
    "RevivalStop",
    "EntryStop",
    "dynkin_residual",
    "RevivalGapReport",
    "revival_formula_test",
    "post_widder_invert",
    "rational_laplace",
    "reports_to_csv",
]

CHUNK = 1024
CENSOR_CAP = 0.01
# horizon chosen so the discarded resolvent tail is below this (relative to sup|f|)
TAIL_TOL = 1e-12


@dataclass
class EstimateReport:
    value: float
    stderr: float
    n_samples: int
    seed: int
    censored_fraction: float = 0.0
    bias_bound: float = 0.0
    flagged: bool = False
    label: str = ""

    def error_bar(self, sigma: float = 3.0) -> float:
        return sigma * self.stderr + self.bias_bound

    def within(self, target: float, sigma: float = 3.0) -> bool:
        return abs(self.value - target) <= self.error_bar(sigma)

    def as_dict(self) -> dict:
        return asdict(self)


def _report(values: np.ndarray, seed: int, censored: int = 0, bias: float = 0.0, label: str = "") -> EstimateReport:
    n = values.shape[0]
    mean = float(np.mean(values)) if n else 0.0
    std = float(np.std(values, ddof=1)) if n > 1 else 0.0
    frac = censored / n if n else 0.0
    stderr = std / math.sqrt(n) if n else 0.0
    # censoring beyond the cap is only harmless when a bias bound already covers it
    flagged = frac > CENSOR_CAP and bias > 0.1 * stderr
    return EstimateReport(mean, stderr, n, seed, frac, bias, flagged, label)


# --------------------------------------------------------------------------
# targets and path functionals


def _as_plan(target) -> tuple[ConcatenationPlan | None, ProcessSpec | None]:
    if isinstance(target, ConcatenationPlan):
        return target, None
    if isinstance(target, (FiniteChain,)) or hasattr(target, "_sample"):
        return None, target
    raise ConfigurationError(f"cannot simulate {target!r}")


def _draw(target, start, horizon: float, rng: RngStream):
    plan, spec = _as_plan(target)
    if plan is not None:
        return sample_concatenated(plan, start, rng)
    return sample_path(spec, start, horizon, rng)


def _normalize_start(target, start):
    plan, spec = _as_plan(target)
    if plan is not None:
        if isinstance(start, SpacePoint):
            return (start.tag if start.tag >= 1 else 1, start.value)
        if isinstance(start, tuple) and len(start) == 2:
            return (int(start[0]), start[1].value if isinstance(start[1], SpacePoint) else start[1])
        return (1, start)
    if isinstance(start, SpacePoint) or start is CEMETERY:
        return start if start is CEMETERY or start.tag == spec.tag else SpacePoint(spec.tag, start.value)
    return SpacePoint(spec.tag, start)


def _with_horizon(target, horizon: float):
    plan, _ = _as_plan(target)
    if plan is not None and horizon < plan.horizon:
        return plan.with_truncation(horizon=horizon)
    return target


def _target_horizon(target) -> float:
    plan, _ = _as_plan(target)
    return plan.horizon if plan is not None else math.inf


def _segment_integral(path: Path, offset: float, f: StateFunction, alpha: float, until: float) -> float:
    end = min(path.end_time(), until - offset)
    if end <= 0:
        return 0.0
    if path.is_grid:
        times = np.asarray(path.times, dtype=float)
        keep = times < end
        times = times[keep]
        vals = np.array([f(SpacePoint(path.tag, float(v))) for v in np.asarray(path.values)[keep]])
        if times.size == 0:
            return 0.0
        # value at the right end: Δ (f = 0) if the path died there, else the held state
        died = end >= path.lifetime
        last = 0.0 if died else vals[-1]
        tt = np.append(times, end) + offset
        hh = np.append(vals, last) * np.exp(-alpha * tt)
        return float(np.sum(np.diff(tt) * (hh[:-1] + hh[1:]) * 0.5))
    total = 0.0
    times = path.times
    n = len(times)
    tag = path.tag
    values = path.values
    for i in range(n):
        a = times[i]
        if a >= end:
            break
        b = times[i + 1] if i + 1 < n else end
        if b > end:
            b = end
        v = f(SpacePoint(tag, values[i]))
        if v:
            total += v * math.exp(-alpha * (offset + a)) * -math.expm1(-alpha * (b - a))
    return total / alpha


def discounted_integral(traj, f: StateFunction, alpha: float, until: float = math.inf) -> float:
    """``∫_0^{until ∧ end} e^{-αt} f(X_t) dt`` along a path or composite."""
    total = 0.0
    for start, path in segments_of(traj):
        if start >= until:
            break
        total += _segment_integral(path, start, f, alpha, until)
    return total


def _censored(traj) -> bool:
    return traj.censored


# --------------------------------------------------------------------------
# replication


@dataclass(frozen=True)
class _Job:
    kind: str
    target: Any
    start: Any
    horizon: float
    params: tuple


def _run_chunk(job: _Job, rng: RngStream, m: int):
    """Per-path rows ``(functional values...)`` and a censoring count for ``m`` paths."""
    rows = []
    censored = 0
    fn = _FUNCTIONALS[job.kind]
    for _ in range(m):
        traj = _draw(job.target, job.start, job.horizon, rng)
        row, cens = fn(job, traj, rng)
        rows.append(row)
        censored += cens
    return np.asarray(rows, dtype=float).reshape(m, -1), censored


def _chunk_task(args):
    job, seed, stream_id, sub, i, m = args
    return _run_chunk(job, RngStream(seed, stream_id, sub).child(i), m)


def _replicate(job: _Job, n: int, rng: RngStream, workers: int = 1):
    sizes = [CHUNK] * (n // CHUNK) + ([n % CHUNK] if n % CHUNK else [])
    tasks = [(job, rng.seed, rng.stream_id, rng.sub, i, m) for i, m in enumerate(sizes)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_chunk_task, tasks))
    else:
        results = [_chunk_task(t) for t in tasks]
    values = np.concatenate([r[0] for r in results], axis=0) if results else np.zeros((0, 1))
    censored = sum(r[1] for r in results)
    return values, censored


def _resolvent_fn(job, traj, rng):
    alpha, fs = job.params
    return [discounted_integral(traj, f, alpha) for f in fs], int(traj.censored)


def _semigroup_fn(job, traj, rng):
    t, fs = job.params
    if traj.censored and t > traj.censored_at:
        return [0.0 for _ in fs], 1
    x = value_at(traj, t)
    return [f.value_at(x) for f in fs], 0


def _auto_horizon(alpha: float, sup: float) -> float:
    if sup <= 0:
        return 1.0
    return max(1.0, (math.log(sup / alpha) - math.log(TAIL_TOL)) / alpha)


def _check_n(n: int):
    if n < 2:
        raise DomainError(f"need at least 2 samples for a standard error, got {n}")


def mc_resolvent(
    target,
    start,
    alpha: float,
    f,
    n: int,
    rng: RngStream,
    horizon: float | None = None,
    workers: int = 1,
):
    """Estimate ``U_α f(start) = E ∫_0^ζ e^{-αt} f(X_t) dt``.

    ``target`` is a ``ProcessSpec`` or a ``ConcatenationPlan``. ``f`` may be a
    single function or a list (estimated on the same paths). Paths are cut at
    ``horizon`` (default: where the discounted tail drops below ``1e-12 sup|f|``);
    the cut contributes ``sup|f| e^{-α T}/α`` to ``bias_bound``.
    """
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    _check_n(n)
    fs = list(f) if isinstance(f, (list, tuple)) else [f]
    sup = max((g.sup_norm for g in fs), default=0.0)
    if sup == 0.0:
        zero = [EstimateReport(0.0, 0.0, n, rng.seed) for _ in fs]
        return zero if isinstance(f, (list, tuple)) else zero[0]
    t_cut = _auto_horizon(alpha, sup) if horizon is None else horizon
    t_cut = min(t_cut, _target_horizon(target))
    bias = sup * math.exp(-alpha * t_cut) / alpha if math.isfinite(t_cut) else 0.0
    job = _Job("resolvent", _with_horizon(target, t_cut), _normalize_start(target, start), t_cut, (alpha, tuple(fs)))
    values, censored = _replicate(job, n, rng, workers)
    reports = [_report(values[:, j], rng.seed, censored, bias) for j in range(len(fs))]
    return reports if isinstance(f, (list, tuple)) else reports[0]


def mc_semigroup(target, start, t: float, f, n: int, rng: RngStream, workers: int = 1):
    """Estimate ``T_t f(start) = E f(X_t)`` with ``f(Δ) = 0``."""
    if t < 0:
        raise DomainError(f"t must be non-negative, got {t}")
    _check_n(n)
    fs = list(f) if isinstance(f, (list, tuple)) else [f]
    start = _normalize_start(target, start)
    if t == 0:
        if isinstance(start, tuple):
            x0 = SpacePoint(start[0], start[1])
        else:
            x0 = start
        reports = [EstimateReport(g.value_at(x0), 0.0, n, rng.seed) for g in fs]
        return reports if isinstance(f, (list, tuple)) else reports[0]
    job = _Job("semigroup", _with_horizon(target, t), start, t, (t, tuple(fs)))
    values, censored = _replicate(job, n, rng, workers)
    reports = [_report(values[:, j], rng.seed, censored) for j in range(len(fs))]
    for r in reports:
        # values past a censoring time are unknown, not small
        r.flagged = r.censored_fraction > CENSOR_CAP
    return reports if isinstance(f, (list, tuple)) else reports[0]


# --------------------------------------------------------------------------
# Dynkin's formula


@dataclass(frozen=True)
class RevivalStop:
    """Stop at the ``n``-th revival time ``R^n``."""

    n: int


@dataclass(frozen=True)
class EntryStop:
    """Stop at the first entry into ``region``."""

    region: Region


def _stopping_time(stopping, traj) -> float:
    if isinstance(stopping, RevivalStop):
        if not isinstance(traj, ConcatPath):
            raise ConfigurationError("revival stopping needs a concatenation plan")
        return revival_time(traj, stopping.n)
    if isinstance(stopping, EntryStop):
        return first_entry_time(traj, stopping.region)
    raise ConfigurationError(f"unknown stopping rule {stopping!r}")


def _dynkin_fn(job, traj, rng):
    alpha, f, stopping, cont = job.params
    end = traj.end_time()
    full = discounted_integral(traj, f, alpha)
    tau = _stopping_time(stopping, traj)
    if tau == 0.0:
        # nothing happens before τ; the post-τ path is the whole path
        return [0.0, full, 0.0, full], int(traj.censored)
    pre = discounted_integral(traj, f, alpha, until=tau)
    cont_val = 0.0
    if math.isfinite(tau) and tau <= end:
        x_tau = value_at(traj, tau)
        if x_tau is not CEMETERY:
            cont_val = math.exp(-alpha * tau) * cont(x_tau, traj, rng)
    return [full - pre - cont_val, full, pre, cont_val], int(traj.censored)


class _OracleContinuation:
    def __init__(self, sg: SubGenerator, u: np.ndarray):
        self.lookup = {s: float(v) for s, v in zip(sg.states, u)}

    def __call__(self, x, traj, rng):
        try:
            return self.lookup[x]
        except KeyError:
            raise ConfigurationError(f"oracle has no state {x!r}") from None


class _NestedContinuation:
    def __init__(self, target, alpha, f, m, horizon):
        self.target, self.alpha, self.f, self.m, self.horizon = target, alpha, f, m, horizon
        self.calls = 0

    def __call__(self, x, traj, rng):
        plan, _ = _as_plan(self.target)
        if plan is not None:
            used = x.tag - traj.start_stage
            inner = plan.with_truncation(max_revivals=max(plan.max_revivals - used, 0))
            start = (x.tag, x.value)
        else:
            inner, start = self.target, x
        acc = 0.0
        for _ in range(self.m):
            acc += discounted_integral(_draw(inner, start, self.horizon, rng), self.f, self.alpha)
        return acc / self.m


def _lifetime_fn(job, traj, rng):
    hit = float(getattr(traj, "end_reason", "") == "max_revivals")
    if traj.censored:
        return [traj.censored_at, hit], 1
    return [traj.lifetime, hit], 0


_FUNCTIONALS: dict[str, Callable] = {
    "resolvent": _resolvent_fn,
    "semigroup": _semigroup_fn,
    "dynkin": _dynkin_fn,
    "lifetime": _lifetime_fn,
}


def mc_lifetime(
    target, start, n: int, rng: RngStream, horizon: float = math.inf, workers: int = 1, truncation: bool = False
):
    """Mean lifetime ``E ζ``; censored paths contribute their censoring time and are flagged.

    With ``truncation=True`` also returns the fraction of paths that were
    killed by the revival budget rather than by their own law.
    """
    _check_n(n)
    t_cut = min(horizon, _target_horizon(target))
    job = _Job("lifetime", _with_horizon(target, t_cut), _normalize_start(target, start), t_cut, ())
    values, censored = _replicate(job, n, rng, workers)
    rep = _report(values[:, 0], rng.seed, censored, label="lifetime")
    rep.flagged = rep.censored_fraction > CENSOR_CAP
    if truncation:
        return rep, _report(values[:, 1], rng.seed, censored, label="truncation_hit_rate")
    return rep


def oracle_generator(target) -> SubGenerator:
    """The exact generator matching a finite-chain ``target``'s truncation."""
    plan, spec = _as_plan(target)
    if plan is not None:
        return assemble_concatenated(plan)
    if not isinstance(spec, FiniteChain):
        raise UnsupportedEngineError("oracle continuation needs finite chains")
    return SubGenerator.from_chain(spec)


def dynkin_residual(
    target,
    start,
    stopping,
    alpha: float,
    f: StateFunction,
    n: int,
    rng: RngStream,
    continuation: str | tuple = "oracle",
    horizon: float | None = None,
    workers: int = 1,
) -> EstimateReport:
    """Estimate ``U_α f(x) - E∫_0^τ e^{-αt} f dt - E[e^{-ατ} U_α f(X_τ); τ < ∞]``.

    All three terms are functionals of the same path, so the residual is the
    mean of per-path differences. ``continuation`` is ``"oracle"`` (exact
    ``U_α f`` from the assembled generator, finite chains only) or
    ``("nested", M)`` (``M`` fresh paths from ``X_τ``). When ``τ = 0`` the
    post-``τ`` path is the path itself and the residual vanishes identically.
    """
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    _check_n(n)
    sup = f.sup_norm
    if sup == 0.0:
        return EstimateReport(0.0, 0.0, n, rng.seed, label="dynkin")
    t_cut = _auto_horizon(alpha, sup) if horizon is None else horizon
    t_cut = min(t_cut, _target_horizon(target))
    target_cut = _with_horizon(target, t_cut)
    if continuation == "oracle":
        sg = oracle_generator(target)
        cont = _OracleContinuation(sg, exact_resolvent(sg, alpha, f))
    elif isinstance(continuation, tuple) and continuation[0] == "nested":
        m = int(continuation[1])
        if m < 10:
            raise ConfigurationError(f"nested continuation needs M >= 10, got {m}")
        cont = _NestedContinuation(target_cut, alpha, f, m, t_cut)
    else:
        raise ConfigurationError(f"unknown continuation {continuation!r}")
    job = _Job("dynkin", target_cut, _normalize_start(target, start), t_cut, (alpha, f, stopping, cont))
    values, censored = _replicate(job, n, rng, workers)
    # the cut loses at most sup e^{-αT}/α from the full integral and the continuation alike
    bias = 2 * sup * math.exp(-alpha * t_cut) / alpha if math.isfinite(t_cut) else 0.0
    rep = _report(values[:, 0], rng.seed, censored, bias, "dynkin")
    if not values[:, 0].any():
        rep.stderr = 0.0
    return rep


# --------------------------------------------------------------------------
# revival formula


@dataclass
class RevivalGapReport:
    gap: EstimateReport
    lhs: EstimateReport
    rhs: EstimateReport
    identically_zero: bool
    revival_fraction: float

    def passed(self, sigma: float = 3.0) -> bool:
        return self.identically_zero or self.gap.within(0.0, sigma)


def _revival_fn(job, traj, rng):
    n, fs, times, gs, kernel = job.params
    m = len(fs)
    r = revival_time(traj, n)
    if not math.isfinite(r):
        return [0.0] * (3 * m) + [0.0], int(traj.censored)
    if times and not times[-1] < r:
        return [0.0] * (3 * m) + [1.0], 0
    weight = 1.0
    for t_i, g in zip(times, gs):
        weight *= g.value_at(value_at(traj, t_i))
        if weight == 0.0:
            break
    seg = traj.segments[n - 1]
    ep = exit_point(seg.path)
    lhs = [f(seg.revival_point) * weight for f in fs]
    rhs = [kernel_expectation(kernel, ep, f) * weight for f in fs]
    return [a - b for a, b in zip(lhs, rhs)] + lhs + rhs + [1.0], 0


_FUNCTIONALS["revival"] = _revival_fn


def revival_formula_test(
    plan: ConcatenationPlan,
    start,
    n: int,
    f,
    g_spec: tuple[Sequence[float], Sequence[StateFunction]] = ((), ()),
    n_samples: int = 100_000,
    rng: RngStream | None = None,
    workers: int = 1,
):
    """Common-random-number check of ``E[f(X_{R^n}) J] = E[K^n f(X^n_{ζ-}) J]``.

    ``J = Π g_i(X_{t_i}) 1{t_k < R^n} 1{R^n < ∞}``; both sides are computed on
    the same composite paths and the gap is their per-path difference. ``f``
    may be a list, in which case all functions share the same paths and a
    list of reports is returned.
    """
    if rng is None:
        raise ConfigurationError("revival_formula_test needs an rng")
    _check_n(n_samples)
    fs = list(f) if isinstance(f, (list, tuple)) else [f]
    times, gs = tuple(g_spec[0]), tuple(g_spec[1])
    if len(times) != len(gs) or any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigurationError("g_spec needs strictly increasing times, one function per time")
    start = _normalize_start(plan, start)
    if n < start[0] or n - start[0] + 1 > plan.max_revivals:
        raise ConfigurationError(f"revival {n} is outside the plan's truncation")
    stage = plan.stage(n)
    if stage is None or stage.kernel is None:
        raise ConfigurationError(f"stage {n} has no kernel")
    job = _Job("revival", plan, start, plan.horizon, (n, tuple(fs), times, gs, stage.kernel))
    values, censored = _replicate(job, n_samples, rng, workers)
    m = len(fs)
    revived = float(np.mean(values[:, 3 * m]))
    out = []
    for j in range(m):
        gap = _report(values[:, j], rng.seed, censored, label="gap")
        lhs = _report(values[:, m + j], rng.seed, censored, label="lhs")
        rhs = _report(values[:, 2 * m + j], rng.seed, censored, label="rhs")
        zero = not values[:, j].any()
        if zero:
            gap.stderr = 0.0
        out.append(RevivalGapReport(gap, lhs, rhs, zero, revived))
    return out if isinstance(f, (list, tuple)) else out[0]


# --------------------------------------------------------------------------
# Post-Widder inversion


def post_widder_invert(resolvent_oracle: Callable[[float, int], Sequence], t: float, k: int):
    """Approximate ``g(t)`` from its Laplace transform ``φ``.

    Uses the single-limit Post-Widder member
    ``(-1)^k / k! · α^{k+1} φ^{(k)}(α)`` at ``α = k/t``; the error is
    ``O(1/k)`` for smooth ``g``. ``resolvent_oracle(alpha, k)`` returns the
    derivatives ``[φ(α), φ'(α), ..., φ^{(k)}(α)]`` (scalars or vectors).
    """
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    if k < 1:
        raise DomainError(f"k must be at least 1, got {k}")
    alpha = k / t
    derivs = resolvent_oracle(alpha, k)
    dk = np.asarray(derivs[k], dtype=float)
    coef = math.exp((k + 1) * math.log(alpha) - math.lgamma(k + 1))
    out = (-1) ** k * coef * dk
    return float(out) if out.ndim == 0 else out


def rational_laplace(rate: float) -> Callable[[float, int], list]:
    """Derivatives of ``φ(α) = 1/(rate + α)``, the transform of ``e^{-rate t}``."""

    def oracle(alpha: float, k: int) -> list:
        return [(-1) ** j * math.exp(math.lgamma(j + 1) - (j + 1) * math.log(rate + alpha)) for j in range(k + 1)]

    return oracle


def chain_laplace(sg: SubGenerator, f) -> Callable[[float, int], list]:
    """Derivatives of ``α -> U_α f`` for a finite chain."""
    from .oracle import laplace_derivatives

    def oracle(alpha: float, k: int) -> list:
        return laplace_derivatives(sg, f, alpha, k)

    return oracle


# --------------------------------------------------------------------------
# output


REPORT_COLUMNS = ("command", "label", "estimate", "stderr", "n", "seed", "censored_fraction", "bias_bound", "flags", "pass")


def reports_to_csv(rows: Sequence[dict], header_lines: Sequence[str] = ()) -> str:
    """One CSV row per report; ``header_lines`` become leading ``#`` comments."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: row.get(k, "") for k in REPORT_COLUMNS})
    return buf.getvalue()


def report_row(command: str, label: str, rep: EstimateReport, passed: bool | None) -> dict:
    return {
        "command": command,
        "label": label,
        "estimate": repr(rep.value),
        "stderr": repr(rep.stderr),
        "n": rep.n_samples,
        "seed": rep.seed,
        "censored_fraction": repr(rep.censored_fraction),
        "bias_bound": repr(rep.bias_bound),
        "flags": "flagged" if rep.flagged else "",
        "pass": "" if passed is None else str(bool(passed)).lower(),
    }
