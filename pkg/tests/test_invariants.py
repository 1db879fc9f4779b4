"""Cross-module invariants: exact identities and their Monte Carlo counterparts."""

import math

import numpy as np
from conftest import chain, table
from hypothesis import given
from hypothesis import strategies as st

from concatmc.concat import sample_concatenated
from concatmc.estimate import mc_resolvent, mc_semigroup
from concatmc.functions import Const, Indicator, Table
from concatmc.oracle import SubGenerator, assemble_concatenated, exact_resolvent, exact_semigroup
from concatmc.pasting import PastingSpec, first_entry_times, make_alternating_plan, project_path
from concatmc.rng import RngStream


def test_semigroup_consistency_all_states_and_indicators():
    c = chain(["a", "b", "c"], {"a": {"b": 1.0}, "b": {"c": 0.5, "a": 0.5}, "c": {"a": 1.0}}, {"c": 0.7})
    sg = SubGenerator.from_chain(c)
    fs = [Indicator([lab]) for lab in c.labels]
    for i, x in enumerate(c.labels):
        reps = mc_semigroup(c, x, 0.8, fs, 10_000, RngStream(31).child(i))
        for f, rep in zip(fs, reps):
            assert rep.within(exact_semigroup(sg, 0.8, f)[i]), (x, f)


def test_resolvent_identity(four_state_plan):
    sg = assemble_concatenated(four_state_plan)
    f = np.array([1.0, -2.0, 0.5, 3.0])
    for a in (0.5, 1.0, 2.0):
        for b in (0.5, 1.0, 2.0):
            lhs = exact_resolvent(sg, a, f) - exact_resolvent(sg, b, f)
            rhs = (b - a) * exact_resolvent(sg, a, exact_resolvent(sg, b, f))
            assert np.abs(lhs - rhs).max() < 1e-9


def test_assembly_matches_stagewise_decomposition(four_state_plan):
    """Stage-1 block of the assembled resolvent = U^1 f_1 + (αI - Q_1)^{-1} diag(c_1) K U^2 f_2."""
    first = four_state_plan.stage(1)
    second = four_state_plan.stage(2)
    alpha = 0.9
    f1, f2 = np.array([1.0, 0.25]), np.array([-1.0, 2.0])
    q1, q2 = first.process.subgenerator(), second.process.subgenerator()
    u2 = np.linalg.solve(alpha * np.eye(2) - q2, f2)
    k = first.kernel.matrix(first.process.labels, second.process.labels)
    kill = np.diag(first.process.kill)
    u1 = np.linalg.solve(alpha * np.eye(2) - q1, f1 + kill @ k @ u2)
    full = exact_resolvent(assemble_concatenated(four_state_plan), alpha, np.concatenate([f1, f2]))
    assert np.abs(full[:2] - u1).max() < 1e-9
    assert np.abs(full[2:] - u2).max() < 1e-9


def _violating():
    minus = chain(["s", "l"], {"s": {"l": 1.0}}, {"l": 1.0})
    plus = chain(["s", "r"], {"s": {"r": 2.0}}, {"r": 1.0})
    return PastingSpec(minus, plus, table({"l": {"s": 1.0}}), table({"r": {"s": 1.0}}))


@given(st.integers(0, 2**32 - 1))
def test_exit_from_shared_set_is_pathwise(seed):
    """τ_{-1} ∧ τ_{+1} on the composite equals the projected path's first exit from the shared set."""
    ps = _violating()
    plan = make_alternating_plan(ps, max_revivals=20)
    cp = sample_concatenated(plan, (1, "s"), RngStream(seed))
    direct = math.inf
    for start, seg in zip((0.0,) + cp.cumulative_lifetimes, cp.segments):
        hits = [start + t for t, v in zip(seg.path.times, seg.path.values) if v != "s"]
        if hits:
            direct = hits[0]
            break
    assert first_entry_times(project_path(cp), "shared-complement", ps) == direct


@given(st.integers(0, 2**32 - 1))
def test_projection_never_tags(seed):
    ps = _violating()
    cp = sample_concatenated(make_alternating_plan(ps, max_revivals=10), (2, "s"), RngStream(seed))
    p = project_path(cp)
    assert p.tag == 0
    seen = [v for seg in cp.segments for v in seg.path.values]
    assert set(p.values) <= set(seen)


def test_odd_odd_and_even_even_collapse():
    plan = make_alternating_plan(_violating(), max_revivals=200)
    f = Indicator(["s"])
    for a, b in ((1, 3), (2, 4)):
        ra = mc_resolvent(plan, (a, "s"), 1.0, f, 10_000, RngStream(41).child(a))
        rb = mc_resolvent(plan, (b, "s"), 1.0, f, 10_000, RngStream(41).child(b))
        assert abs(ra.value - rb.value) <= 3 * math.hypot(ra.stderr, rb.stderr)


def test_laplace_consistency_by_quadrature():
    """Simpson quadrature of e^{-αt} T_t f over Monte Carlo semigroup values matches U_α f."""
    c = chain(["a", "b"], {"a": {"b": 1.0}, "b": {"a": 1.0}}, {"b": 1.0})
    sg = SubGenerator.from_chain(c)
    f = Indicator(["a"])
    alpha, h, tmax = 1.0, 0.25, 16.0
    grid = np.arange(0.0, tmax + h / 2, h)
    w = np.ones(grid.size)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    w *= h / 3 * np.exp(-alpha * grid)
    est = np.zeros(grid.size)
    var = np.zeros(grid.size)
    for i, t in enumerate(grid):
        rep = mc_semigroup(c, "a", float(t), f, 2000, RngStream(51).child(i))
        est[i], var[i] = rep.value, rep.stderr**2
    exact_u = exact_resolvent(sg, alpha, f)[0]
    # deterministic quadrature error, measured on the exact semigroup
    quad = abs(float(w @ np.array([exact_semigroup(sg, float(t), f)[0] for t in grid])) - exact_u)
    res = mc_resolvent(c, "a", alpha, f, 10_000, RngStream(52))
    combined = math.sqrt(float(w**2 @ var) + res.stderr**2)
    assert abs(float(w @ est) - res.value) <= 3 * combined + quad + res.bias_bound


def test_excessivity_monte_carlo(four_state_plan):
    sg = assemble_concatenated(four_state_plan)
    alpha = 1.0
    f = Table({"a1": 1.0, "a2": 0.0, "b1": 2.0, "b2": 0.5})
    u = exact_resolvent(sg, alpha, f)
    uf = Table({s.value: u[i] for i, s in enumerate(sg.states)})
    for j, start in enumerate([(1, "a1"), (2, "b2")]):
        base = mc_resolvent(four_state_plan, start, alpha, f, 10_000, RngStream(61).child(j))
        for k, t in enumerate((0.25, 1.0, 3.0)):
            rep = mc_semigroup(four_state_plan, start, t, uf, 10_000, RngStream(62).child(j, k))
            assert math.exp(-alpha * t) * rep.value <= base.value + 3 * math.hypot(base.stderr, rep.stderr)


def test_constant_revival_gap_is_identically_zero(four_state_plan):
    from concatmc.estimate import revival_formula_test

    rep = revival_formula_test(four_state_plan, (1, "a1"), 1, Const(2.5), n_samples=2000, rng=RngStream(1))
    assert rep.identically_zero and rep.gap.value == 0.0


def _consistent():
    minus = chain(["s", "l"], {"s": {"l": 1.0}, "l": {"s": 1.0}}, {"s": 1.0})
    plus = chain(["s", "r"], {"s": {"r": 1.0}, "r": {"s": 1.0}}, {"s": 1.0})
    return PastingSpec(minus, plus, table({"s": {"r": 1.0}}), table({"s": {"l": 1.0}}))


def test_chapman_kolmogorov_spot_check():
    """T_{s+t} f = T_s (T_t f) for the projection of a consistent pasting, all terms by Monte Carlo."""
    plan = make_alternating_plan(_consistent(), max_revivals=200)
    f = Indicator(["l"])
    s, t = 0.4, 0.7
    starts = {"s": (1, "s"), "l": (1, "l"), "r": (2, "r")}
    inner = {z: mc_semigroup(plan, st_, t, f, 10_000, RngStream(71).child(i)) for i, (z, st_) in enumerate(starts.items())}
    g = Table({z: rep.value for z, rep in inner.items()})
    outer = mc_semigroup(plan, (1, "s"), s, g, 10_000, RngStream(72))
    direct = mc_semigroup(plan, (1, "s"), s + t, f, 10_000, RngStream(73))
    slack = max(rep.stderr for rep in inner.values())
    assert abs(outer.value - direct.value) <= 3 * (math.hypot(outer.stderr, direct.stderr) + slack)
    union = SubGenerator(("l", "s", "r"), np.array([[-1.0, 1.0, 0.0], [1.0, -2.0, 1.0], [0.0, 1.0, -1.0]]))
    assert direct.within(exact_semigroup(union, s + t, [1.0, 0.0, 0.0])[1])
