import math

import numpy as np
import pytest
from conftest import brownian, chain, table

from concatmc.concat import sample_concatenated
from concatmc.errors import ConfigurationError
from concatmc.estimate import mc_resolvent
from concatmc.functions import Const, Indicator
from concatmc.oracle import SubGenerator, assemble_instant_revival, exact_resolvent
from concatmc.pasting import (
    PastingSpec,
    check_consistency,
    first_entry_times,
    make_alternating_plan,
    project_path,
    projection_criterion_test,
)
from concatmc.process import sample_path
from concatmc.rng import RngStream
from concatmc.spaces import Region, SpacePoint
from concatmc.transfer import ExitIdentity


def violating():
    minus = chain(["s", "l"], {"s": {"l": 1.0}}, {"l": 1.0})
    plus = chain(["s", "r"], {"s": {"r": 2.0}}, {"r": 1.0})
    return PastingSpec(minus, plus, table({"l": {"s": 1.0}}), table({"r": {"s": 1.0}}))


def identical():
    c = chain(["a", "b"], {"a": {"b": 1.0}, "b": {"a": 1.0}}, {"b": 1.0})
    k = table({"b": {"a": 1.0}})
    return PastingSpec(c, c, k, k)


def consistent():
    """Each side dies at s exactly where the other side would jump into its own part."""
    minus = chain(["s", "l"], {"s": {"l": 1.0}, "l": {"s": 1.0}}, {"s": 1.0})
    plus = chain(["s", "r"], {"s": {"r": 1.0}, "r": {"s": 1.0}}, {"s": 1.0})
    return PastingSpec(minus, plus, table({"s": {"r": 1.0}}), table({"s": {"l": 1.0}}))


UNION = SubGenerator(("l", "s", "r"), np.array([[-1.0, 1.0, 0.0], [1.0, -2.0, 1.0], [0.0, 1.0, -1.0]]))


def test_regions():
    ps = violating()
    assert ps.shared == Region.of_labels(["s"])
    assert ps.minus_only == Region.of_labels(["l"])
    assert ps.plus_only == Region.of_labels(["r"])
    assert not ps.identical and identical().identical


def test_disjoint_spaces_rejected():
    a = chain(["a"], kill={"a": 1.0})
    b = chain(["b"], kill={"b": 1.0})
    with pytest.raises(ConfigurationError):
        PastingSpec(a, b, table({"a": {"b": 1.0}}), table({"b": {"a": 1.0}}))


def test_kernel_targets_checked():
    ps = violating()
    with pytest.raises(ConfigurationError):
        PastingSpec(ps.minus, ps.plus, table({"l": {"l": 1.0}}), ps.kernel_plus)


def test_alternating_stage_spaces():
    ps = violating()
    plan = make_alternating_plan(ps, max_revivals=5)
    for n in range(1, 7):
        stage = plan.stage(n)
        assert stage.process.same_law(ps.minus if n % 2 else ps.plus)
        assert stage.process.tag == n


def test_no_revivals_is_minus_process():
    ps = violating()
    plan = make_alternating_plan(ps, max_revivals=0)
    cp = sample_concatenated(plan, (1, "s"), RngStream(1))
    direct = sample_path(ps.minus.retag(1), SpacePoint(1, "s"), math.inf, RngStream(1))
    assert len(cp.segments) == 1 and cp.segments[0].path == direct


def test_project_path_merges_equal_values():
    ps = identical()
    plan = make_alternating_plan(ps, max_revivals=3)
    cp = sample_concatenated(plan, (1, "a"), RngStream(2))
    p = project_path(cp)
    assert p.tag == 0 and p.lifetime == cp.lifetime
    assert all(a != b for a, b in zip(p.values, p.values[1:]))
    assert all(a < b for a, b in zip(p.times, p.times[1:]))


def test_project_path_of_diffusion_revival():
    bm = brownian(dt=1e-3)
    ps = PastingSpec(bm, bm, ExitIdentity(0), ExitIdentity(0))
    plan = make_alternating_plan(ps, max_revivals=2)
    cp = sample_concatenated(plan, (1, 0.5), RngStream(3))
    p = project_path(cp)
    assert p.tag == 0 and p.lifetime == cp.lifetime


def test_first_entry_mean_is_one():
    ps = violating()
    rng = RngStream(4)
    n = 20_000
    taus = [first_entry_times(sample_path(ps.minus, SpacePoint(0, "s"), math.inf, rng), "minus-only", ps) for _ in range(n)]
    mean = float(np.mean(taus))
    assert abs(mean - 1.0) <= 3 * np.std(taus) / math.sqrt(n)


def test_first_entry_named_targets():
    ps = violating()
    p = sample_path(ps.plus, SpacePoint(0, "r"), math.inf, RngStream(1))
    assert first_entry_times(p, "plus-only", ps) == 0.0
    assert first_entry_times(p, "minus-only", ps) == math.inf
    with pytest.raises(ConfigurationError):
        first_entry_times(p, "minus-only")
    with pytest.raises(ConfigurationError):
        first_entry_times(p, "elsewhere", ps)


def test_violating_condition_one_value():
    rep = check_consistency(violating(), 1.0, fs=[Indicator(["s"])])
    assert not rep.passed
    r1 = [r for r in rep.residuals if r.condition == "1"]
    assert r1[0].value == pytest.approx(1 / 6, abs=1e-12)
    assert (r1[0].lhs, r1[0].rhs) == (pytest.approx(0.5), pytest.approx(1 / 3))


def test_violating_projection_residual_is_exact():
    rep = check_consistency(violating(), 1.0, fs=[Indicator(["s"])])
    proj = [r for r in rep.residuals if r.condition == "projection"]
    assert proj[0].lhs == pytest.approx(7 / 11, rel=1e-12)
    assert proj[0].rhs == pytest.approx(6 / 11, rel=1e-12)


def test_identical_route():
    rep = check_consistency(identical(), 1.0)
    assert rep.identical and rep.passed and rep.route == "identical iterations"
    assert {r.condition for r in rep.residuals} >= {"direct-B", "direct-C"}
    for cond in ("1", "direct-B", "direct-C", "projection"):
        assert rep.worst(cond) < 1e-9
    # with no exclusive sets τ = ∞, so the literal condition (2) is reported but cannot hold
    assert rep.worst("2a") > 0.1


def test_consistent_pair_passes_all_conditions():
    rep = check_consistency(consistent(), 0.7)
    assert not rep.identical and rep.passed
    for cond in ("1", "2a", "2b", "projection"):
        assert rep.worst(cond) < 1e-9


def test_zero_function_condition_one():
    rep = check_consistency(violating(), 1.0, fs=[Const(0.0)])
    assert rep.worst("1") == 0.0


def test_report_json_roundtrip():
    import json

    doc = json.loads(check_consistency(violating(), 1.0).to_json())
    assert doc["passed"] is False and doc["engine"] == "oracle"
    assert {"condition", "point", "residual", "tolerance"} <= set(doc["residuals"][0])


def test_engine_arguments():
    with pytest.raises(ConfigurationError):
        check_consistency(violating(), 0.0)
    with pytest.raises(ConfigurationError):
        check_consistency(violating(), 1.0, engine=("monte_carlo", 100))
    with pytest.raises(ConfigurationError):
        check_consistency(violating(), 1.0, engine="exact")


def test_monte_carlo_engine():
    bad = check_consistency(violating(), 1.0, fs=[Indicator(["s"])], engine=("monte_carlo", 20_000), rng=RngStream(5))
    assert not bad.passed and any(r.condition == "1" for r in bad.failing())
    good = check_consistency(consistent(), 1.0, engine=("monte_carlo", 5000), rng=RngStream(6))
    assert good.passed


def test_pasted_resolvent_matches_union_chain():
    plan = make_alternating_plan(consistent(), max_revivals=200)
    u = exact_resolvent(UNION, 1.0, [0.0, 1.0, 0.0])
    for stage, x in ((1, "s"), (2, "s"), (1, "l"), (2, "r")):
        rep = mc_resolvent(plan, (stage, x), 1.0, Indicator(["s"]), 10_000, RngStream(7).child(stage))
        assert rep.within(u[UNION.states.index(x)]), (stage, x, rep)


def test_identical_pasting_is_instant_revival():
    ps = identical()
    plan = make_alternating_plan(ps, max_revivals=200)
    u = exact_resolvent(assemble_instant_revival(ps.minus, ps.kernel_minus), 1.0, [1.0, 0.0])
    rep = mc_resolvent(plan, (1, "a"), 1.0, Indicator(["a"]), 10_000, RngStream(8))
    assert rep.within(u[0])


def test_projection_criterion():
    plan = make_alternating_plan(violating(), max_revivals=200)
    rep = projection_criterion_test(plan, 1.0, Indicator(["s"]), ["s", "l"], 10_000, RngStream(9))
    assert rep.result("l").status == "single-sided, skipped"
    res = rep.result("s")
    assert not rep.passed and res.difference > 5 * res.pooled_stderr
    ok = projection_criterion_test(make_alternating_plan(consistent(), 200), 1.0, Indicator(["s"]), ["s"], 5000, RngStream(10))
    assert ok.passed


def test_odd_odd_collapse():
    plan = make_alternating_plan(violating(), max_revivals=200)
    with pytest.raises(ConfigurationError):
        projection_criterion_test(plan, 1.0, Indicator(["s"]), ["s"], 10, RngStream(1), n_odd=1, n_even=3)
    # copies of equal parity run the same law; with shared randomness the values agree
    a = mc_resolvent(plan, (1, "s"), 1.0, Indicator(["s"]), 2000, RngStream(11))
    b = mc_resolvent(plan, (3, "s"), 1.0, Indicator(["s"]), 2000, RngStream(11))
    assert a.value == pytest.approx(b.value, abs=1e-12)
