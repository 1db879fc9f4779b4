import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg
from conftest import chain, table
from hypothesis import given
from hypothesis import strategies as st

from concatmc.concat import ConcatenationPlan, Stage
from concatmc.errors import ConfigurationError, EmptyDomainError, NumericError
from concatmc.functions import Const, Indicator
from concatmc.oracle import (
    SubGenerator,
    assemble_alternating_pair,
    assemble_concatenated,
    assemble_instant_revival,
    exact_entry_functionals,
    exact_resolvent,
    exact_semigroup,
    laplace_derivatives,
)
from concatmc.spaces import SpacePoint
from concatmc.transfer import Dirac


def single(c):
    return SubGenerator(("x",), np.array([[-c]]))


def test_single_state_closed_forms():
    for c in (0.5, 1.0, 3.0):
        for alpha in (0.1, 1.0, 7.0):
            assert exact_resolvent(single(c), alpha, [1.0])[0] == pytest.approx(1 / (alpha + c), rel=1e-14)
        assert exact_semigroup(single(c), 2.0, [1.0])[0] == pytest.approx(math.exp(-2 * c), rel=1e-10)


def test_rejects_bad_generators_and_alpha():
    with pytest.raises(ConfigurationError):
        SubGenerator(("a", "b"), np.array([[-1.0, -0.5], [0.0, -1.0]]))
    with pytest.raises(ConfigurationError):
        SubGenerator(("a",), np.array([[0.5]]))
    with pytest.raises(NumericError):
        exact_resolvent(single(1.0), 0.0, [1.0])
    with pytest.raises(NumericError):
        exact_semigroup(single(1.0), -1.0, [1.0])


def test_zero_function_is_exact_zero():
    assert not exact_resolvent(single(1.0), 1.0, [0.0]).any()


def test_two_stage_resolvent():
    # stage 1 dies at rate 1 into stage 2 (rate 2); U_1 1 = 1/2 + (1/2)(1/3)
    plan = ConcatenationPlan(
        [Stage(chain(["x"], kill={"x": 1.0}), Dirac(SpacePoint(0, "y"))), Stage(chain(["y"], kill={"y": 2.0}))],
        max_revivals=1,
    )
    sg = assemble_concatenated(plan)
    assert sg.states == (SpacePoint(1, "x"), SpacePoint(2, "y"))
    u = exact_resolvent(sg, 1.0, [1.0, 1.0])
    assert u[0] == pytest.approx(2 / 3, rel=1e-14)
    assert u[1] == pytest.approx(1 / 3, rel=1e-14)


def test_concatenated_block_structure(four_state_plan):
    sg = assemble_concatenated(four_state_plan)
    q = sg.matrix
    # kill of a1 (0.5) is routed through row a1 of the table
    assert q[0, 2:].tolist() == pytest.approx([0.15, 0.35])
    assert q[1, 2:].tolist() == pytest.approx([1.05, 0.45])
    assert np.allclose(q[2:, :2], 0)
    assert sg.kill.tolist() == pytest.approx([0, 0, 1.0, 2.0])
    one = assemble_concatenated(four_state_plan, n_stages=1)
    assert len(one) == 2


def test_resolvent_matches_laplace_integral(four_state_plan):
    """Independent check: integrate e^{-αt} expm(tQ) f numerically."""
    sg = assemble_concatenated(four_state_plan)
    f = np.array([1.0, 0.0, 2.0, -1.0])
    alpha = 0.7

    def integrand(t, i):
        return math.exp(-alpha * t) * (scipy.linalg.expm(t * sg.matrix) @ f)[i]

    u = exact_resolvent(sg, alpha, f)
    for i in range(4):
        val, _ = scipy.integrate.quad(integrand, 0, 80, args=(i,), limit=200, epsabs=1e-12)
        assert u[i] == pytest.approx(val, abs=1e-9)


def test_uniformization_matches_expm(four_state_plan):
    sg = assemble_concatenated(four_state_plan)
    f = np.array([0.3, -1.0, 2.0, 1.0])
    for t in (0.01, 0.5, 3.0, 40.0):
        ref = scipy.linalg.expm(t * sg.matrix) @ f
        assert np.allclose(exact_semigroup(sg, t, f), ref, rtol=0, atol=1e-10)


def test_semigroup_fallback_for_stiff_rates():
    sg = SubGenerator(("a", "b"), np.array([[-5000.0, 4999.0], [1.0, -1.0]]))
    ref = scipy.linalg.expm(1.0 * sg.matrix) @ np.ones(2)
    assert np.allclose(exact_semigroup(sg, 1.0, [1.0, 1.0]), ref, atol=1e-10)


def test_instant_revival_generator_is_conservative_when_every_death_revives():
    c = chain(["a", "b"], {"a": {"b": 1.0}}, {"b": 1.0})
    k = table({"b": {"a": 1.0}})
    sg = assemble_instant_revival(c, k)
    assert np.allclose(sg.matrix.sum(axis=1), 0)
    # never dies, so U_α 1 = 1/α
    assert exact_resolvent(sg, 2.0, [1, 1]) == pytest.approx([0.5, 0.5], rel=1e-14)


def test_instant_revival_hand_value():
    # a -> b at rate 1; a dies for good at rate 1, b dies at rate 1 and revives at a
    c = chain(["a", "b"], {"a": {"b": 1.0}}, {"a": 1.0, "b": 1.0})
    sg = assemble_instant_revival(c, table({"b": {"a": 1.0}}))
    assert np.allclose(sg.matrix, [[-2.0, 1.0], [1.0, -1.0]])
    # (I - Q') u = 1_a  =>  [[3, -1], [-1, 2]] u = (1, 0)
    u = exact_resolvent(sg, 1.0, [1.0, 0.0])
    assert u.tolist() == pytest.approx([2 / 5, 1 / 5], rel=1e-14)


def test_alternating_pair_layout():
    m = chain(["s", "l"], {"s": {"l": 1.0}}, {"s": 1.0})
    p = chain(["s", "r"], {"s": {"r": 1.0}}, {"s": 2.0})
    sg = assemble_alternating_pair(m, p, table({"s": {"s": 1.0}}), table({"s": {"s": 1.0}}))
    assert sg.states[0] == SpacePoint(1, "s") and sg.states[2] == SpacePoint(2, "s")
    assert sg.matrix[0, 2] == 1.0 and sg.matrix[2, 0] == 2.0


def test_entry_functionals_hand_values():
    # a -> b at rate 1, a dies at rate 1; absorbing {b}
    sg = SubGenerator(("a", "b"), np.array([[-2.0, 1.0], [0.0, -1.0]]))
    for alpha in (0.5, 1.0, 3.0):
        ef = exact_entry_functionals(sg, alpha, ["b"], [1.0, 9.0], [0.0, 1.0], [1.0, 1.0])
        assert ef.integral[0] == pytest.approx(1 / (alpha + 2), rel=1e-14)
        assert ef.boundary[0] == pytest.approx(1 / (alpha + 2), rel=1e-14)
        assert ef.kill[0] == pytest.approx(1 / (alpha + 2), rel=1e-14)
        assert (ef.integral[1], ef.boundary[1], ef.kill[1]) == (0.0, 1.0, 0.0)


def test_entry_functionals_decompose_resolvent(four_state_plan):
    """Strong Markov at τ_A: U f = integral + boundary-with-g=Uf."""
    sg = assemble_concatenated(four_state_plan)
    f = np.array([1.0, 2.0, -0.5, 0.3])
    u = exact_resolvent(sg, 1.3, f)
    ef = exact_entry_functionals(sg, 1.3, [SpacePoint(2, "b1")], f, u)
    assert np.allclose(ef.integral + ef.boundary, u, atol=1e-12)


def test_entry_functionals_errors():
    sg = single(1.0)
    with pytest.raises(EmptyDomainError):
        exact_entry_functionals(sg, 1.0, ["x"], [1.0], [1.0])
    with pytest.raises(ConfigurationError):
        exact_entry_functionals(sg, 1.0, ["nope"], [1.0], [1.0])


def test_laplace_derivatives_closed_form():
    c, alpha = 1.5, 0.8
    ds = laplace_derivatives(single(c), [1.0], alpha, 6)
    for j, d in enumerate(ds):
        assert d[0] == pytest.approx((-1) ** j * math.factorial(j) / (alpha + c) ** (j + 1), rel=1e-13)


def test_vector_coercion():
    sg = SubGenerator((SpacePoint(1, "a"), SpacePoint(2, "a")), np.array([[-1.0, 1.0], [0.0, -1.0]]))
    assert sg.vector(Indicator(["a"], tag=2)).tolist() == [0.0, 1.0]
    assert sg.vector(Const(2.0)).tolist() == [2.0, 2.0]
    with pytest.raises(ConfigurationError):
        sg.vector([1.0])
    assert sg.to_csv().splitlines()[0] == ",1:a,2:a"


@given(
    st.lists(st.floats(0.0, 5.0), min_size=9, max_size=9),
    st.lists(st.floats(0.0, 3.0), min_size=3, max_size=3),
    st.floats(0.05, 10.0),
)
def test_resolvent_bounds_property(offdiag, kill, alpha):
    """0 <= U_α 1 <= 1/α, and the resolvent solves its linear system."""
    q = np.array(offdiag).reshape(3, 3)
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -(q.sum(axis=1) + np.array(kill)))
    sg = SubGenerator(("a", "b", "c"), q)
    u = exact_resolvent(sg, alpha, np.ones(3))
    assert np.all(u >= -1e-12) and np.all(u <= 1 / alpha * (1 + 1e-10))
    assert np.allclose((alpha * np.eye(3) - q) @ u, 1.0, atol=1e-9)
