import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbrm.bounds import (
    HorizonBoundInputs,
    bound_horizon_closed_form,
    bound_step_deterministic,
    bound_step_simplified,
    bound_step_stochastic,
    bound_step_uniform,
    iterate_schedule,
    make_step_params,
    propagate_bound_sequence,
    subset_coeffs,
)
from rbrm.errors import ComplexityGuardError, InvalidInputError, UnsupportedInputError

from factories import brute_force_expectation, random_psd, random_small_problem, scalar_problem

# Worked two-sensor step: a=1, b=0, ell=1, p=(0.5, 0.5), c_1=c_2=1, c_12=2.
M2_STOCHASTIC = 0.25 + 0.125 + 0.125 + 0.25 / 3
M2_SIMPLIFIED = 0.75
M2_UNIFORM = 0.625


def _m2_params():
    return make_step_params(1.0, 0.0, [0.5, 0.5], [[[1.0]], [[1.0]]])


def test_subset_coeffs_examples():
    beacon = np.array([[4.0, 0.0], [0.0, 0.0]])
    assert subset_coeffs([beacon], 1.0, 0.1)[frozenset({0})] == (0.0, 1.0)
    sigma = 0.3
    ex = sigma**-2 * np.diag([1.0, 0.0])
    ey = sigma**-2 * np.diag([0.0, 1.0])
    both = subset_coeffs([ex, ey], 1.0, 0.0)[frozenset({0, 1})]
    assert both[0] == pytest.approx(sigma**-2, rel=1e-15) and both[1] == 1.0
    rng = np.random.default_rng(0)
    three = subset_coeffs([random_psd(rng, 2) for _ in range(3)], 1.2, 0.3)
    assert len(three) == 8
    assert three[frozenset()] == (0.0, 1.0)


def test_concavity_precondition_holds_for_every_subset():
    rng = np.random.default_rng(1)
    for _ in range(100):
        a, b = rng.uniform(0.1, 3), rng.uniform(0, 2)
        for c, d in subset_coeffs([random_psd(rng, 2) for _ in range(3)], a, b).values():
            assert a * d - b * c == pytest.approx(a, rel=1e-12)
            assert c >= 0 and d >= 1


def test_deterministic_step_examples():
    assert bound_step_deterministic(2.0, 1.5, 0.2, 0.0) == pytest.approx(3.2)
    # scalar f=1, q=0.1, h=1, r=0.5, ell=1: lambda_min(info) = 1/r = 2
    v = bound_step_deterministic(1.0, 1.0, 0.1, 2.0)
    assert v == pytest.approx(1.1 / (2 * 1.1 + 1), abs=1e-15)
    assert v == pytest.approx(0.34375, abs=1e-15)
    pred = 1.1
    assert v == pytest.approx(pred - pred * pred / (pred + 0.5), abs=1e-15)


def test_deterministic_fixed_point():
    # ell = (ell + 0.1) / (2 (ell + 0.1) + 1)  <=>  2 ell^2 + 0.2 ell - 0.1 = 0
    expected = (-0.2 + math.sqrt(0.84)) / 4
    assert expected == pytest.approx(0.179129, abs=1e-6)
    ell = 5.0
    for _ in range(200):
        ell = bound_step_deterministic(ell, 1.0, 0.1, 2.0)
    assert ell == pytest.approx(expected, abs=1e-14)


def test_stochastic_step_examples():
    assert bound_step_stochastic(1.0, _m2_params()) == pytest.approx(M2_STOCHASTIC, abs=1e-15)
    assert M2_STOCHASTIC == pytest.approx(0.5833333333333333, abs=1e-15)
    zero = make_step_params(1.3, 0.2, [0.0, 0.0], [[[1.0]], [[2.0]]])
    assert bound_step_stochastic(0.7, zero) == pytest.approx(1.3 * 0.7 + 0.2)
    sure = make_step_params(1.3, 0.2, [1.0], [[[2.0]]])
    assert bound_step_stochastic(0.7, sure) == pytest.approx(bound_step_deterministic(0.7, 1.3, 0.2, 1.3 * 2.0 / 1.3))


def test_simplified_and_uniform_examples():
    p = _m2_params()
    assert bound_step_simplified(1.0, p) == pytest.approx(M2_SIMPLIFIED, abs=1e-15)
    assert bound_step_uniform(1.0, 1.0, 0.0, 1.0, 0.25) == pytest.approx(M2_UNIFORM, abs=1e-15)
    assert bound_step_simplified(0.4, make_step_params(1.0, 0.1, [0.0, 0.0], [[[1.0]], [[1.0]]])) == pytest.approx(0.5)
    single = make_step_params(1.1, 0.1, [0.3], [[[2.0]]])
    assert bound_step_simplified(0.9, single) == bound_step_stochastic(0.9, single)
    assert bound_step_uniform(0.4, 1.0, 0.1, 3.0, 1.0) == pytest.approx(0.5)
    assert bound_step_uniform(0.4, 1.0, 0.1, 0.0, 0.2) == pytest.approx(0.5)


def test_uniform_and_simplified_are_not_ordered_in_general():
    # documented: only stochastic <= each of them is guaranteed
    assert M2_UNIFORM < M2_SIMPLIFIED
    wide = make_step_params(1.0, 0.0, [0.5, 0.5], [[[0.01]], [[10.0]]])
    trace = {v: propagate_bound_sequence(1.0, [wide], v)[-1] for v in ("simplified", "uniform")}
    assert trace["uniform"] > trace["simplified"]


def test_propagate_examples():
    np.testing.assert_array_equal(propagate_bound_sequence(0.3, []), [0.3])
    np.testing.assert_allclose(propagate_bound_sequence(1.0, [_m2_params()])[-1], M2_STOCHASTIC, atol=1e-15)


def test_guard_refuses_more_than_twenty_sensors():
    with pytest.raises(ComplexityGuardError):
        make_step_params(1.0, 0.0, [0.5] * 21, [[[1.0]]] * 21)


def test_invalid_step_params():
    with pytest.raises(InvalidInputError):
        make_step_params(1.0, 0.0, [1.5], [[[1.0]]])
    with pytest.raises(InvalidInputError):
        make_step_params(1.0, -0.1, [0.5], [[[1.0]]])
    with pytest.raises(InvalidInputError):
        make_step_params(0.0, 0.1, [0.5], [[[1.0]]])
    with pytest.raises(InvalidInputError):
        propagate_bound_sequence(-1.0, [])


def test_scalar_sequence_matches_riccati():
    f, q, r, P0, T = 1.05, 0.07, 0.3, 2.0, 50
    pr = scalar_problem(f, q, r, P0, T)
    trace = pr.bound_trace()
    p = P0
    for t in range(1, T + 1):
        pred = f * f * p + q
        p = pred - pred * pred / (pred + r)
        assert trace[t] == pytest.approx(p, abs=1e-12)


def _random_steps(rng, k=12):
    steps = []
    for _ in range(k):
        m = int(rng.integers(0, 5))
        a, b = rng.uniform(0.5, 2.0), rng.uniform(0.0, 0.5)
        steps.append(make_step_params(a, b, rng.uniform(size=m), [random_psd(rng, 2, rank=int(rng.integers(1, 3))) for _ in range(m)], n=2))
    return steps


def test_stochastic_below_simplified_and_uniform():
    rng = np.random.default_rng(3)
    for _ in range(100):
        steps = _random_steps(rng)
        ell0 = rng.uniform(0, 3)
        sto, sim, uni = (propagate_bound_sequence(ell0, steps, v) for v in ("stochastic", "simplified", "uniform"))
        assert np.all(sto <= sim * (1 + 1e-12))
        assert np.all(sto <= uni * (1 + 1e-12))


@pytest.mark.parametrize("variant", ["stochastic", "simplified", "uniform"])
def test_step_maps_monotone(variant):
    rng = np.random.default_rng(4)
    steps = _random_steps(rng, 50)
    pairs = np.sort(rng.uniform(0, 10, size=(10_000, 2)), axis=1)
    for k, (lo, hi) in enumerate(pairs):
        s = steps[k % len(steps)]
        assert propagate_bound_sequence(lo, [s], variant)[-1] <= propagate_bound_sequence(hi, [s], variant)[-1]


def test_closed_form_all_open_loop():
    inp = HorizonBoundInputs(1.0, 0.2, 0.7, 6, 6, 1.5)
    assert bound_horizon_closed_form(inp) == pytest.approx(1.5 + 0.2 * 6, abs=1e-12)


def test_closed_form_without_open_loop_matches_iteration():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, b, lam, ell0 = rng.uniform(0.5, 2), rng.uniform(0.01, 1), rng.uniform(0.1, 5), rng.uniform(0, 4)
        T = int(rng.integers(1, 30))
        ell = ell0
        for _ in range(T):
            ell = bound_step_deterministic(ell, a, b, lam)
        inp = HorizonBoundInputs.from_information(a, b, lam, 0, T, ell0)
        assert bound_horizon_closed_form(inp) == pytest.approx(ell, abs=1e-9)


def test_closed_form_dominates_every_placement_example():
    a, b, c, ell0, T, kappa = 1.1, 0.1, 0.5, 1.0, 5, 2
    cf = bound_horizon_closed_form(HorizonBoundInputs(a, b, c, kappa, T, ell0))
    values = []
    for pos in itertools.combinations(range(T), kappa):
        values.append(iterate_schedule(ell0, a, b, c, [t in pos for t in range(T)]))
    assert len(values) == 10
    assert all(v <= cf * (1 + 1e-12) for v in values)
    last = iterate_schedule(ell0, a, b, c, [False] * 3 + [True] * 2)
    assert cf == pytest.approx(last, rel=1e-12)


def test_closed_form_can_be_exceeded_when_a_below_one():
    # a=1/2, b=0, c=1 (so d=1), ell0=1, T=2, kappa=1:
    # open-loop last: 1 -> 1/4 -> 1/8 (the closed form); open-loop first: 1 -> 1/2 -> 1/6.
    cf = bound_horizon_closed_form(HorizonBoundInputs(0.5, 0.0, 1.0, 1, 2, 1.0))
    assert cf == pytest.approx(1 / 8, abs=1e-15)
    assert iterate_schedule(1.0, 0.5, 0.0, 1.0, [True, False]) == pytest.approx(1 / 6, abs=1e-15)


def test_closed_form_errors():
    with pytest.raises(UnsupportedInputError):
        bound_horizon_closed_form(HorizonBoundInputs(1.0, 0.1, 0.0, 1, 3, 1.0))
    with pytest.raises(InvalidInputError):
        bound_horizon_closed_form(HorizonBoundInputs(1.0, 0.1, 0.5, 4, 3, 1.0))


def test_jensen_against_brute_force_filter_enumeration():
    rng = np.random.default_rng(8)
    for _ in range(12):
        pr = random_small_problem(rng, max_m=2, max_T=5, guard=8)
        exact = brute_force_expectation(pr)
        bound = pr.bound_trace("stochastic")
        assert np.all(exact <= bound + 1e-12 * np.maximum(1.0, bound))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 5), st.floats(0, 1), st.floats(0.5, 2), st.floats(0, 1), st.floats(0.1, 10))
def test_step_between_open_loop_and_full_detection(ell, p, a, b, lam):
    s = make_step_params(a, b, [p], [[[lam]]])
    v = bound_step_stochastic(ell, s)
    assert bound_step_deterministic(ell, a, b, lam) <= v * (1 + 1e-12)
    assert v <= (a * ell + b) * (1 + 1e-12)
