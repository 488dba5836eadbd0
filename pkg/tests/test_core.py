import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochalloc.core import (
    ASISchedule,
    IIDInput,
    Instance,
    OptionVector,
    RequestType,
    UnsupportedVariantError,
    ValidationError,
    best_option,
    build_expected_instance,
    chernoff_tail,
    compute_gamma_offline,
    compute_gamma_online,
    expected_weights,
    require_valid,
    select_option,
    validate_instance,
)
from stochalloc.gap_solver import MixedPCInstance

from conftest import make_instance


# ---------- validation ----------

def test_valid_single_resource_instance_has_no_problems():
    inst = make_instance([1.0], [[({0: 0.5}, {0: 1.0})]], m=3)
    assert validate_instance(inst) == []


def test_zero_capacity_is_reported():
    inst = make_instance([0.0], [[({0: 0.5}, {0: 1.0})]], m=3)
    problems = validate_instance(inst)
    assert len(problems) == 1
    assert problems[0].startswith("capacity 0 not positive")


def test_resource_id_out_of_range_is_reported():
    inst = make_instance([1.0], [[({1: 0.5}, {0: 1.0})]], m=3)
    problems = validate_instance(inst)
    assert len(problems) == 1
    assert problems[0].startswith("resource id out of range")


def test_full_capacity_option_flagged_unless_allowed():
    inst = make_instance([1.0], [[({0: 1.0}, {0: 1.0})]], m=3)
    assert any("gamma >= 1" in p for p in validate_instance(inst))
    assert validate_instance(inst, allow_large_gamma=True) == []


def test_distribution_mass_above_one_rejected():
    inst = make_instance([2.0], [[({0: 1.0}, {0: 1.0})], [({0: 1.0}, {0: 1.0})]], m=3)
    with pytest.raises(ValidationError, match="sum to"):
        require_valid(inst, IIDInput({0: 0.7, 1: 0.5}))
    with pytest.raises(ValidationError, match="unknown request type"):
        require_valid(inst, IIDInput({5: 0.1}))
    with pytest.raises(ValidationError, match="steps"):
        require_valid(inst, ASISchedule(per_step=({0: 1.0},)))


def test_asi_schedule_needs_exactly_one_source():
    with pytest.raises(ValidationError):
        ASISchedule()
    with pytest.raises(ValidationError):
        ASISchedule(per_step=({},), policy=lambda s, h: {})


# ---------- expected instance ----------

def test_expected_instance_scales_by_m_times_probability():
    inst = make_instance([10.0], [[({0: 1.0}, {0: 1.0})], [({0: 1.0}, {0: 1.0})]], m=4)
    exp = build_expected_instance(inst, IIDInput({0: 0.5, 1: 0.0}))
    A, _ = exp.effective(0)
    assert A[0, 0] == 2.0
    assert exp.weights[1] == 0.0


def test_expected_instance_identity_for_single_certain_request():
    inst = make_instance([10.0], [[({0: 0.3}, {0: 0.7})]], m=1)
    exp = build_expected_instance(inst, IIDInput({0: 1.0}))
    A, W = exp.effective(0)
    assert np.array_equal(A, inst.dense[0][0]) and np.array_equal(W, inst.dense[0][1])


def test_expected_instance_rejects_asi_input():
    inst = make_instance([10.0], [[({0: 0.3}, {0: 0.7})]], m=1)
    with pytest.raises(UnsupportedVariantError):
        build_expected_instance(inst, ASISchedule(per_step=({0: 1.0},)))


@given(st.lists(st.one_of(st.just(0.0), st.floats(1e-6, 1)), min_size=1, max_size=6), st.integers(1, 10_000),
       st.floats(0.01, 100))
def test_expected_weights_homogeneous(raw, m, scale):
    total = sum(raw) or 1.0
    probs = {j: p / total / max(1.0, scale) for j, p in enumerate(raw)}
    inst = make_instance([1e9], [[({0: 1.0}, {0: 1.0})]] * len(raw), m=m)
    base = expected_weights(inst, probs)
    scaled = expected_weights(inst, {j: p * scale for j, p in probs.items()}, m=m / scale)
    assert np.allclose(base, scaled, rtol=1e-12, atol=0)


# ---------- gamma ----------

def test_gamma_online_example_profit_witness():
    inst = make_instance([10.0], [[({0: 2.0}, {0: 3.0})]], m=5)
    rep = compute_gamma_online(inst, 6.0)
    assert rep.gamma == 0.5
    assert rep.witness == (0, 0, 0, "profit")


def test_gamma_zero_for_bottom_only_instance():
    inst = make_instance([10.0], [[({}, {})]], m=5)
    rep = compute_gamma_online(inst, 1.0)
    assert rep.gamma == 0.0 and rep.witness is None


def test_gamma_reports_full_capacity_ratio_verbatim():
    inst = make_instance([4.0], [[({0: 4.0}, {0: 1.0})]], m=5)
    assert compute_gamma_online(inst, 100.0).gamma == 1.0


def test_gamma_online_rejects_nonpositive_benchmark():
    inst = make_instance([4.0], [[({0: 1.0}, {0: 1.0})]], m=5)
    with pytest.raises(ValueError):
        compute_gamma_online(inst, 0.0)


def _mixed(a, w, c, d):
    rt = (RequestType(0, (OptionVector({0: a} if a else {}, {0: w} if w else {}),)),)
    return MixedPCInstance(1, 1, (c,), (d,), 4, rt)


def test_gamma_offline_example():
    assert compute_gamma_offline(_mixed(1.0, 1.0, 4.0, 2.0)).gamma == 0.5


def test_gamma_offline_covering_degenerate_uses_packing_side():
    rep = compute_gamma_offline(_mixed(1.0, 0.0, 4.0, 2.0))
    assert rep.gamma == 0.25 and rep.witness[3] == "consumption"


def test_gamma_offline_tie_prefers_lowest_triple():
    rep = compute_gamma_offline(_mixed(1.0, 1.0, 2.0, 2.0))
    assert rep.gamma == 0.5
    assert rep.witness == (0, 0, 0, "consumption")


@st.composite
def small_instances(draw):
    n_res = draw(st.integers(1, 3))
    n_prof = draw(st.integers(1, 3))
    n_types = draw(st.integers(1, 4))
    amount = st.floats(0, 5, allow_nan=False)
    types = []
    for _ in range(n_types):
        opts = []
        for _ in range(draw(st.integers(0, 3))):
            a = {i: draw(amount) for i in range(n_res) if draw(st.booleans())}
            w = {i: draw(amount) for i in range(n_prof) if draw(st.booleans())}
            opts.append((a, w))
        types.append(opts)
    caps = [draw(st.floats(0.5, 50)) for _ in range(n_res)]
    return make_instance(caps, types, m=10, n_profits=n_prof)


@given(small_instances(), st.floats(0.1, 100))
def test_gamma_matches_brute_force(inst, w_e):
    brute = 0.0
    for rt in inst.request_types:
        for opt in rt.options:
            for i, a in opt.consumption.items():
                brute = max(brute, a / inst.capacities[i])
            for _, w in opt.profit.items():
                brute = max(brute, w / w_e)
    assert compute_gamma_online(inst, w_e).gamma == brute


# ---------- best_option ----------

def test_profitless_option_loses_to_bottom():
    rt = RequestType(0, (OptionVector({0: 1.0}, {}),))
    assert best_option(rt, [0.5], [1.0]) is None


def test_costless_profitable_option_is_served():
    rt = RequestType(0, (OptionVector({}, {0: 1.0}),))
    assert best_option(rt, [1.0], [0.5]) == 0


def test_hand_evaluated_two_option_choice():
    rt = RequestType(0, (OptionVector({0: 1.0}, {0: 1.0}), OptionVector({0: 2.0}, {0: 3.0})))
    assert best_option(rt, [1.0], [1.0]) == 1


def test_zero_score_option_beats_bottom():
    rt = RequestType(0, (OptionVector({0: 1.0}, {0: 1.0}),))
    assert best_option(rt, [1.0], [1.0]) == 0


def test_best_option_dimension_mismatch():
    rt = RequestType(0, (OptionVector({1: 1.0}, {0: 1.0}),))
    with pytest.raises(ValueError):
        best_option(rt, [1.0], [1.0])
    with pytest.raises(ValueError):
        best_option(rt, [[1.0]], [1.0])


option_arrays = st.integers(1, 5).flatmap(lambda K: st.tuples(
    st.lists(st.lists(st.floats(0, 10), min_size=3, max_size=3), min_size=K, max_size=K),
    st.lists(st.lists(st.floats(0, 10), min_size=2, max_size=2), min_size=K, max_size=K)))


@given(option_arrays, st.lists(st.floats(0, 10), min_size=3, max_size=3),
       st.lists(st.floats(0, 10), min_size=2, max_size=2), st.sampled_from([1e-3, 0.5, 2.0, 8.0, 1024.0]))
def test_choice_invariant_under_joint_power_of_two_scaling(opts, prices, weights, scale):
    A, W = np.array(opts[0]), np.array(opts[1])
    px, py = np.array(prices), np.array(weights)
    scale = 2.0 ** round(math.log2(scale))  # exact in floating point
    assert select_option(A, W, px, py) == select_option(A, W, px * scale, py * scale)


@settings(max_examples=300)
@given(option_arrays, st.lists(st.floats(0.01, 10), min_size=3, max_size=3),
       st.lists(st.floats(0.01, 10), min_size=2, max_size=2), st.floats(0.01, 100))
def test_choice_invariant_under_joint_scaling_without_near_ties(opts, prices, weights, scale):
    A, W = np.array(opts[0]), np.array(opts[1])
    px, py = np.array(prices), np.array(weights)
    scores = np.append(A @ px - W @ py, 0.0)
    gaps = np.abs(scores[:, None] - scores[None, :])[~np.eye(len(scores), dtype=bool)]
    if gaps.size and gaps.min() < 1e-9 * (1 + np.abs(scores).max()):
        return  # a near tie can flip under rounding; exact ties are covered above
    assert select_option(A, W, px, py) == select_option(A, W, px * scale, py * scale)


@given(option_arrays, st.lists(st.floats(0, 10), min_size=3, max_size=3),
       st.lists(st.floats(0, 10), min_size=2, max_size=2))
def test_chosen_option_never_scores_above_zero_and_is_minimal(opts, prices, weights):
    A, W = np.array(opts[0]), np.array(opts[1])
    scores = A @ np.array(prices) - W @ np.array(weights)
    k = select_option(A, W, np.array(prices), np.array(weights))
    if k >= 0:
        assert scores[k] <= 0
        assert scores[k] == scores.min()
        assert k == int(np.flatnonzero(scores == scores.min())[0])
    else:
        assert scores.min() > 0


# ---------- Chernoff ----------

def test_chernoff_lower_example():
    assert chernoff_tail("lower", 100, 1, 0.1) == pytest.approx(math.exp(-0.5), rel=1e-15)


def test_chernoff_upper_large_example():
    assert chernoff_tail("upper_large", 1, 1, 1.0) == 0.25


@pytest.mark.parametrize("kind", ["lower", "upper_small", "upper_large"])
def test_chernoff_vanishing_deviation_tends_to_one(kind):
    vals = [chernoff_tail(kind, 5.0, 1.0, e) for e in (1e-2, 1e-4, 1e-8)]
    if kind == "upper_large":
        # the base-2 form is not a small-deviation bound; it tends to 2^(-mu/B)
        assert vals[-1] == pytest.approx(2 ** -5.0, rel=1e-7)
    else:
        assert vals[0] < vals[1] < vals[2] <= 1.0
        assert vals[-1] == pytest.approx(1.0, abs=1e-14)


def test_chernoff_domain_errors():
    with pytest.raises(ValueError):
        chernoff_tail("upper_small", 1, 1, 4.5)
    with pytest.raises(ValueError):
        chernoff_tail("lower", 1, 1, 0.0)
    with pytest.raises(ValueError):
        chernoff_tail("lower", -1, 1, 0.5)
    with pytest.raises(ValueError):
        chernoff_tail("sideways", 1, 1, 0.5)


kinds = st.sampled_from(["lower", "upper_small", "upper_large"])


@given(kinds, st.floats(0, 1e4), st.floats(1e-3, 100), st.floats(1e-6, 4.4))
def test_chernoff_in_unit_interval(kind, mu, bound, eps):
    assert 0.0 <= chernoff_tail(kind, mu, bound, eps) <= 1.0


@given(kinds, st.floats(0, 1e3), st.floats(0, 1e3), st.floats(1e-3, 10), st.floats(1e-4, 4.4))
def test_chernoff_monotone_in_mean(kind, mu1, mu2, bound, eps):
    lo, hi = sorted((mu1, mu2))
    assert chernoff_tail(kind, hi, bound, eps) <= chernoff_tail(kind, lo, bound, eps)


@given(kinds, st.floats(0, 1e3), st.floats(1e-3, 10), st.floats(1e-4, 4.4), st.floats(1e-4, 4.4))
def test_chernoff_monotone_in_deviation(kind, mu, bound, e1, e2):
    lo, hi = sorted((e1, e2))
    assert chernoff_tail(kind, mu, bound, hi) <= chernoff_tail(kind, mu, bound, lo)


def test_chernoff_matches_high_precision_reference():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 50
    for kind, mu, bound, eps in itertools.product(["lower", "upper_small", "upper_large"],
                                                  [0.5, 10.0, 300.0], [0.5, 2.0], [0.05, 0.7, 3.0]):
        m_mu, m_b, m_e = mpmath.mpf(mu), mpmath.mpf(bound), mpmath.mpf(eps)
        if kind == "lower":
            ref = mpmath.exp(-m_e ** 2 * m_mu / (2 * m_b))
        elif kind == "upper_small":
            ref = mpmath.exp(-m_e ** 2 * m_mu / (4 * m_b))
        else:
            ref = mpmath.power(2, -(1 + m_e) * m_mu / m_b)
        assert chernoff_tail(kind, mu, bound, eps) == pytest.approx(float(ref), rel=1e-13)
