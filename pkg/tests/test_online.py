import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochalloc import closed_form
from stochalloc.core import (
    ASISchedule,
    IIDInput,
    OptionVector,
    RequestType,
    ValidationError,
    build_expected_instance,
    compute_gamma_online,
)
from stochalloc.generators import gen_asi_schedule
from stochalloc.greedy import AdwordsInstance
from stochalloc.lp_oracle import (
    expected_optimum,
    per_step_optima,
    solve_maximin_exact,
    solve_time_varying,
)
from stochalloc.online import (
    asi1_run,
    asi2_run,
    asi2_state,
    asi3_run,
    asi3_state,
    gamma_precondition_ok,
    ho_conservative_run,
    known_we_run,
    known_we_state,
    online_step,
    posted_price_choice,
    posted_prices,
    sample_requests,
    stage_params,
    staged_run,
)
from stochalloc.potential import PotentialState

from conftest import make_instance, tiny_adwords
from stochalloc.bench import step_sums


def _unit_state(n_res=1, n_prof=1, steps=5, x_rate=0.3, y_rate=-0.2, x_decay=0.01, y_decay=-0.02):
    return PotentialState(
        log_phi_x=np.zeros(n_res), log_phi_y=np.zeros(n_prof),
        x_rate=np.full(n_res, x_rate), y_rate=np.full(n_prof, y_rate),
        x_decay=np.full((steps, n_res), x_decay), y_decay=np.full((steps, n_prof), y_decay))


# ---------- single steps ----------

def test_profitless_request_goes_to_bottom_and_only_decays():
    state = _unit_state()
    k, state = online_step(state, RequestType(0, (OptionVector({0: 1.0}, {}),)))
    assert k is None
    assert state.log_phi_x[0] == -0.01 and state.log_phi_y[0] == 0.02


def test_costless_profit_is_served():
    k, _ = online_step(_unit_state(), RequestType(0, (OptionVector({}, {0: 1.0}),)))
    assert k == 0


def test_hand_set_potentials_pick_second_option_and_update():
    state = _unit_state()
    rt = RequestType(0, (OptionVector({0: 1.0}, {0: 1.0}), OptionVector({0: 2.0}, {0: 3.0})))
    k, state = online_step(state, rt)
    assert k == 1
    assert state.log_phi_x[0] == pytest.approx(0.3 * 2 - 0.01, abs=1e-15)
    assert state.log_phi_y[0] == pytest.approx(-0.2 * 3 + 0.02, abs=1e-15)
    assert state.step == 1


def test_state_rejects_steps_past_horizon():
    state = _unit_state(steps=1)
    online_step(state, RequestType(0, ()))
    with pytest.raises(ValueError, match="exhausted"):
        online_step(state, RequestType(0, ()))


# ---------- hypothetical-oblivious conservative ----------

def _single_option(m=1000, a=0.001, w=1.0, cap=10.0):
    return make_instance([cap], [[({0: a}, {0: w})]], m=m)


def test_conservative_run_serves_binomial_fraction():
    inst = _single_option()
    served = ho_conservative_run(inst, IIDInput({0: 1.0}), [np.array([1.0])], eps=0.25, seed=0).served_count
    mean, sd = 800, math.sqrt(1000 * 0.8 * 0.2)
    assert abs(served - mean) <= 4 * sd


def test_conservative_run_without_slack_follows_allocation():
    inst = _single_option()
    rep = ho_conservative_run(inst, IIDInput({0: 1.0}), [np.array([1.0])], eps=0.0, seed=0)
    assert rep.served_count == 1000


def test_conservative_run_with_zero_allocation_serves_nothing():
    inst = _single_option()
    rep = ho_conservative_run(inst, IIDInput({0: 1.0}), [np.array([0.0])], eps=0.25, seed=0)
    assert rep.served_count == 0 and rep.objective == 0.0


def test_conservative_run_rejects_infeasible_allocation():
    inst = _single_option(a=1.0)
    with pytest.raises(ValidationError, match="x_star infeasible"):
        ho_conservative_run(inst, IIDInput({0: 1.0}), [np.array([1.0])], eps=0.25, seed=0)


# ---------- known benchmark ----------

def test_known_we_serves_every_costless_request():
    inst = make_instance([1.0], [[({}, {0: 0.5})]], m=200)
    rep = known_we_run(inst, IIDInput({0: 1.0}), w_e=100.0, gamma=0.05, eps=0.2, seed=0)
    assert rep.served_count == 200 and rep.objective == pytest.approx(100.0, rel=1e-12)


def test_known_we_with_no_profit_does_nothing():
    inst = make_instance([1.0], [[({0: 0.01}, {})]], m=200)
    rep = known_we_run(inst, IIDInput({0: 1.0}), w_e=1.0, gamma=0.05, eps=0.2, seed=0)
    assert rep.objective == 0.0 and not rep.cum_consumption.any()


def test_known_we_tiny_adwords_failure_fraction():
    inst, iid = tiny_adwords().to_instance()
    w_e = expected_optimum(inst, iid)
    gamma = compute_gamma_online(inst, w_e).gamma
    eps = 0.2
    reports = [known_we_run(inst, iid, w_e, gamma, eps, seed) for seed in range(500)]
    failures = sum(r.violated or r.objective < (1 - 2 * eps) * w_e for r in reports)
    assert failures / 500 <= 0.3


def test_runs_are_pure_functions_of_seed():
    inst, iid = tiny_adwords(m=300, budget=120.0).to_instance()
    w_e = expected_optimum(inst, iid)
    gamma = compute_gamma_online(inst, w_e).gamma
    a = known_we_run(inst, iid, w_e, gamma, 0.2, 17)
    b = known_we_run(inst, iid, w_e, gamma, 0.2, 17)
    assert np.array_equal(a.types, b.types) and np.array_equal(a.options, b.options)
    assert np.array_equal(a.cum_profit, b.cum_profit)


def test_hard_cap_never_violates():
    inst, iid = tiny_adwords(m=300, budget=20.0).to_instance()
    w_e = expected_optimum(inst, iid)
    gamma = compute_gamma_online(inst, w_e).gamma
    for seed in range(20):
        assert not known_we_run(inst, iid, w_e, gamma, 0.5, seed, hard_cap=True).violated


def test_explicit_request_sequence_stream():
    inst = make_instance([5.0], [[({0: 1.0}, {0: 1.0})], [({}, {0: 1.0})]], m=4)
    rep = known_we_run(inst, [1, None, 1, -1], w_e=2.0, gamma=0.5, eps=0.2, seed=0)
    assert rep.types.tolist() == [1, -1, 1, -1]
    assert rep.decisions == [(1, 0), (None, None), (1, 0), (None, None)]


def test_gamma_precondition():
    assert gamma_precondition_ok(1e-4, 0.2, 5)
    assert not gamma_precondition_ok(0.1, 0.2, 5)
    with pytest.warns(UserWarning, match="gamma"):
        inst = make_instance([1.0], [[({}, {0: 0.5})]], m=50)
        known_we_run(inst, IIDInput({0: 1.0}), 25.0, 0.5, 0.2, 0)


def test_known_we_input_errors():
    inst = make_instance([1.0], [[({}, {0: 0.5})]], m=50)
    with pytest.raises(ValueError):
        known_we_run(inst, IIDInput({0: 1.0}), 0.0, 0.1, 0.2, 0)
    with pytest.raises(ValueError):
        known_we_run(inst, IIDInput({0: 1.0}), 1.0, 0.1, 1.2, 0)
    with pytest.raises(ValueError):
        known_we_run(inst, IIDInput({0: 1.0}), 1.0, 0.0, 0.2, 0)


# ---------- staged ----------

def test_stage_layout_example():
    p = stage_params(16, 0.25, 0.01, 2)
    assert p.l == 2
    assert p.lengths == [4, 4, 8]
    assert sum(p.lengths) == 16 and p.starts == [0, 4, 8]


def test_stage_layout_parameters():
    p = stage_params(1000, 0.1, 0.001, 4)
    assert p.l == 4 and p.lengths == [100, 100, 200, 400, 200]
    assert p.delta == pytest.approx(0.1 / 12, rel=1e-15)
    assert p.eps_x[2] == pytest.approx(math.sqrt(4 * 0.001 * 1000 * math.log(8 / p.delta) / 200), rel=1e-14)


def test_stage_layout_rejects_eps_outside_range():
    with pytest.raises(ValueError):
        stage_params(100, 0.6, 0.01, 2)
    with pytest.raises(ValueError):
        stage_params(100, 0.001, 0.01, 2)


def test_staged_serves_every_costless_request_after_observation():
    inst = make_instance([1.0], [[({}, {0: 1.0})]], m=400)
    rep = staged_run(inst, IIDInput({0: 1.0}), gamma=0.05, eps=0.25, seed=0)
    t_obs = rep.extras["stage_params"].lengths[0]
    assert (rep.options[:t_obs] == -1).all() and (rep.options[t_obs:] == 0).all()


def test_staged_tiny_adwords_monte_carlo():
    inst, iid = tiny_adwords().to_instance()
    w_e = expected_optimum(inst, iid)
    gamma = compute_gamma_online(inst, w_e).gamma
    eps = 0.25
    reports = [staged_run(inst, iid, gamma, eps, seed) for seed in range(500)]
    violation = sum(r.violated for r in reports) / 500
    mean_ratio = np.mean([r.objective for r in reports]) / w_e
    measured_c = (1 - mean_ratio) / eps
    assert violation <= eps + 0.05
    assert measured_c <= 8


def test_staged_alpha_matches_scaled_oracle():
    inst, iid = tiny_adwords(m=400, budget=150.0).to_instance()
    gamma = compute_gamma_online(inst, expected_optimum(inst, iid)).gamma
    a = staged_run(inst, iid, gamma, 0.25, 3, alpha=2.0)
    b = staged_run(inst, iid, gamma, 0.25, 3, offline_oracle=lambda off: solve_maximin_exact(off).lam / 2.0)
    assert np.array_equal(a.options, b.options)
    with pytest.raises(ValueError):
        staged_run(inst, iid, gamma, 0.25, 3, alpha=0.5)


def test_staged_uses_supplied_profit_bound():
    inst, iid = tiny_adwords(m=400, budget=150.0).to_instance()
    gamma = compute_gamma_online(inst, expected_optimum(inst, iid)).gamma
    rep = staged_run(inst, iid, gamma, 0.25, 3, w_max=1.0)
    assert rep.extras["stage_params"].w_max == [1.0, 1.0]


# ---------- ASI ----------

def _alternating():
    inst, _ = tiny_adwords().to_instance()
    sched = gen_asi_schedule([{0: 0.6, 1: 0.2, 2: 0.2}, {0: 0.1, 1: 0.3, 2: 0.6}], "alternating", inst.m)
    return inst, sched


def test_alternating_per_step_benchmarks_hand_values():
    inst, sched = _alternating()
    w_t = per_step_optima(inst, sched)
    # first base: both budgets bind (400 + 400); second: advertiser 1 fills 400 on query 2,
    # advertiser 0 collects 100 + 150 + 0.2 * 200 = 290
    assert w_t[0] == pytest.approx(800.0, rel=1e-9) and w_t[1] == pytest.approx(690.0, rel=1e-9)
    assert all(w_t[t] == w_t[t % 2] for t in range(inst.m))


def test_asi2_alternating_monte_carlo():
    inst, sched = _alternating()
    w_t = per_step_optima(inst, sched)
    gamma = compute_gamma_online(inst, min(w_t)).gamma
    eps = 0.2
    mean = np.mean([asi2_run(inst, sched, w_t, gamma, eps, seed).objective for seed in range(500)])
    assert mean >= (1 - 2 * eps) * np.mean(w_t)


def test_asi1_uses_weakest_benchmark():
    inst, sched = _alternating()
    w_t = per_step_optima(inst, sched)
    gamma = compute_gamma_online(inst, min(w_t)).gamma
    a = asi1_run(inst, sched, w_t, gamma, 0.2, 1)
    b = known_we_run(inst, sched, min(w_t), gamma, 0.2, 1)
    assert np.array_equal(a.options, b.options)


def test_asi2_constant_schedule_matches_known_we_trajectory():
    inst, iid = tiny_adwords(m=500, budget=200.0).to_instance()
    w_e = expected_optimum(inst, iid)
    gamma = compute_gamma_online(inst, w_e).gamma
    sched = ASISchedule(per_step=(dict(iid.probs),) * inst.m)
    a = known_we_run(inst, sched, w_e, gamma, 0.2, 5, record=True)
    b = asi2_run(inst, sched, [w_e] * inst.m, gamma, 0.2, 5, record=True)
    assert np.array_equal(a.options, b.options)
    ta, tb = a.extras["trajectories"][0], b.extras["trajectories"][0]
    assert np.array_equal(ta["log_phi_x"], tb["log_phi_x"])
    # the profit potential after the final step has no further factor to divide out
    assert np.array_equal(ta["log_phi_y"][:-1], tb["log_phi_y"][:-1])


def test_asi2_single_step_has_empty_initial_product():
    state = asi2_state([4.0], 1, [2.0], gamma=0.5, eps=0.2)
    tail = (0.8 / (0.5 * 1.2)) * math.log1p(-0.2)
    assert state.log_phi_y[0] == pytest.approx(-math.log(2.0) - tail, rel=1e-15)
    inst = make_instance([4.0], [[({0: 1.0}, {0: 1.0})]], m=1)
    rep = asi2_run(inst, IIDInput({0: 1.0}), [2.0], 0.5, 0.2, 0)
    assert rep.served_count == 1


def test_asi2_requires_one_benchmark_per_step():
    inst, sched = _alternating()
    with pytest.raises(ValidationError):
        asi2_run(inst, sched, [1.0, 2.0], 0.01, 0.2, 0)


def test_asi3_uniform_profiles_reduce_to_known_we_factors():
    m, caps, w_e, gamma, eps = 300, [50.0, 80.0], 120.0, 0.02, 0.2
    c_prof = np.tile(np.array(caps) / m, (m, 1))
    o_prof = np.full((m, 1), w_e / m)
    a = asi3_state(caps, c_prof, o_prof, gamma, eps)
    b = known_we_state(caps, 1, w_e, gamma, eps, m)
    assert np.allclose(a.log_phi_x, b.log_phi_x, rtol=1e-12)
    assert np.allclose(a.log_phi_y, b.log_phi_y, rtol=1e-12)
    assert np.allclose(a.x_decay[:-1], b.x_decay[:-1], rtol=1e-12)
    assert np.allclose(a.y_decay[:-1], b.y_decay[:-1], rtol=1e-12)


def _two_chunk_single_resource():
    adw = AdwordsInstance(np.array([400.0]), np.array([[1.0, 0.4]]), 1000, np.array([0.5, 0.5]))
    inst, _ = adw.to_instance()
    sched = gen_asi_schedule([{0: 0.8, 1: 0.2}, {0: 0.1, 1: 0.9}], "chunked", inst.m)
    return inst, sched


def test_asi3_two_chunk_monte_carlo():
    inst, sched = _two_chunk_single_resource()
    sol = solve_time_varying(inst, sched)
    gamma = compute_gamma_online(inst, sol.lam).gamma
    eps = 0.2
    mean = np.mean([asi3_run(inst, sched, sol.consumption_profile, sol.profit_profile, gamma, eps, s).objective
                    for s in range(500)])
    assert mean >= (1 - 2 * eps) * sol.profit_profile.sum(axis=0).min()


def test_asi3_zero_profit_profile_has_no_profit_potential():
    caps, m = [5.0], 10
    c_prof = np.full((m, 1), 0.5)
    o_prof = np.zeros((m, 2))
    o_prof[:, 0] = 0.3
    state = asi3_state(caps, c_prof, o_prof, 0.1, 0.2)
    assert state.log_phi_y[1] == -np.inf and np.isfinite(state.log_phi_y[0])
    inst = make_instance(caps, [[({0: 0.1}, {0: 0.2, 1: 0.2})]], m=m, n_profits=2)
    rep = asi3_run(inst, IIDInput({0: 1.0}), c_prof, o_prof, 0.1, 0.2, 0)
    assert rep.cum_profit.shape == (2,)


def test_asi3_profile_checks():
    inst, sched = _two_chunk_single_resource()
    with pytest.raises(ValidationError, match="shape"):
        asi3_run(inst, sched, np.zeros((3, 1)), np.zeros((inst.m, 1)), 0.01, 0.2, 0)
    with pytest.raises(ValidationError, match="exceeds"):
        asi3_run(inst, sched, np.ones((inst.m, 1)), np.ones((inst.m, 1)), 0.01, 0.2, 0)


def test_adaptive_policy_schedule_drives_asi_run():
    inst, _ = tiny_adwords(m=200, budget=80.0).to_instance()
    bases = [{0: 0.6, 1: 0.2, 2: 0.2}, {0: 0.1, 1: 0.3, 2: 0.6}]

    def against_last_winner(step, history, bases):
        # steer toward the base that favors the advertiser not served last
        served = [k for _, k in history if k is not None]
        return 1 if served and served[-1] == 0 else 0

    sched = gen_asi_schedule(bases, "adaptive", inst.m, policy=against_last_winner)
    w_e = min(expected_optimum(inst, IIDInput(b)) for b in bases)
    gamma = compute_gamma_online(inst, w_e).gamma
    a = known_we_run(inst, sched, w_e, gamma, 0.2, 4)
    b = known_we_run(inst, sched, w_e, gamma, 0.2, 4)
    assert a.decisions == b.decisions and len(a.decisions) == inst.m


# ---------- posted prices ----------

def _price_state(lx, ly):
    n = len(lx)
    return PotentialState(np.array(lx, dtype=float), np.array(ly, dtype=float), np.zeros(n), np.zeros(len(ly)),
                          np.zeros((1, n)), np.zeros((1, len(ly))))


def test_posted_price_example():
    assert posted_prices(_price_state([math.log(2.0)], [math.log(4.0)]))[0] == pytest.approx(0.5, rel=1e-15)


def test_posted_prices_scale_invariant():
    a = posted_prices(_price_state([math.log(2.0), 0.3], [math.log(4.0)]))
    b = posted_prices(_price_state([math.log(20.0), 0.3 + math.log(10.0)], [math.log(40.0)]))
    assert np.allclose(a, b, rtol=1e-14)


def test_posted_prices_need_single_profit_type():
    with pytest.raises(ValueError):
        posted_prices(_price_state([0.0], [0.0, 0.0]))
    with pytest.raises(ValueError):
        posted_prices(_price_state([0.0], [-np.inf]))


@settings(max_examples=300)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
def test_posted_price_choice_equals_potential_choice(K, n, seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0, 1, (K, n)) * (rng.random((K, n)) < 0.7)
    W = rng.uniform(0, 1, (K, 1))
    state = _price_state(rng.normal(0, 3, n), rng.normal(0, 3, 1))
    assert state.choose(A, W) == posted_price_choice(A, W, posted_prices(state))


# ---------- engine invariants over whole runs ----------

def _small_random_instance(seed, m):
    rng = np.random.default_rng(seed)
    types = []
    for _ in range(4):
        opts = []
        for _ in range(2):
            a = {i: float(rng.uniform(0.05, 1)) for i in range(2) if rng.random() < 0.8}
            w = {i: float(rng.uniform(0.05, 1)) for i in range(2) if rng.random() < 0.8}
            opts.append((a, w))
        types.append(opts)
    inst = make_instance([0.2 * m, 0.25 * m], types, m=m, n_profits=2)
    return inst, IIDInput({j: 0.25 for j in range(4)})


def _variant_runs(seed, m=400):
    inst, iid = _small_random_instance(seed, m)
    w_e = expected_optimum(inst, iid)
    gamma = compute_gamma_online(inst, w_e).gamma
    eps = 0.2
    caps = inst.capacities
    sched = ASISchedule(per_step=tuple(iid.probs if t % 3 else {0: 0.7, 1: 0.1, 2: 0.1, 3: 0.1}
                                       for t in range(m)))
    w_t = per_step_optima(inst, sched)
    g2 = compute_gamma_online(inst, min(w_t)).gamma
    tv = solve_time_varying(inst, sched)
    g3 = compute_gamma_online(inst, tv.lam).gamma
    out = []
    rep = known_we_run(inst, iid, w_e, gamma, eps, seed, record=True)
    out.append((inst, rep, lambda sx, sy, t: closed_form.known_we(caps, w_e, gamma, eps, m, sx, sy)))
    rep = asi2_run(inst, sched, w_t, g2, eps, seed, record=True)
    out.append((inst, rep, lambda sx, sy, t: closed_form.asi2(caps, w_t, g2, eps, sx, sy)))
    rep = asi3_run(inst, sched, tv.consumption_profile, tv.profit_profile, g3, eps, seed, record=True)
    out.append((inst, rep, lambda sx, sy, t: closed_form.asi3(caps, tv.consumption_profile, tv.profit_profile,
                                                              g3, eps, sx, sy)))
    rep = staged_run(inst, iid, gamma, 0.25, seed, record=True)
    p = rep.extras["stage_params"]

    def stage_ref(sx, sy, t):
        r = t["label"]
        return closed_form.stage(caps, gamma, m, t["stop"] - t["start"], p.eps_x[r + 1], p.eps_y[r], p.Z[r],
                                 p.w_max[r] or 1.0, sx, sy)
    out.append((inst, rep, stage_ref))
    return out


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_incremental_potentials_match_closed_form(seed):
    for inst, rep, ref in _variant_runs(seed):
        for traj in rep.extras["trajectories"]:
            sx, sy = step_sums(inst, rep, traj["start"], traj["stop"])
            lx, ly = ref(sx, sy, traj)
            assert closed_form.relative_gap(traj["log_phi_x"], lx) <= 1e-9
            assert closed_form.relative_gap(traj["log_phi_y"], ly) <= 1e-9


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_every_decision_minimizes_the_surrogate(seed):
    for inst, rep, _ in _variant_runs(seed):
        for traj in rep.extras["trajectories"]:
            for s in range(traj["start"], traj["stop"]):
                row = s - traj["start"]
                lx, ly = traj["log_phi_x"][row], traj["log_phi_y"][row]
                top = max(lx.max(), ly.max())
                px, py = np.exp(lx - top), np.exp(ly - top)
                tid = int(rep.types[s])
                if tid < 0:
                    continue
                A, W = inst.dense[inst.index_of[tid]]
                scores = A @ px - W @ py
                k = int(rep.options[s])
                if k < 0:
                    assert scores.min() > 0
                else:
                    assert scores[k] <= 0 and scores[k] == scores.min()


def test_sample_requests_is_seeded():
    inst, iid = tiny_adwords(m=50).to_instance()
    assert np.array_equal(sample_requests(inst, iid, 3), sample_requests(inst, iid, 3))
    assert not np.array_equal(sample_requests(inst, iid, 3), sample_requests(inst, iid, 4))
