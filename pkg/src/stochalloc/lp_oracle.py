"""Maximin LP of the expected or realized instance.

The exact path uses HiGHS dual simplex through :func:`scipy.optimize.linprog`;
the sampling path brackets the optimum with repeated gap checks.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .core import (
    ASISchedule,
    IIDInput,
    Instance,
    OfflineFractionalInstance,
    RequestType,
    UnsupportedVariantError,
    ValidationError,
    build_expected_instance,
    compute_gamma_offline,
    dense_options,
)


class SizeLimitError(ValueError):
    """The instance is too large for the exact solver; use the sampling solver instead."""


@dataclass(frozen=True)
class ExactLimits:
    max_rows: int = 20
    max_options: int = 2000


DEFAULT_LIMITS = ExactLimits()

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


@dataclass
class LPSolution:
    lam: float
    allocation: List[np.ndarray]  # allocation[j][k] = x_jk

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "allocation": [x.tolist() for x in self.allocation]}


@dataclass
class FeasibilityReport:
    ok: bool
    worst_slack: float
    worst_constraint: str


def _check_limits(n_rows: int, n_options: int, limits: ExactLimits) -> None:
    if n_rows > limits.max_rows or n_options > limits.max_options:
        raise SizeLimitError(
            f"exact LP limited to {limits.max_rows} rows and {limits.max_options} options "
            f"(got {n_rows} rows, {n_options} options); use solve_maximin_sampling")


def _solve_blocks(consumption: Sequence[np.ndarray], profit: Sequence[np.ndarray],
                  capacities: np.ndarray, n_profits: int) -> Tuple[float, List[np.ndarray]]:
    """max lam s.t. sum A x <= c, sum W x >= lam, simplex per block; blocks pre-weighted."""
    sizes = [A.shape[0] for A in consumption]
    n_x = sum(sizes)
    n_res = len(capacities)
    if n_x == 0:
        return 0.0, [np.zeros(0) for _ in sizes]
    A_all = np.vstack([A for A in consumption if A.shape[0]])
    W_all = np.vstack([W for W in profit if W.shape[0]])
    if not W_all.any():
        return 0.0, [np.zeros(k) for k in sizes]
    lam_col = sp.csr_matrix(np.ones((n_profits, 1)))
    rows_profit = sp.hstack([sp.csr_matrix(-W_all.T), lam_col])
    rows_cap = sp.hstack([sp.csr_matrix(A_all.T), sp.csr_matrix((n_res, 1))])
    simplex = sp.lil_matrix((len(sizes), n_x + 1))
    start = 0
    for j, k in enumerate(sizes):
        simplex[j, start:start + k] = 1.0
        start += k
    A_ub = sp.vstack([rows_profit, rows_cap, simplex.tocsr()]).tocsc()
    b_ub = np.concatenate([np.zeros(n_profits), capacities, np.ones(len(sizes))])
    c = np.zeros(n_x + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(0, None)] * (n_x + 1),
                  method="highs-ds", options=_HIGHS_OPTIONS)
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    x = np.clip(res.x[:-1], 0.0, 1.0)
    out, start = [], 0
    for k in sizes:
        out.append(x[start:start + k].copy())
        start += k
    return float(res.x[-1]), out


def solve_maximin_exact(inst: OfflineFractionalInstance, tol: float = 1e-9,
                        limits: ExactLimits = DEFAULT_LIMITS) -> LPSolution:
    """Exact optimum of max lam over the weighted instance."""
    n_options = sum(len(rt.options) for rt in inst.request_types)
    _check_limits(max(inst.n_resources, inst.n_profits), n_options, limits)
    blocks = [inst.effective(j) for j in range(len(inst.request_types))]
    lam, x = _solve_blocks([b[0] for b in blocks], [b[1] for b in blocks],
                           np.asarray(inst.capacities), inst.n_profits)
    sol = LPSolution(lam=lam, allocation=x)
    report = check_feasible(inst, sol, tol=max(tol, 1e-9) * 10)
    if not report.ok:
        raise RuntimeError(f"LP solution failed verification at {report.worst_constraint}")
    return sol


def expected_optimum(instance: Instance, stochastic_input: IIDInput, **kw) -> float:
    """W_E: optimum of the expected instance."""
    return solve_maximin_exact(build_expected_instance(instance, stochastic_input), **kw).lam


def check_feasible(inst: OfflineFractionalInstance, sol: LPSolution, tol: float = 1e-9) -> FeasibilityReport:
    """Check every constraint; slacks are relative to ``max(1, |rhs|)``."""
    worst, where = math.inf, "none"

    def record(slack, name):
        nonlocal worst, where
        if slack < worst:
            worst, where = slack, name

    consumption = np.zeros(inst.n_resources)
    profit = np.zeros(inst.n_profits)
    if len(sol.allocation) != len(inst.request_types):
        return FeasibilityReport(False, -math.inf, "allocation shape")
    for j, rt in enumerate(inst.request_types):
        x = np.asarray(sol.allocation[j], dtype=float)
        if x.shape != (len(rt.options),):
            return FeasibilityReport(False, -math.inf, f"allocation shape of type {rt.id}")
        if x.size:
            record(float(x.min()), f"nonnegativity type {rt.id}")
        record(1.0 - float(x.sum()), f"simplex type {rt.id}")
        A, W = inst.effective(j)
        consumption += x @ A
        profit += x @ W
    for i, c in enumerate(inst.capacities):
        record((c - consumption[i]) / max(1.0, abs(c)), f"capacity {i}")
    for i in range(inst.n_profits):
        record((profit[i] - sol.lam) / max(1.0, abs(sol.lam)), f"profit {i}")
    return FeasibilityReport(ok=worst >= -tol, worst_slack=worst, worst_constraint=where)


def realized_instance(instance: Instance, realized_types: Sequence[Optional[int]],
                      capacities: Optional[Sequence[float]] = None) -> OfflineFractionalInstance:
    """Offline instance of a realized request multiset; identical types are aggregated by count."""
    counts = Counter(t for t in realized_types if t is not None and t >= 0)
    weights = tuple(float(counts.get(rt.id, 0)) for rt in instance.request_types)
    return OfflineFractionalInstance(
        n_resources=instance.n_resources,
        n_profits=instance.n_profits,
        capacities=instance.capacities if capacities is None else tuple(capacities),
        request_types=instance.request_types,
        weights=weights,
    )


def random_instance_optimum(instance: Instance, realized_types: Sequence[Optional[int]], **kw) -> float:
    """W_R of one realized request sequence."""
    return solve_maximin_exact(realized_instance(instance, realized_types), **kw).lam


# ============================================================
# Time-varying benchmarks
# ============================================================

def _dist_key(dist: Mapping[int, float]) -> tuple:
    return tuple(sorted((int(k), float(v)) for k, v in dist.items() if v != 0))


def per_step_optima(instance: Instance, schedule: ASISchedule, **kw) -> List[float]:
    """W_E(t): optimum of the expected instance of step ``t``'s distribution over all m steps."""
    if schedule.per_step is None:
        raise UnsupportedVariantError("per-step benchmarks need an explicit schedule")
    cache: Dict[tuple, float] = {}
    out = []
    for dist in schedule.per_step:
        key = _dist_key(dist)
        if key not in cache:
            cache[key] = expected_optimum(instance, IIDInput(dict(dist)), **kw)
        out.append(cache[key])
    return out


@dataclass
class TimeVaryingSolution:
    """Optimum of the time-varying benchmark LP and its per-step profiles."""
    lam: float
    consumption_profile: np.ndarray  # (m, n_resources): c_i(t)
    profit_profile: np.ndarray       # (m, n_profits): OPT_i(t)


def solve_time_varying(instance: Instance, schedule: ASISchedule,
                       limits: ExactLimits = DEFAULT_LIMITS) -> TimeVaryingSolution:
    """Solve the LP with step-specific allocations x_jkt.

    Steps sharing one distribution are interchangeable, so one block of
    variables per distinct distribution (weighted by its step count) gives the
    same optimum and a valid per-step solution.
    """
    if schedule.per_step is None:
        raise UnsupportedVariantError("time-varying LP needs an explicit schedule")
    groups: Dict[tuple, List[int]] = {}
    for t, dist in enumerate(schedule.per_step):
        groups.setdefault(_dist_key(dist), []).append(t)
    keys = list(groups)
    n_options = sum(len(rt.options) for rt in instance.request_types) * len(keys)
    _check_limits(max(instance.n_resources, instance.n_profits), n_options, limits)
    blocks_a, blocks_w, meta = [], [], []
    for g, key in enumerate(keys):
        dist = dict(key)
        count = len(groups[key])
        for j, rt in enumerate(instance.request_types):
            A, W = instance.dense[j]
            p = dist.get(rt.id, 0.0)
            blocks_a.append(count * p * A)
            blocks_w.append(count * p * W)
            meta.append((g, j, p))
    lam, x = _solve_blocks(blocks_a, blocks_w, instance.capacity_array, instance.n_profits)
    per_group_c = np.zeros((len(keys), instance.n_resources))
    per_group_w = np.zeros((len(keys), instance.n_profits))
    for (g, j, p), xj in zip(meta, x):
        A, W = instance.dense[j]
        per_group_c[g] += p * (xj @ A)
        per_group_w[g] += p * (xj @ W)
    c_prof = np.zeros((instance.m, instance.n_resources))
    w_prof = np.zeros((instance.m, instance.n_profits))
    for g, key in enumerate(keys):
        c_prof[groups[key]] = per_group_c[g]
        w_prof[groups[key]] = per_group_w[g]
    return TimeVaryingSolution(lam=lam, consumption_profile=c_prof, profit_profile=w_prof)


# ============================================================
# Sampling solver
# ============================================================

@dataclass
class SamplingEstimate:
    """Bracket of the maximin value found by bisection over gap checks.

    ``lo`` is the largest probed value answered YES and ``hi`` the smallest
    answered NO (or the a-priori upper bound).  ``lower``/``upper`` widen them
    by the gap slack and sampling error.
    """
    lo: float
    hi: float
    lower: float
    upper: float
    probes: List[Tuple[float, str]] = field(default_factory=list)


def solve_maximin_sampling(instance: Instance, stochastic_input: IIDInput, eps: float, delta: float,
                           seed: int, constant: float = 4.0, max_probes: int = 60,
                           max_samples: int = 10_000_000) -> SamplingEstimate:
    from .gap_solver import MixedPCInstance, gap_check, slack_for

    if not isinstance(stochastic_input, IIDInput):
        raise UnsupportedVariantError("sampling solver needs i.i.d. input")
    weights = [instance.m * stochastic_input.probs.get(rt.id, 0.0) for rt in instance.request_types]
    top = 0.0
    for (A, W), wt in zip(instance.dense, weights):
        if wt > 0 and W.shape[0]:
            top = max(top, float(W.sum(axis=1).max()))
    top *= instance.m
    if top == 0.0:
        return SamplingEstimate(0.0, 0.0, 0.0, 0.0)
    keep = [j for j, wt in enumerate(weights) if wt > 0]

    def probe_instance(lam: float) -> MixedPCInstance:
        return MixedPCInstance(
            n_pack=instance.n_resources,
            n_cover=instance.n_profits,
            capacities=instance.capacities,
            demands=(lam,) * instance.n_profits,
            m=instance.m,
            request_types=tuple(instance.request_types[j] for j in keep),
            multiplicities=tuple(weights[j] for j in keep),
        )

    lo, hi = 0.0, top
    probes: List[Tuple[float, str]] = []
    warned = False
    while len(probes) < max_probes and not (lo > 0 and hi <= (1 + eps) * lo):
        lam = 0.5 * (lo + hi)
        pinst = probe_instance(lam)
        gamma = compute_gamma_offline(pinst).gamma
        if gamma > eps * eps and not warned:
            warnings.warn(f"gamma {gamma:.3g} exceeds eps^2; sampling guarantee may not hold")
            warned = True
        seq = np.random.SeedSequence([seed, len(probes)])
        verdict = gap_check(pinst, eps, delta, int(seq.generate_state(1)[0]),
                            constant=constant, max_samples=max_samples)
        probes.append((lam, verdict.answer))
        if verdict.answer == "YES":
            lo = lam
        else:
            hi = lam
    s = slack_for(eps)
    lower = lo * (1 - s) / (1 + s) if s < 1 else 0.0
    upper = hi * (1 + eps) / (1 - eps)
    return SamplingEstimate(lo=lo, hi=hi, lower=lower, upper=upper, probes=probes)


# ============================================================
# Packing-covering slack
# ============================================================

def min_slack_exact(inst, limits: ExactLimits = DEFAULT_LIMITS) -> float:
    """Smallest s with a fractional x: packing rows <= (1+s)c and covering rows >= (1-s)d.

    ``inst`` is a :class:`~stochalloc.gap_solver.MixedPCInstance`; each type
    counts with its multiplicity.
    """
    n_options = sum(len(rt.options) for rt in inst.request_types)
    _check_limits(max(inst.n_pack, inst.n_cover), n_options, limits)
    c = np.asarray(inst.capacities, dtype=float)
    d = np.asarray(inst.demands, dtype=float)
    blocks_a, blocks_w = [], []
    for rt, mult in zip(inst.request_types, inst.multiplicities):
        A, W = _dense_pc(rt, inst.n_pack, inst.n_cover)
        blocks_a.append(mult * A / c)
        blocks_w.append(mult * W / d)
    sizes = [A.shape[0] for A in blocks_a]
    n_x = sum(sizes)
    A_all = np.vstack(blocks_a) if n_x else np.zeros((0, inst.n_pack))
    W_all = np.vstack(blocks_w) if n_x else np.zeros((0, inst.n_cover))
    # variables (x, s): minimize s
    pack = np.hstack([A_all.T, -np.ones((inst.n_pack, 1))])
    cover = np.hstack([-W_all.T, -np.ones((inst.n_cover, 1))])
    simplex = np.zeros((len(sizes), n_x + 1))
    start = 0
    for j, k in enumerate(sizes):
        simplex[j, start:start + k] = 1.0
        start += k
    A_ub = sp.csc_matrix(np.vstack([pack, cover, simplex]))
    b_ub = np.concatenate([np.ones(inst.n_pack), -np.ones(inst.n_cover), np.ones(len(sizes))])
    cost = np.zeros(n_x + 1)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=[(0, None)] * n_x + [(None, None)],
                  method="highs-ds", options=_HIGHS_OPTIONS)
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    return float(res.x[-1])


def _dense_pc(rt: RequestType, n_pack: int, n_cover: int):
    return dense_options(rt, n_pack, n_cover)


def max_cover_ratio(inst, capacity_scale: float = 1.0, limits: ExactLimits = DEFAULT_LIMITS) -> float:
    """max over fractional x of min_i (covering row i)/d_i with capacities scaled by ``capacity_scale``."""
    n_options = sum(len(rt.options) for rt in inst.request_types)
    _check_limits(max(inst.n_pack, inst.n_cover), n_options, limits)
    d = np.asarray(inst.demands, dtype=float)
    blocks_a, blocks_w = [], []
    for rt, mult in zip(inst.request_types, inst.multiplicities):
        A, W = _dense_pc(rt, inst.n_pack, inst.n_cover)
        blocks_a.append(mult * A)
        blocks_w.append(mult * W / d)
    lam, _ = _solve_blocks(blocks_a, blocks_w, capacity_scale * np.asarray(inst.capacities, dtype=float),
                           inst.n_cover)
    return lam
