"""Online allocation algorithms built on the potential engine.

Every run draws requests from a stream, picks an option per request and
records the outcome in a :class:`~stochalloc.core.RunReport`.  A stream is an
:class:`IIDInput`, an :class:`ASISchedule`, or an explicit sequence of type
ids (``None`` or ``-1`` for a null request).  Randomness comes from
``numpy.random.default_rng(seed)`` (PCG64).
"""

from __future__ import annotations

import math
import statistics
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import (
    ASISchedule,
    IIDInput,
    Instance,
    RequestType,
    RunReport,
    ValidationError,
    build_expected_instance,
    dense_options,
)
from .lp_oracle import LPSolution, check_feasible, realized_instance, solve_maximin_exact
from .potential import PotentialState, constant_decay

Stream = Union[IIDInput, ASISchedule, Sequence[Optional[int]]]


# ============================================================
# Request streams and option selection
# ============================================================

class _Source:
    """Yields the type index of each arriving request (-1 for null)."""

    def __init__(self, instance, stream: Stream, rng: np.random.Generator):
        self.instance = instance
        self.ids = [rt.id for rt in instance.request_types]
        self.index_of = {tid: j for j, tid in enumerate(self.ids)}
        m = instance.m
        self.policy = None
        if isinstance(stream, IIDInput):
            self.drawn = self._sample(stream.probs, rng.random(m))
        elif isinstance(stream, ASISchedule):
            if stream.adaptive:
                self.policy = stream.policy
                self.rng = rng
                self.drawn = None
            else:
                if len(stream.per_step) < m:
                    raise ValidationError(f"schedule has {len(stream.per_step)} steps, need {m}")
                u = rng.random(m)
                self.drawn = np.empty(m, dtype=np.int64)
                steps_by_dist = {}
                for t in range(m):
                    key = tuple(sorted(stream.per_step[t].items()))
                    steps_by_dist.setdefault(key, []).append(t)
                for key, steps in steps_by_dist.items():
                    idx = np.asarray(steps)
                    self.drawn[idx] = self._sample(dict(key), u[idx])
        else:
            seq = list(stream)
            if len(seq) < m:
                raise ValidationError(f"stream has {len(seq)} requests, need {m}")
            out = np.empty(m, dtype=np.int64)
            for t in range(m):
                tid = seq[t]
                if tid is None or tid == -1:
                    out[t] = -1
                elif tid in self.index_of:
                    out[t] = self.index_of[tid]
                else:
                    raise ValidationError(f"unknown request type id {tid} at step {t}")
            self.drawn = out

    def _sample(self, probs, u: np.ndarray) -> np.ndarray:
        p = np.array([float(probs.get(tid, 0.0)) for tid in self.ids])
        if (p < 0).any() or p.sum() > 1 + 1e-9:
            raise ValidationError("distribution must be nonnegative with total mass <= 1")
        cdf = np.cumsum(p)
        j = np.searchsorted(cdf, u, side="right")
        j[j >= len(p)] = -1
        return j.astype(np.int64)

    def next(self, s: int, history: list) -> int:
        if self.drawn is not None:
            return int(self.drawn[s])
        dist = self.policy(s, history)
        return int(self._sample(dist, np.array([self.rng.random()]))[0])


def sample_requests(instance, stream: Stream, seed) -> np.ndarray:
    """Type ids of one realized request sequence (-1 for a null request)."""
    source = _Source(instance, stream, np.random.default_rng(seed))
    if source.drawn is None:
        raise ValidationError("adaptive schedules cannot be sampled without a run")
    ids = np.asarray(source.ids + [-1], dtype=np.int64)
    return ids[source.drawn]


class DenseSelector:
    """Option choice by explicit evaluation of every stored option."""

    def __init__(self, instance):
        self.dense = instance.dense

    def choose(self, j: int, state: PotentialState):
        A, W = self.dense[j]
        k = state.choose(A, W)
        if k < 0:
            return -1, None, None
        return k, A[k], W[k]


def make_selector(instance):
    if hasattr(instance, "make_selector"):
        return instance.make_selector()
    return DenseSelector(instance)


class _Run:
    """Bookkeeping shared by all online algorithms."""

    def __init__(self, instance, stream: Stream, seed, hard_cap: bool = False, record: bool = False):
        self.instance = instance
        self.rng = np.random.default_rng(seed)
        self.source = _Source(instance, stream, self.rng)
        self.selector = make_selector(instance)
        m = instance.m
        self.capacities = np.asarray(instance.capacities, dtype=float)
        self.types = np.full(m, -1, dtype=np.int64)
        self.options = np.full(m, -1, dtype=np.int64)
        self.X = np.zeros(instance.n_resources)
        self.Y = np.zeros(instance.n_profits)
        self.violated_at = {}
        self.history: list = []
        self.hard_cap = hard_cap
        self.record = record
        self.trajectories: list = []
        self.ids = self.source.ids

    def arrive(self, s: int) -> int:
        j = self.source.next(s, self.history)
        self.types[s] = self.ids[j] if j >= 0 else -1
        return j

    def commit(self, s: int, k: int, a, w) -> None:
        if k >= 0:
            self.options[s] = k
            self.X += a
            self.Y += w
            over = np.nonzero(self.X > self.capacities)[0]
            for i in over.tolist():
                self.violated_at.setdefault(i, s)
        if self.source.policy is not None:
            tid = int(self.types[s])
            self.history.append((None if tid < 0 else tid, None if k < 0 else k))

    def would_violate(self, a) -> bool:
        return bool((self.X + a > self.capacities).any())

    def serve(self, start: int, stop: int, state: PotentialState, label=None) -> None:
        """Run steps ``start..stop-1`` through ``state``."""
        traj_x = traj_y = None
        if self.record:
            traj_x = [state.log_phi_x.copy()]
            traj_y = [state.log_phi_y.copy()]
        for s in range(start, stop):
            j = self.arrive(s)
            k, a, w = (-1, None, None) if j < 0 else self.selector.choose(j, state)
            if k >= 0 and self.hard_cap and self.would_violate(a):
                k, a, w = -1, None, None
            state.advance(a, w)
            self.commit(s, k, a, w)
            if self.record:
                traj_x.append(state.log_phi_x.copy())
                traj_y.append(state.log_phi_y.copy())
        if self.record:
            self.trajectories.append({
                "label": label, "start": start, "stop": stop,
                "log_phi_x": np.array(traj_x), "log_phi_y": np.array(traj_y),
            })

    def report(self, **extras) -> RunReport:
        if self.record:
            extras["trajectories"] = self.trajectories
        violations = sorted(((i, s) for i, s in self.violated_at.items()), key=lambda v: (v[1], v[0]))
        return RunReport(types=self.types, options=self.options, cum_consumption=self.X.copy(),
                         cum_profit=self.Y.copy(), violations=violations, extras=extras)


def _check_eps(eps: float) -> None:
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps!r}")


def _check_gamma(gamma: float) -> None:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma!r}")


def gamma_precondition_ok(gamma: float, eps: float, n: int) -> bool:
    """gamma <= eps^2 / ln(n/eps), the guarantee regime with constant 1."""
    return gamma <= eps * eps / math.log(max(n, 1) / eps)


def _warn_gamma(gamma: float, eps: float, n: int) -> None:
    if not gamma_precondition_ok(gamma, eps, n):
        warnings.warn(f"gamma {gamma:.3g} above eps^2/ln(n/eps); the guarantee may not apply",
                      stacklevel=3)


def online_step(state: PotentialState, request: RequestType) -> Tuple[Optional[int], PotentialState]:
    """Choose an option for ``request`` and advance ``state`` in place."""
    A, W = dense_options(request, state.log_phi_x.shape[0], state.log_phi_y.shape[0])
    k = state.choose(A, W)
    if k < 0:
        state.advance(None, None)
        return None, state
    state.advance(A[k], W[k])
    return k, state


# ============================================================
# Potential schedules
# ============================================================

def known_we_state(capacities: Sequence[float], n_profits: int, w_e: float, gamma: float,
                   eps: float, m: int) -> PotentialState:
    """Potentials for the algorithm that knows the benchmark ``w_e``."""
    c = np.asarray(capacities, dtype=float)
    q = eps / ((1 + eps) * gamma * m)
    if q >= 1:
        raise ValueError("gamma * m too small for the potential schedule")
    lx = -np.log(c) + (m - 1) * math.log1p(q) - math.log1p(eps) / gamma
    ly0 = -math.log(w_e) + (m - 1) * math.log1p(-q) - ((1 - eps) / (gamma * (1 + eps))) * math.log1p(-eps)
    return PotentialState(
        log_phi_x=lx,
        log_phi_y=np.full(n_profits, ly0),
        x_rate=math.log1p(eps) / (gamma * c),
        y_rate=np.full(n_profits, math.log1p(-eps) / (gamma * w_e)),
        x_decay=constant_decay(m, np.full(len(c), math.log1p(q))),
        y_decay=constant_decay(m, np.full(n_profits, math.log1p(-q))),
    )


def asi2_state(capacities: Sequence[float], n_profits: int, w_e_per_step: Sequence[float],
               gamma: float, eps: float) -> PotentialState:
    """Known-benchmark potentials whose profit side follows per-step benchmarks."""
    m = len(w_e_per_step)
    c = np.asarray(capacities, dtype=float)
    w_bar = statistics.mean(float(w) for w in w_e_per_step)
    q = eps / ((1 + eps) * gamma * m)
    if q >= 1:
        raise ValueError("gamma * m too small for the potential schedule")
    qy = [eps * (float(w) / w_bar) / ((1 + eps) * gamma * m) for w in w_e_per_step]
    if max(qy) >= 1:
        raise ValueError("gamma * m too small for the potential schedule")
    log_fy = [math.log1p(-v) for v in qy]
    lx = -np.log(c) + (m - 1) * math.log1p(q) - math.log1p(eps) / gamma
    ly0 = -math.log(w_bar) + math.fsum(log_fy[1:]) - ((1 - eps) / (gamma * (1 + eps))) * math.log1p(-eps)
    y_decay = np.zeros((m, n_profits))
    y_decay[:-1] = np.asarray(log_fy[1:])[:, None]
    return PotentialState(
        log_phi_x=lx,
        log_phi_y=np.full(n_profits, ly0),
        x_rate=math.log1p(eps) / (gamma * c),
        y_rate=np.full(n_profits, math.log1p(-eps) / (gamma * w_bar)),
        x_decay=constant_decay(m, np.full(len(c), math.log1p(q))),
        y_decay=y_decay,
    )


def asi3_state(capacities: Sequence[float], c_profile: np.ndarray, opt_profile: np.ndarray,
               gamma: float, eps: float) -> PotentialState:
    """Potentials whose factors follow per-step consumption and profit profiles."""
    c = np.asarray(capacities, dtype=float)
    c_profile = np.asarray(c_profile, dtype=float)
    opt_profile = np.asarray(opt_profile, dtype=float)
    m = c_profile.shape[0]
    opt_total = np.array([math.fsum(col) for col in opt_profile.T])
    qx = eps * c_profile / ((1 + eps) * c * gamma)
    log_fx = np.log1p(qx)
    lx = -np.log(c) + np.array([math.fsum(col) for col in log_fx[1:].T]) - math.log1p(eps) / gamma
    x_decay = np.zeros_like(log_fx)
    x_decay[:-1] = log_fx[1:]

    n_profits = opt_profile.shape[1]
    ly = np.full(n_profits, -np.inf)
    y_rate = np.zeros(n_profits)
    y_decay = np.zeros((m, n_profits))
    tail = ((1 - eps) / (gamma * (1 + eps))) * math.log1p(-eps)
    for i in range(n_profits):
        if opt_total[i] <= 0:
            continue
        qy = eps * opt_profile[:, i] / ((1 + eps) * opt_total[i] * gamma)
        if qy.max() >= 1:
            raise ValueError("gamma too small for the profit profile")
        log_fy = np.log1p(-qy)
        ly[i] = -math.log(opt_total[i]) + math.fsum(log_fy[1:]) - tail
        y_rate[i] = math.log1p(-eps) / (gamma * opt_total[i])
        y_decay[:-1, i] = log_fy[1:]
    return PotentialState(
        log_phi_x=lx, log_phi_y=ly,
        x_rate=math.log1p(eps) / (gamma * c), y_rate=y_rate,
        x_decay=x_decay, y_decay=y_decay,
    )


EPS_Y_CAP = 0.99


def stage_state(capacities: Sequence[float], n_profits: int, gamma: float, m: int, length: int,
                eps_x: float, eps_y: Optional[float], z: float, w_max: float) -> PotentialState:
    """Potentials for one stage of the unknown-distribution algorithm.

    ``eps_y=None`` drops the profit side (no usable estimate yet).
    """
    c = np.asarray(capacities, dtype=float)
    gm = gamma * m
    lx = (np.log(eps_x / (gamma * c)) + (length - 1) * math.log1p(eps_x / gm)
          - (1 + eps_x) * (length / gm) * math.log1p(eps_x))
    x_decay = constant_decay(length, np.full(len(c), math.log1p(eps_x / gm)))
    if eps_y is None:
        ly = np.full(n_profits, -np.inf)
        y_rate = np.zeros(n_profits)
        y_decay = constant_decay(length, np.zeros(n_profits))
    else:
        if eps_y / gm >= 1:
            raise ValueError("gamma * m too small for the potential schedule")
        ly0 = (math.log(eps_y / w_max) + (length - 1) * math.log1p(-eps_y / gm)
               - (1 - eps_y) * (length * z / (m * w_max)) * math.log1p(-eps_y))
        ly = np.full(n_profits, ly0)
        y_rate = np.full(n_profits, math.log1p(-eps_y) / w_max)
        y_decay = constant_decay(length, np.full(n_profits, math.log1p(-eps_y / gm)))
    return PotentialState(log_phi_x=lx, log_phi_y=ly, x_rate=math.log1p(eps_x) / (gamma * c),
                          y_rate=y_rate, x_decay=x_decay, y_decay=y_decay)


# ============================================================
# Algorithms
# ============================================================

def ho_conservative_run(instance: Instance, stochastic_input: IIDInput, x_star, eps: float,
                        seed, tol: float = 1e-7) -> RunReport:
    """Serve type ``j`` with option ``k`` with probability ``x*_jk / (1 + eps)``."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    allocation = x_star.allocation if isinstance(x_star, LPSolution) else [np.asarray(x, dtype=float) for x in x_star]
    expected = build_expected_instance(instance, stochastic_input)
    report = check_feasible(expected, LPSolution(lam=0.0, allocation=allocation), tol=tol)
    if not report.ok:
        raise ValidationError(f"x_star infeasible for the expected instance: {report.worst_constraint}")
    run = _Run(instance, stochastic_input, seed)
    cdfs = [np.cumsum(np.asarray(x, dtype=float) / (1 + eps)) for x in allocation]
    u = run.rng.random(instance.m)
    for s in range(instance.m):
        j = run.arrive(s)
        k = -1
        if j >= 0 and cdfs[j].size:
            k = int(np.searchsorted(cdfs[j], u[s], side="right"))
            if k >= cdfs[j].size:
                k = -1
        if k >= 0:
            A, W = instance.dense[j]
            run.commit(s, k, A[k], W[k])
        else:
            run.commit(s, -1, None, None)
    return run.report()


def known_we_run(instance, stream: Stream, w_e: float, gamma: float, eps: float, seed,
                 hard_cap: bool = False, record: bool = False) -> RunReport:
    """Online allocation knowing only the benchmark value ``w_e``."""
    if not w_e > 0:
        raise ValueError(f"benchmark W_E must be positive, got {w_e!r}")
    _check_eps(eps)
    _check_gamma(gamma)
    _warn_gamma(gamma, eps, instance.n_resources)
    state = known_we_state(instance.capacities, instance.n_profits, w_e, gamma, eps, instance.m)
    run = _Run(instance, stream, seed, hard_cap, record)
    run.serve(0, instance.m, state, label="known-we")
    return run.report(benchmark=w_e)


def asi1_run(instance, stream: Stream, w_e_per_step: Sequence[float], gamma: float, eps: float,
             seed, hard_cap: bool = False, record: bool = False) -> RunReport:
    """Known-benchmark algorithm against the weakest per-step benchmark."""
    return known_we_run(instance, stream, min(w_e_per_step), gamma, eps, seed, hard_cap, record)


def asi2_run(instance, stream: Stream, w_e_per_step: Sequence[float], gamma: float, eps: float,
             seed, hard_cap: bool = False, record: bool = False) -> RunReport:
    """Online allocation knowing every per-step benchmark; target is their mean."""
    if len(w_e_per_step) != instance.m:
        raise ValidationError(f"need {instance.m} per-step benchmarks, got {len(w_e_per_step)}")
    if any(not w > 0 for w in w_e_per_step):
        raise ValueError("every per-step benchmark must be positive")
    _check_eps(eps)
    _check_gamma(gamma)
    _warn_gamma(gamma, eps, instance.n_resources)
    state = asi2_state(instance.capacities, instance.n_profits, w_e_per_step, gamma, eps)
    run = _Run(instance, stream, seed, hard_cap, record)
    run.serve(0, instance.m, state, label="asi2")
    return run.report(benchmark=statistics.mean(float(w) for w in w_e_per_step))


def asi3_run(instance, stream: Stream, c_profile, opt_profile, gamma: float, eps: float, seed,
             hard_cap: bool = False, record: bool = False, tol: float = 1e-9) -> RunReport:
    """Online allocation following per-step consumption and profit profiles."""
    c_profile = np.asarray(c_profile, dtype=float)
    opt_profile = np.asarray(opt_profile, dtype=float)
    m = instance.m
    if c_profile.shape != (m, instance.n_resources):
        raise ValidationError(f"consumption profile shape {c_profile.shape} != {(m, instance.n_resources)}")
    if opt_profile.shape != (m, instance.n_profits):
        raise ValidationError(f"profit profile shape {opt_profile.shape} != {(m, instance.n_profits)}")
    if (c_profile < 0).any() or (opt_profile < 0).any():
        raise ValidationError("profiles must be nonnegative")
    caps = np.asarray(instance.capacities, dtype=float)
    if (c_profile.sum(axis=0) > caps * (1 + tol)).any():
        raise ValidationError("consumption profile exceeds capacities")
    _check_eps(eps)
    _check_gamma(gamma)
    _warn_gamma(gamma, eps, instance.n_resources)
    state = asi3_state(caps, c_profile, opt_profile, gamma, eps)
    run = _Run(instance, stream, seed, hard_cap, record)
    run.serve(0, m, state, label="asi3")
    return run.report(benchmark=float(opt_profile.sum(axis=0).min()))


# ============================================================
# Staged algorithm for unknown distributions
# ============================================================

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class StageParams:
    """Stage layout; index 0 of ``lengths`` is the observation stage."""
    l: int
    lengths: List[int]
    delta: float
    log_term: float
    eps_x: List[float]
    eps_y: List[Optional[float]] = field(default_factory=list)
    Z: List[float] = field(default_factory=list)
    E: List[float] = field(default_factory=list)
    w_max: List[float] = field(default_factory=list)

    @property
    def starts(self) -> List[int]:
        out, acc = [], 0
        for t in self.lengths:
            out.append(acc)
            acc += t
        return out


def stage_params(m: int, eps: float, gamma: float, n: int) -> StageParams:
    if not (1.0 / m <= eps <= 0.5):
        raise ValueError(f"eps must lie in [1/m, 1/2], got {eps!r} with m={m}")
    l = max(1, math.ceil(math.log2(1.0 / eps) - 1e-12))
    lengths = [_round_half_up(eps * m)]
    for r in range(l - 1):
        lengths.append(_round_half_up(eps * m * 2 ** r))
    residue = m - sum(lengths)
    if residue <= 0:
        raise ValueError("stage rounding leaves no requests for the final stage")
    lengths.append(residue)
    delta = eps / (3 * l)
    log_term = math.log(2 * n / delta)
    eps_x = [math.sqrt(4 * gamma * m * log_term / t) for t in lengths]
    return StageParams(l=l, lengths=lengths, delta=delta, log_term=log_term, eps_x=eps_x)


def staged_run(instance, stream: Stream, gamma: float, eps: float, seed,
               offline_oracle: Optional[Callable] = None, alpha: float = 1.0,
               w_max: Optional[float] = None, hard_cap: bool = False, record: bool = False) -> RunReport:
    """Unknown-distribution algorithm: observe, estimate, then serve in doubling stages.

    ``offline_oracle(stage_instance)`` returns the optimum (or an
    ``alpha``-approximation) of an offline fractional instance; the default
    solves it exactly and divides by ``alpha``.
    """
    if alpha < 1:
        raise ValueError("alpha must be at least 1")
    _check_gamma(gamma)
    m = instance.m
    n = max(instance.n_resources, instance.n_profits)
    params = stage_params(m, eps, gamma, n)
    _warn_gamma(gamma, eps, instance.n_resources)
    if offline_oracle is None:
        def offline_oracle(inst):
            return solve_maximin_exact(inst).lam / alpha
    run = _Run(instance, stream, seed, hard_cap, record)
    starts = params.starts
    t_obs = params.lengths[0]
    for s in range(t_obs):
        run.arrive(s)
        run.commit(s, -1, None, None)
    caps = np.asarray(instance.capacities, dtype=float)
    for r in range(params.l):
        prev = r  # index into lengths of stage r-1
        t_prev = params.lengths[prev]
        seen = run.types[starts[prev]:starts[prev] + t_prev].tolist()
        stage_inst = realized_instance(instance, seen, capacities=tuple(t_prev * caps / m))
        E = float(offline_oracle(stage_inst))
        Z = E / (1 + params.eps_x[prev]) * m / t_prev
        wm = w_max
        if wm is None:
            wm = _observed_max_profit(instance, run.types[:starts[r + 1]], run.source.index_of)
        length = params.lengths[r + 1]
        if Z > 0 and wm > 0:
            eps_y = min(math.sqrt(2 * wm * m * params.log_term / (length * Z)), EPS_Y_CAP)
        else:
            eps_y = None
        params.E.append(E)
        params.Z.append(Z)
        params.eps_y.append(eps_y)
        params.w_max.append(wm)
        state = stage_state(caps, instance.n_profits, gamma, m, length, params.eps_x[r + 1],
                            eps_y, Z, wm if wm else 1.0)
        run.serve(starts[r + 1], starts[r + 1] + length, state, label=r)
    return run.report(stage_params=params)


def _observed_max_profit(instance, type_ids: np.ndarray, index_of) -> float:
    best = 0.0
    for tid in np.unique(type_ids).tolist():
        if tid < 0:
            continue
        _, W = instance.dense[index_of[tid]]
        if W.size:
            best = max(best, float(W.max()))
    return best


# ============================================================
# Posted prices
# ============================================================

def posted_prices(state: PotentialState) -> np.ndarray:
    """Per-resource prices making a utility-maximizing buyer pick the potential argmin."""
    if state.log_phi_y.shape[0] != 1:
        raise ValueError("posted prices need exactly one profit type")
    if not np.isfinite(state.log_phi_y[0]):
        raise ValueError("posted prices need a positive profit potential")
    return np.exp(state.log_phi_x - state.log_phi_y[0])


def posted_price_choice(A: np.ndarray, W: np.ndarray, prices: np.ndarray) -> int:
    """Utility-maximizing option under posted prices, or -1 when every utility is negative."""
    if A.shape[0] == 0:
        return -1
    utility = W[:, 0] - A @ prices
    k = int(np.argmax(utility))
    return k if utility[k] >= 0 else -1
