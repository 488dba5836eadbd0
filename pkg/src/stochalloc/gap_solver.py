"""Sampling test for the gap version of mixed packing-covering programs.

Given capacities ``c`` (packing rows) and demands ``d`` (covering rows), the
test answers YES when some integral choice of one option per request keeps
every packing row within ``c`` while meeting every demand, and NO when no
choice works even after relaxing both sides by the slack ``3 eps (1 + eps)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np

from .core import RequestType, ValidationError, compute_gamma_offline, dense_options
from .lp_oracle import DEFAULT_LIMITS, ExactLimits, max_cover_ratio, min_slack_exact
from .potential import PotentialState, constant_decay


class CertificationError(RuntimeError):
    """Infeasibility of a generated NO instance could not be certified."""


@dataclass(frozen=True)
class MixedPCInstance:
    """Packing rows ``capacities`` and covering rows ``demands`` over ``m`` requests.

    Request types appear with ``multiplicities`` (default 1 each); the
    shortfall ``m - sum(multiplicities)`` consists of null requests.
    """
    n_pack: int
    n_cover: int
    capacities: Tuple[float, ...]
    demands: Tuple[float, ...]
    m: int
    request_types: Tuple[RequestType, ...]
    multiplicities: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "capacities", tuple(float(c) for c in self.capacities))
        object.__setattr__(self, "demands", tuple(float(d) for d in self.demands))
        object.__setattr__(self, "request_types", tuple(self.request_types))
        mult = self.multiplicities
        if mult is None:
            mult = (1.0,) * len(self.request_types)
        object.__setattr__(self, "multiplicities", tuple(float(v) for v in mult))

    @cached_property
    def dense(self):
        return [dense_options(rt, self.n_pack, self.n_cover) for rt in self.request_types]

    @property
    def probabilities(self) -> np.ndarray:
        return np.asarray(self.multiplicities) / self.m

    def with_rows(self, capacities=None, demands=None) -> "MixedPCInstance":
        return MixedPCInstance(
            n_pack=self.n_pack, n_cover=self.n_cover,
            capacities=self.capacities if capacities is None else tuple(capacities),
            demands=self.demands if demands is None else tuple(demands),
            m=self.m, request_types=self.request_types, multiplicities=self.multiplicities)


def validate_mixed(inst: MixedPCInstance) -> List[str]:
    problems = []
    if inst.m < 1:
        problems.append(f"m {inst.m} < 1")
    if len(inst.capacities) != inst.n_pack:
        problems.append(f"capacities length {len(inst.capacities)} != n_pack {inst.n_pack}")
    if len(inst.demands) != inst.n_cover:
        problems.append(f"demands length {len(inst.demands)} != n_cover {inst.n_cover}")
    for i, c in enumerate(inst.capacities):
        if not (math.isfinite(c) and c > 0):
            problems.append(f"capacity {c:g} not positive (row {i})")
    for i, d in enumerate(inst.demands):
        if not (math.isfinite(d) and d > 0):
            problems.append(f"demand {d:g} not positive (row {i})")
    if len(inst.multiplicities) != len(inst.request_types):
        problems.append("one multiplicity per request type required")
    if any(v < 0 for v in inst.multiplicities):
        problems.append("multiplicities must be nonnegative")
    if sum(inst.multiplicities) > inst.m * (1 + 1e-12):
        problems.append(f"multiplicities sum to {sum(inst.multiplicities):g} > m = {inst.m}")
    for rt in inst.request_types:
        for k, opt in enumerate(rt.options):
            for i, a in opt.consumption.items():
                if not 0 <= i < inst.n_pack:
                    problems.append(f"resource id out of range: {i} (type {rt.id}, option {k})")
                elif not (math.isfinite(a) and a >= 0):
                    problems.append(f"consumption {a!r} not finite nonnegative (type {rt.id}, option {k})")
            for i, w in opt.profit.items():
                if not 0 <= i < inst.n_cover:
                    problems.append(f"profit id out of range: {i} (type {rt.id}, option {k})")
                elif not (math.isfinite(w) and w >= 0):
                    problems.append(f"profit {w!r} not finite nonnegative (type {rt.id}, option {k})")
    return problems


def slack_for(eps: float) -> float:
    """Slack separating YES from NO instances at accuracy ``eps``."""
    return 3 * eps * (1 + eps)


def sample_size(gamma: float, m: int, n: int, delta: float, eps: float, constant: float = 4.0) -> int:
    """T = ceil(constant * gamma * m * ln(2n/delta) / eps^2)."""
    if not (gamma > 0 and m > 0 and n > 0 and delta > 0 and eps > 0 and constant > 0):
        raise ValueError("sample_size needs positive gamma, m, n, delta, eps, constant")
    return math.ceil(constant * gamma * m * math.log(2 * n / delta) / (eps * eps))


@dataclass
class GapVerdict:
    answer: str
    T: int
    sum_x: np.ndarray
    sum_y: np.ndarray
    pack_threshold: np.ndarray
    cover_threshold: np.ndarray
    gamma: float = 0.0
    trajectory: Optional[list] = None

    @property
    def pack_margin(self) -> np.ndarray:
        return self.pack_threshold - self.sum_x

    @property
    def cover_margin(self) -> np.ndarray:
        return self.sum_y - self.cover_threshold

    def to_dict(self) -> dict:
        return {
            "answer": self.answer, "T": self.T, "gamma": self.gamma,
            "sum_x": self.sum_x.tolist(), "sum_y": self.sum_y.tolist(),
            "pack_threshold": self.pack_threshold.tolist(),
            "cover_threshold": self.cover_threshold.tolist(),
        }


def gap_state(inst: MixedPCInstance, gamma: float, eps: float, T: int) -> PotentialState:
    c = np.asarray(inst.capacities, dtype=float)
    d = np.asarray(inst.demands, dtype=float)
    gm = gamma * inst.m
    if eps / gm >= 1:
        raise ValueError("eps must be below gamma * m for the potential schedule")
    lx = -np.log(c) + (T - 1) * math.log1p(eps / gm) - (1 + eps) * (T / gm) * math.log1p(eps)
    ly = -np.log(d) + (T - 1) * math.log1p(-eps / gm) - (1 - eps) * (T / gm) * math.log1p(-eps)
    return PotentialState(
        log_phi_x=lx, log_phi_y=ly,
        x_rate=math.log1p(eps) / (gamma * c), y_rate=math.log1p(-eps) / (gamma * d),
        x_decay=constant_decay(T, np.full(inst.n_pack, math.log1p(eps / gm))),
        y_decay=constant_decay(T, np.full(inst.n_cover, math.log1p(-eps / gm))),
    )


def gap_check(inst: MixedPCInstance, eps: float, delta: float, seed, T_override: Optional[int] = None,
              constant: float = 4.0, gamma: Optional[float] = None, max_samples: int = 10_000_000,
              record: bool = False) -> GapVerdict:
    """Sample ``T`` requests uniformly from the multiset and run the potential algorithm on them."""
    problems = validate_mixed(inst)
    if problems:
        raise ValidationError("; ".join(problems))
    if not 0 < eps < 1 or not 0 < delta < 1:
        raise ValueError("eps and delta must lie in (0, 1)")
    computed = compute_gamma_offline(inst).gamma
    if gamma is None:
        gamma = computed
    elif gamma < computed:
        raise ValueError(f"gamma {gamma} below the instance value {computed}")
    c = np.asarray(inst.capacities, dtype=float)
    d = np.asarray(inst.demands, dtype=float)
    if gamma == 0:
        # nothing is consumed or earned by any option
        T = 0 if T_override is None else T_override
        zeros_x, zeros_y = np.zeros(inst.n_pack), np.zeros(inst.n_cover)
        return GapVerdict("NO", T, zeros_x, zeros_y, T * c / inst.m * (1 + eps),
                          T * d / inst.m * (1 - eps), gamma)
    if gamma > eps * eps:
        warnings.warn(f"gamma {gamma:.3g} exceeds eps^2; the verdict guarantee may not hold", stacklevel=2)
    n = inst.n_pack + inst.n_cover
    T = sample_size(gamma, inst.m, n, delta, eps, constant) if T_override is None else int(T_override)
    if T < 1:
        raise ValueError("sample count must be positive")
    if T > max_samples:
        raise ValueError(f"sample count {T} exceeds max_samples {max_samples}")
    rng = np.random.default_rng(seed)
    probs = inst.probabilities
    cdf = np.cumsum(probs)
    draws = np.searchsorted(cdf, rng.random(T), side="right")
    state = gap_state(inst, gamma, eps, T)
    sum_x = np.zeros(inst.n_pack)
    sum_y = np.zeros(inst.n_cover)
    dense = inst.dense
    traj = [] if record else None
    for j in draws.tolist():
        a = w = None
        if j < len(dense):
            A, W = dense[j]
            k = state.choose(A, W)
            if k >= 0:
                a, w = A[k], W[k]
                sum_x += a
                sum_y += w
        state.advance(a, w)
        if record:
            traj.append((j, state.log_phi_x.copy(), state.log_phi_y.copy(), sum_x.copy(), sum_y.copy()))
    pack_thr = T * c / inst.m * (1 + eps)
    cover_thr = T * d / inst.m * (1 - eps)
    yes = bool((sum_x < pack_thr).all() and (sum_y > cover_thr).all())
    return GapVerdict("YES" if yes else "NO", T, sum_x, sum_y, pack_thr, cover_thr, gamma, traj)


def gen_no_instance(base: MixedPCInstance, slack: float, margin: float = 0.05,
                    limits: ExactLimits = DEFAULT_LIMITS) -> MixedPCInstance:
    """Raise demands until even the fractional relaxation misses them at the given slack."""
    if not 0 < slack < 1:
        raise ValueError(f"slack must lie in (0, 1), got {slack!r}")
    best = max_cover_ratio(base, capacity_scale=1 + slack, limits=limits)
    theta = max(1.0, (1 + margin) * best / (1 - slack))
    no = base.with_rows(demands=[theta * d for d in base.demands])
    certified = min_slack_exact(no, limits=limits)
    if not certified > slack:
        raise CertificationError(f"minimum slack {certified:.6g} not above requested {slack:.6g}")
    return no
