"""Domain types for online stochastic resource allocation.

An :class:`Instance` lists resources with capacities and a finite set of
request types; each request type offers options that consume resources and
earn profit of one or more types.  Not serving a request (the "bottom"
option) is implicit and always available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np


class ValidationError(ValueError):
    """Raised when an instance or argument violates a documented invariant."""


class UnsupportedVariantError(ValueError):
    """Raised when an operation receives a stochastic input it cannot handle."""


# ============================================================
# Domain types
# ============================================================

@dataclass(frozen=True)
class OptionVector:
    """Sparse consumption and profit of one way of serving a request."""
    consumption: Mapping[int, float] = field(default_factory=dict)
    profit: Mapping[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class RequestType:
    id: int
    options: Tuple[OptionVector, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))


@dataclass(frozen=True)
class Instance:
    """Resource allocation instance: ``m`` requests over ``request_types``."""
    n_resources: int
    n_profits: int
    capacities: Tuple[float, ...]
    m: int
    request_types: Tuple[RequestType, ...]

    def __post_init__(self):
        object.__setattr__(self, "capacities", tuple(float(c) for c in self.capacities))
        object.__setattr__(self, "request_types", tuple(self.request_types))

    @cached_property
    def index_of(self) -> Dict[int, int]:
        return {rt.id: idx for idx, rt in enumerate(self.request_types)}

    @cached_property
    def dense(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Per-type ``(A, W)`` arrays of shape ``(K_j, n_resources)`` and ``(K_j, n_profits)``."""
        return [dense_options(rt, self.n_resources, self.n_profits) for rt in self.request_types]

    @property
    def capacity_array(self) -> np.ndarray:
        return np.asarray(self.capacities, dtype=float)

    def max_profit_entry(self) -> float:
        best = 0.0
        for _, W in self.dense:
            if W.size:
                best = max(best, float(W.max()))
        return best


@dataclass(frozen=True)
class IIDInput:
    """Requests drawn i.i.d.; probability mass missing from ``probs`` is a null request."""
    probs: Mapping[int, float]


@dataclass(frozen=True)
class ASISchedule:
    """Adversarial stochastic input.

    Exactly one of ``per_step`` (an explicit list of ``m`` distributions) or
    ``policy`` is set.  A policy is called as ``policy(step, history)`` where
    ``history`` is the list of public ``(type_id, option)`` decisions made so
    far, and returns the distribution for that step.
    """
    per_step: Optional[Tuple[Mapping[int, float], ...]] = None
    policy: Optional[Callable[[int, list], Mapping[int, float]]] = None

    def __post_init__(self):
        if (self.per_step is None) == (self.policy is None):
            raise ValidationError("ASISchedule needs exactly one of per_step or policy")
        if self.per_step is not None:
            object.__setattr__(self, "per_step", tuple(self.per_step))

    @property
    def adaptive(self) -> bool:
        return self.policy is not None


StochasticInput = Union[IIDInput, ASISchedule]


@dataclass(frozen=True)
class OfflineFractionalInstance:
    """An instance whose request types carry scale weights (expected multiplicities)."""
    n_resources: int
    n_profits: int
    capacities: Tuple[float, ...]
    request_types: Tuple[RequestType, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "capacities", tuple(float(c) for c in self.capacities))
        object.__setattr__(self, "request_types", tuple(self.request_types))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.weights) != len(self.request_types):
            raise ValidationError("one weight per request type required")
        if any(w < 0 for w in self.weights):
            raise ValidationError("scale weights must be nonnegative")

    @cached_property
    def dense(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return [dense_options(rt, self.n_resources, self.n_profits) for rt in self.request_types]

    def effective(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
        """Weighted consumption and profit arrays of type index ``j``."""
        A, W = self.dense[j]
        return self.weights[j] * A, self.weights[j] * W


@dataclass(frozen=True)
class GammaReport:
    gamma: float
    witness: Optional[Tuple[int, int, int, str]]  # (row i, type id j, option k, "consumption"|"profit")


@dataclass
class RunReport:
    """Outcome of one online run.

    ``types`` holds the arriving type id per step (-1 for a null request) and
    ``options`` the chosen option index (-1 for bottom).
    """
    types: np.ndarray
    options: np.ndarray
    cum_consumption: np.ndarray
    cum_profit: np.ndarray
    violations: List[Tuple[int, int]]
    extras: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return float(self.cum_profit.min())

    @property
    def violated(self) -> bool:
        return bool(self.violations)

    @property
    def served_count(self) -> int:
        return int(np.count_nonzero(self.options >= 0))

    @property
    def decisions(self) -> List[Tuple[Optional[int], Optional[int]]]:
        return [
            (None if t < 0 else int(t), None if k < 0 else int(k))
            for t, k in zip(self.types.tolist(), self.options.tolist())
        ]


# ============================================================
# Helpers
# ============================================================

def dense_options(rt: RequestType, n_resources: int, n_profits: int) -> Tuple[np.ndarray, np.ndarray]:
    K = len(rt.options)
    A = np.zeros((K, n_resources))
    W = np.zeros((K, n_profits))
    for k, opt in enumerate(rt.options):
        for i, amount in opt.consumption.items():
            if not 0 <= i < n_resources:
                raise ValidationError(f"resource id out of range: {i}")
            A[k, i] = amount
        for i, amount in opt.profit.items():
            if not 0 <= i < n_profits:
                raise ValidationError(f"profit id out of range: {i}")
            W[k, i] = amount
    return A, W


def validate_instance(instance: Instance, allow_large_gamma: bool = False) -> List[str]:
    """Return one description per violated invariant; empty when the instance is valid.

    An option consuming a whole capacity (gamma >= 1) is flagged unless
    ``allow_large_gamma`` is set, as budgeted allocation permits it.
    """
    problems = []
    if instance.n_resources < 1:
        problems.append(f"n_resources {instance.n_resources} < 1")
    if instance.n_profits < 1:
        problems.append(f"n_profits {instance.n_profits} < 1")
    if instance.m < 1:
        problems.append(f"m {instance.m} < 1")
    if len(instance.capacities) != instance.n_resources:
        problems.append(
            f"capacities length {len(instance.capacities)} != n_resources {instance.n_resources}")
    for i, c in enumerate(instance.capacities):
        if not math.isfinite(c):
            problems.append(f"capacity {c!r} not finite (resource {i})")
        elif c <= 0:
            problems.append(f"capacity {c:g} not positive (resource {i})")
    seen = set()
    for rt in instance.request_types:
        if rt.id in seen:
            problems.append(f"duplicate request type id {rt.id}")
        seen.add(rt.id)
        for k, opt in enumerate(rt.options):
            where = f"(type {rt.id}, option {k})"
            for i, amount in opt.consumption.items():
                if not 0 <= i < instance.n_resources:
                    problems.append(f"resource id out of range: {i} {where}")
                    continue
                if not math.isfinite(amount) or amount < 0:
                    problems.append(f"consumption {amount!r} not finite nonnegative {where}")
                elif not allow_large_gamma and i < len(instance.capacities) and 0 < instance.capacities[i] <= amount:
                    problems.append(f"consumption {amount:g} reaches capacity, gamma >= 1 {where}")
            for i, amount in opt.profit.items():
                if not 0 <= i < instance.n_profits:
                    problems.append(f"profit id out of range: {i} {where}")
                elif not math.isfinite(amount) or amount < 0:
                    problems.append(f"profit {amount!r} not finite nonnegative {where}")
    return problems


def validate_distribution(instance: Instance, probs: Mapping[int, float], where: str = "") -> List[str]:
    problems = []
    total = 0.0
    for tid, p in probs.items():
        if tid not in instance.index_of:
            problems.append(f"unknown request type id {tid}{where}")
        if not math.isfinite(p) or p < 0:
            problems.append(f"probability {p!r} of type {tid} not in [0, 1]{where}")
        else:
            total += p
    if total > 1 + 1e-9:
        problems.append(f"probabilities sum to {total:.12g} > 1{where}")
    return problems


def validate_input(instance: Instance, stochastic_input: StochasticInput) -> List[str]:
    if isinstance(stochastic_input, IIDInput):
        return validate_distribution(instance, stochastic_input.probs)
    if stochastic_input.per_step is None:
        return []
    problems = []
    if len(stochastic_input.per_step) != instance.m:
        problems.append(f"ASI schedule has {len(stochastic_input.per_step)} steps, m = {instance.m}")
    for t, dist in enumerate(stochastic_input.per_step):
        problems.extend(validate_distribution(instance, dist, where=f" (step {t})"))
    return problems


def require_valid(instance: Instance, stochastic_input: Optional[StochasticInput] = None,
                  allow_large_gamma: bool = False) -> None:
    problems = validate_instance(instance, allow_large_gamma)
    if stochastic_input is not None:
        problems += validate_input(instance, stochastic_input)
    if problems:
        raise ValidationError("; ".join(problems))


def expected_weights(instance: Instance, probs: Mapping[int, float], m: Optional[float] = None) -> Tuple[float, ...]:
    m = instance.m if m is None else m
    return tuple(m * float(probs.get(rt.id, 0.0)) for rt in instance.request_types)


def build_expected_instance(instance: Instance, stochastic_input: StochasticInput) -> OfflineFractionalInstance:
    """Expected instance: request type ``j`` appears with weight ``m * p_j``."""
    if not isinstance(stochastic_input, IIDInput):
        raise UnsupportedVariantError("the expected instance is defined for i.i.d. input only")
    return OfflineFractionalInstance(
        n_resources=instance.n_resources,
        n_profits=instance.n_profits,
        capacities=instance.capacities,
        request_types=instance.request_types,
        weights=expected_weights(instance, stochastic_input.probs),
    )


def _gamma(request_types, packing_rows: Sequence[float], covering_rows: Sequence[float]) -> GammaReport:
    best = 0.0
    witness = None
    # scan order (i, j, k, side) makes the first strict maximum the lowest-index triple
    candidates = []
    for j_pos, rt in enumerate(request_types):
        for k, opt in enumerate(rt.options):
            for i, a in opt.consumption.items():
                if a > 0:
                    candidates.append(((i, j_pos, k, 0), a / packing_rows[i], (i, rt.id, k, "consumption")))
            for i, w in opt.profit.items():
                if w > 0:
                    candidates.append(((i, j_pos, k, 1), w / covering_rows[i], (i, rt.id, k, "profit")))
    candidates.sort(key=lambda c: c[0])
    for _, ratio, wit in candidates:
        if ratio > best:
            best, witness = ratio, wit
    return GammaReport(gamma=best, witness=witness)


def compute_gamma_online(instance: Instance, w_e: float) -> GammaReport:
    """Largest single-request significance against capacities and the benchmark ``w_e``."""
    if not w_e > 0:
        raise ValueError(f"benchmark W_E must be positive, got {w_e!r}")
    return _gamma(instance.request_types, instance.capacities, [w_e] * instance.n_profits)


def compute_gamma_offline(instance) -> GammaReport:
    """Same as :func:`compute_gamma_online` for a mixed packing-covering instance."""
    if any(c <= 0 for c in instance.capacities) or any(d <= 0 for d in instance.demands):
        raise ValueError("capacities and demands must be positive")
    return _gamma(instance.request_types, instance.capacities, instance.demands)


# ============================================================
# Option oracle
# ============================================================

def select_option(A: np.ndarray, W: np.ndarray, resource_prices: np.ndarray, profit_weights: np.ndarray) -> int:
    """Index of the surrogate-minimizing option, or -1 for bottom.

    Score of option k is ``A[k] . prices - W[k] . weights``; bottom scores 0.
    A real option wins ties against bottom; among options the lowest index wins.
    """
    if A.shape[0] == 0:
        return -1
    scores = A @ resource_prices - W @ profit_weights
    k = int(np.argmin(scores))
    return k if scores[k] <= 0 else -1


def best_option(request: RequestType, resource_prices, profit_weights) -> Optional[int]:
    prices = np.asarray(resource_prices, dtype=float)
    weights = np.asarray(profit_weights, dtype=float)
    if prices.ndim != 1 or weights.ndim != 1:
        raise ValueError("price and weight vectors must be one-dimensional")
    A, W = dense_options(request, len(prices), len(weights))
    k = select_option(A, W, prices, weights)
    return None if k < 0 else k


# ============================================================
# Chernoff bounds
# ============================================================

UPPER_SMALL_MAX_EPS = 2 * math.e - 1


def chernoff_tail(kind: str, mu: float, bound: float, eps: float) -> float:
    """Tail bound for a sum of independent variables in ``[0, bound]`` with mean ``mu``.

    ``lower``: P[X < mu(1-eps)] < exp(-eps^2 mu / 2B)
    ``upper_small``: P[X > mu(1+eps)] < exp(-eps^2 mu / 4B), eps <= 2e-1
    ``upper_large``: P[X > mu(1+eps)] < 2^(-(1+eps) mu / B)
    """
    if mu < 0 or not bound > 0 or not eps > 0:
        raise ValueError("need mu >= 0, bound > 0, eps > 0")
    if kind == "lower":
        return math.exp(-eps * eps * mu / (2 * bound))
    if kind == "upper_small":
        if eps > UPPER_SMALL_MAX_EPS:
            raise ValueError(f"upper_small requires eps <= 2e-1, got {eps}")
        return math.exp(-eps * eps * mu / (4 * bound))
    if kind == "upper_large":
        return 2.0 ** (-(1 + eps) * mu / bound)
    raise ValueError(f"unknown Chernoff bound kind {kind!r}")
