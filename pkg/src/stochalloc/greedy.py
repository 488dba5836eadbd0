"""Greedy budgeted allocation (Adwords)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import IIDInput, Instance, OptionVector, RequestType, ValidationError
from .lp_oracle import expected_optimum


@dataclass(frozen=True)
class AdwordsInstance:
    """``bids[i, j]`` is advertiser ``i``'s bid on query type ``j``; queries are i.i.d. ``probs``."""
    budgets: np.ndarray
    bids: np.ndarray
    m: int
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "budgets", np.asarray(self.budgets, dtype=float))
        object.__setattr__(self, "bids", np.asarray(self.bids, dtype=float))
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))

    @property
    def n(self) -> int:
        return self.budgets.shape[0]

    @property
    def n_queries(self) -> int:
        return self.bids.shape[1]

    def validate(self) -> List[str]:
        problems = []
        if self.bids.ndim != 2 or self.bids.shape[0] != self.n:
            problems.append(f"bid table shape {self.bids.shape} does not match {self.n} budgets")
            return problems
        if self.probs.shape != (self.n_queries,):
            problems.append(f"probability vector shape {self.probs.shape} != ({self.n_queries},)")
        if not np.all(np.isfinite(self.budgets)) or (self.budgets <= 0).any():
            problems.append("budgets must be positive and finite")
        if not np.all(np.isfinite(self.bids)) or (self.bids < 0).any():
            problems.append("bids must be finite and nonnegative")
        if (self.probs < 0).any() or self.probs.sum() > 1 + 1e-9:
            problems.append("query probabilities must be nonnegative with total mass <= 1")
        if self.m < 1:
            problems.append(f"m {self.m} < 1")
        return problems

    def to_instance(self) -> Tuple[Instance, IIDInput]:
        """Encode as a resource-allocation instance: one option per positive bid, one profit type."""
        types = []
        for j in range(self.n_queries):
            opts = [OptionVector({i: float(b)}, {0: float(b)})
                    for i, b in enumerate(self.bids[:, j]) if b > 0]
            types.append(RequestType(j, tuple(opts)))
        inst = Instance(self.n, 1, tuple(self.budgets.tolist()), self.m, tuple(types))
        return inst, IIDInput({j: float(p) for j, p in enumerate(self.probs)})

    @classmethod
    def from_instance(cls, instance: Instance, stochastic_input: IIDInput) -> "AdwordsInstance":
        """Inverse of :meth:`to_instance`; each option must spend its profit on one advertiser."""
        if instance.n_profits != 1:
            raise ValidationError("Adwords encoding needs exactly one profit type")
        bids = np.zeros((instance.n_resources, len(instance.request_types)))
        for j, rt in enumerate(instance.request_types):
            for opt in rt.options:
                spent = {i: a for i, a in opt.consumption.items() if a != 0}
                if len(spent) != 1:
                    raise ValidationError(f"type {rt.id}: each option must charge exactly one advertiser")
                (i, a), = spent.items()
                if opt.profit.get(0, 0.0) != a:
                    raise ValidationError(f"type {rt.id}: option profit must equal its charge")
                bids[i, j] = max(bids[i, j], a)
        probs = np.array([stochastic_input.probs.get(rt.id, 0.0) for rt in instance.request_types])
        return cls(np.asarray(instance.capacities), bids, instance.m, probs)


@dataclass
class GreedyReport:
    spend: np.ndarray
    revenue: float
    queries: np.ndarray       # query type per step, -1 for null
    assignments: np.ndarray   # advertiser per step, -1 when unassigned
    charges: np.ndarray       # effective bid paid per step
    remaining: Optional[np.ndarray] = None  # (m+1, n) remaining budgets when instrumented


def effective_bid(bid: float, remaining_budget: float) -> float:
    if bid < 0 or remaining_budget < 0:
        raise ValueError("bid and remaining budget must be nonnegative")
    return min(bid, remaining_budget)


def draw_queries(inst: AdwordsInstance, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(inst.probs)
    q = np.searchsorted(cdf, rng.random(inst.m), side="right")
    q[q >= inst.n_queries] = -1
    return q


def greedy_run(inst: AdwordsInstance, seed, queries: Optional[Sequence[int]] = None,
               instrument: bool = False) -> GreedyReport:
    """Assign each query to the advertiser with the largest effective bid."""
    problems = inst.validate()
    if problems:
        raise ValidationError("; ".join(problems))
    if queries is None:
        queries = draw_queries(inst, np.random.default_rng(seed))
    queries = np.asarray(queries, dtype=np.int64)
    remaining = inst.budgets.copy()
    assignments = np.full(len(queries), -1, dtype=np.int64)
    charges = np.zeros(len(queries))
    history = [remaining.copy()] if instrument else None
    bids_t = inst.bids.T.copy()
    for s, j in enumerate(queries.tolist()):
        if j >= 0:
            eff = np.minimum(bids_t[j], remaining)
            i = int(np.argmax(eff))
            if eff[i] > 0:
                assignments[s] = i
                charges[s] = eff[i]
                remaining[i] -= eff[i]
        if instrument:
            history.append(remaining.copy())
    spend = inst.budgets - remaining
    return GreedyReport(spend=spend, revenue=math.fsum(charges), queries=queries,
                        assignments=assignments, charges=charges,
                        remaining=None if history is None else np.array(history))


def greedy_benchmark(inst: AdwordsInstance) -> float:
    """Optimum of the budgeted-allocation LP on the expected instance."""
    instance, stochastic_input = inst.to_instance()
    return expected_optimum(instance, stochastic_input)
