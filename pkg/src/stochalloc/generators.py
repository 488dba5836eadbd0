"""Instance families used by the experiments."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import (
    ASISchedule,
    IIDInput,
    Instance,
    OptionVector,
    RequestType,
    ValidationError,
    select_option,
)
from .gap_solver import MixedPCInstance, gen_no_instance
from .greedy import AdwordsInstance
from .lp_oracle import per_step_optima, solve_time_varying


class ParameterError(ValueError):
    """Generator parameters outside the family's admissible range."""


# ============================================================
# Adwords
# ============================================================

@dataclass(frozen=True)
class BidLaw:
    """``uniform``: each bid is U[low, high] with probability ``density``, else 0.
    ``deterministic``: every bid equals ``high``."""
    kind: str = "uniform"
    low: float = 0.1
    high: float = 1.0
    density: float = 1.0


def gen_adwords_iid(n: int, m: int, budget, bid_law: BidLaw = BidLaw(), n_queries: int = 10,
                    seed: int = 0, query_law: str = "uniform") -> Tuple[AdwordsInstance, Instance, IIDInput]:
    """Random Adwords instance plus its resource-allocation encoding.

    ``budget`` is a scalar, a per-advertiser sequence, or a ``(low, high)``
    pair given as a dict ``{"low": .., "high": ..}`` for uniform random budgets.
    """
    if n < 1 or m < 1 or n_queries < 1:
        raise ParameterError("n, m and n_queries must be at least 1")
    rng = np.random.default_rng(seed)
    if isinstance(budget, Mapping):
        budgets = rng.uniform(budget["low"], budget["high"], size=n)
    else:
        budgets = np.broadcast_to(np.asarray(budget, dtype=float), (n,)).copy()
    if bid_law.kind == "deterministic":
        bids = np.full((n, n_queries), float(bid_law.high))
    elif bid_law.kind == "uniform":
        bids = rng.uniform(bid_law.low, bid_law.high, size=(n, n_queries))
        bids[rng.random((n, n_queries)) >= bid_law.density] = 0.0
    else:
        raise ParameterError(f"unknown bid law {bid_law.kind!r}")
    if query_law == "uniform":
        probs = np.full(n_queries, 1.0 / n_queries)
    elif query_law == "dirichlet":
        probs = rng.dirichlet(np.ones(n_queries))
    else:
        raise ParameterError(f"unknown query law {query_law!r}")
    adw = AdwordsInstance(budgets, bids, m, probs)
    problems = adw.validate()
    if problems:
        raise ParameterError("; ".join(problems))
    inst, inp = adw.to_instance()
    return adw, inst, inp


# ============================================================
# Lower-bound family
# ============================================================

@dataclass(frozen=True)
class LowerBoundParams:
    z: int
    B: float
    alpha: float

    @property
    def n(self) -> int:
        return 2 ** self.z

    @property
    def m(self) -> int:
        bz = self.B * self.z
        return int(math.floor(bz * (2 + 1 / self.alpha) + math.sqrt(bz) + 0.5))

    def probabilities(self) -> Dict[str, float]:
        """Per-category probabilities of the four non-zero request kinds."""
        zm = self.z * self.m
        return {
            "v_profit_4alpha": self.B / (self.alpha * zm),
            "w_profit_3": self.B / zm,
            "w_profit_2": math.sqrt(self.B / zm),
            "w_profit_1": self.B / zm,
        }

    def check(self) -> None:
        if int(self.z) != self.z or self.z < 1:
            raise ParameterError("z must be an integer >= 1")
        if not self.B > 0:
            raise ParameterError("B must be positive")
        if not 0 < self.alpha < 1:
            raise ParameterError("alpha must lie in (0, 1)")
        probs = self.probabilities()
        for name, p in probs.items():
            if p > 1:
                raise ParameterError(f"probability of {name} is {p:.6g} > 1")
        total = self.z * sum(probs.values())
        if total > 1:
            raise ParameterError(f"total probability of non-zero requests is {total:.6g} > 1")


def binary_matrices(z: int) -> Tuple[np.ndarray, np.ndarray]:
    """Rows of all z-bit strings in ascending and in descending order."""
    rows = np.array([[(r >> (z - 1 - b)) & 1 for b in range(z)] for r in range(2 ** z)], dtype=float)
    return rows, rows[::-1].copy()


def lower_bound_vectors(params: LowerBoundParams) -> Tuple[np.ndarray, np.ndarray]:
    """``v[i]`` and ``w[i]`` for category ``i``; each has length ``2**z``."""
    asc, desc = binary_matrices(params.z)
    return params.alpha * asc.T, desc.T.copy()


def check_lower_bound_structure(params: LowerBoundParams) -> List[str]:
    """Complement property and unique all-ones row for every column choice."""
    v, w = lower_bound_vectors(params)
    problems = []
    for i in range(params.z):
        if not np.array_equal(v[i] / params.alpha + w[i], np.ones(params.n)):
            problems.append(f"v_{i}/alpha and w_{i} are not complements")
    for choice in itertools.product((0, 1), repeat=params.z):
        cols = np.array([v[i] / params.alpha if c else w[i] for i, c in enumerate(choice)])
        ones = int(np.count_nonzero(cols.min(axis=0) == 1))
        if ones != 1:
            problems.append(f"column choice {choice} has {ones} all-ones rows")
    return problems


def gen_lower_bound(params: LowerBoundParams) -> Tuple[Instance, IIDInput]:
    params.check()
    v, w = lower_bound_vectors(params)
    probs = params.probabilities()
    n = params.n
    types, dist = [], {}

    def add(vec, profit, p):
        tid = len(types)
        opt = OptionVector({r: float(a) for r, a in enumerate(vec) if a != 0}, {0: float(profit)})
        types.append(RequestType(tid, (opt,)))
        dist[tid] = p

    for i in range(params.z):
        add(v[i], 4 * params.alpha, probs["v_profit_4alpha"])
        add(w[i], 3.0, probs["w_profit_3"])
        add(w[i], 2.0, probs["w_profit_2"])
        add(w[i], 1.0, probs["w_profit_1"])
    problems = check_lower_bound_structure(params)
    if problems:
        raise ParameterError("; ".join(problems))
    inst = Instance(n, 1, (float(params.B),) * n, params.m, tuple(types))
    return inst, IIDInput(dist)


# ============================================================
# ASI schedules
# ============================================================

def gen_asi_schedule(base_distributions: Sequence[Mapping[int, float]], pattern: str, m: int,
                     seed: int = 0, n_chunks: Optional[int] = None, shuffle: bool = False,
                     policy: Optional[Callable] = None) -> ASISchedule:
    """Schedule built from base distributions.

    ``chunked``: ``n_chunks`` contiguous chunks (default one per base), chunk
    ``c`` using base ``c mod len(base)`` or a seeded random base when
    ``shuffle``.  ``alternating``: step ``t`` uses base ``t mod len(base)``.
    ``adaptive``: ``policy(step, history, bases)`` picks a base index.
    """
    bases = [dict(b) for b in base_distributions]
    if not bases:
        raise ParameterError("need at least one base distribution")
    if m < 1:
        raise ParameterError("m must be at least 1")
    if pattern == "chunked":
        chunks = len(bases) if n_chunks is None else n_chunks
        if chunks < 1:
            raise ParameterError("n_chunks must be at least 1")
        rng = np.random.default_rng(seed)
        order = rng.integers(len(bases), size=chunks) if shuffle else np.arange(chunks) % len(bases)
        bounds = [(c * m) // chunks for c in range(chunks + 1)]
        per_step = []
        for c in range(chunks):
            per_step.extend([bases[int(order[c])]] * (bounds[c + 1] - bounds[c]))
        return ASISchedule(per_step=tuple(per_step))
    if pattern == "alternating":
        return ASISchedule(per_step=tuple(bases[t % len(bases)] for t in range(m)))
    if pattern == "adaptive":
        if policy is None:
            raise ParameterError("adaptive pattern needs a policy")
        return ASISchedule(policy=_BasePolicy(bases, policy))
    raise ParameterError(f"unknown schedule pattern {pattern!r}")


@dataclass(frozen=True)
class _BasePolicy:
    bases: List[dict]
    chooser: Callable

    def __call__(self, step: int, history: list) -> dict:
        return self.bases[int(self.chooser(step, history, self.bases))]


def schedule_benchmarks(instance: Instance, schedule: ASISchedule) -> List[float]:
    """W_E(t) for every step."""
    return per_step_optima(instance, schedule)


def schedule_profiles(instance: Instance, schedule: ASISchedule):
    """(benchmark, c_i(t), OPT_i(t)) from the time-varying LP."""
    sol = solve_time_varying(instance, schedule)
    return sol.lam, sol.consumption_profile, sol.profit_profile


# ============================================================
# Routing
# ============================================================

@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    capacity: float


@dataclass(frozen=True)
class RoutingRequest:
    id: int
    source: int
    sink: int
    rho: float
    value: float


@dataclass(frozen=True)
class RoutingInstance:
    """Edges are resources (in list order); every request type has one profit type."""
    n_nodes: int
    edges: Tuple[Edge, ...]
    request_types: Tuple[RoutingRequest, ...]
    m: int
    directed: bool = True

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "request_types", tuple(self.request_types))
        for e in self.edges:
            if not e.capacity > 0:
                raise ValidationError(f"edge ({e.u}, {e.v}) capacity {e.capacity:g} not positive")
            if not (0 <= e.u < self.n_nodes and 0 <= e.v < self.n_nodes):
                raise ValidationError(f"edge ({e.u}, {e.v}) references a missing node")
        for r in self.request_types:
            if not r.rho > 0:
                raise ValidationError(f"request {r.id}: rho must be positive")
            if r.value < 0:
                raise ValidationError(f"request {r.id}: value must be nonnegative")

    @property
    def n_resources(self) -> int:
        return len(self.edges)

    @property
    def n_profits(self) -> int:
        return 1

    @property
    def capacities(self) -> Tuple[float, ...]:
        return tuple(e.capacity for e in self.edges)

    @cached_property
    def adjacency(self) -> List[List[Tuple[int, int]]]:
        """``adjacency[u]`` lists ``(edge index, neighbour)`` in edge order."""
        adj = [[] for _ in range(self.n_nodes)]
        for idx, e in enumerate(self.edges):
            adj[e.u].append((idx, e.v))
            if not self.directed:
                adj[e.v].append((idx, e.u))
        return adj

    def make_selector(self) -> "RoutingSelector":
        return RoutingSelector(self)

    def simple_paths(self, request: RoutingRequest, limit: int = 100_000) -> List[Tuple[int, ...]]:
        """All simple source-sink paths as edge-index tuples, fewest edges first then
        lexicographic (the shortest-path tie order); raises past ``limit``."""
        out = []

        def walk(node, visited, path):
            if node == request.sink:
                out.append(tuple(path))
                if len(out) > limit:
                    raise ParameterError(f"more than {limit} simple paths")
                return
            for idx, nxt in self.adjacency[node]:
                if nxt not in visited:
                    visited.add(nxt)
                    path.append(idx)
                    walk(nxt, visited, path)
                    path.pop()
                    visited.discard(nxt)

        if request.source == request.sink:
            return [()]
        walk(request.source, {request.source}, [])
        return sorted(out, key=lambda p: (len(p), p))

    def to_instance(self, max_paths: int = 10_000) -> Instance:
        """Encoding with every simple path listed as an option."""
        types = []
        for r in self.request_types:
            opts = tuple(OptionVector({e: r.rho for e in path}, {0: r.value})
                         for path in self.simple_paths(r, limit=max_paths))
            types.append(RequestType(r.id, opts))
        return Instance(self.n_resources, 1, self.capacities, self.m, tuple(types))


def shortest_path(graph: RoutingInstance, source: int, sink: int, prices: np.ndarray) -> Optional[Tuple[float, Tuple[int, ...]]]:
    """Cheapest path under nonnegative edge prices.

    Ties go to fewer edges, then to the lexicographically smallest edge-index
    sequence.  Returns ``None`` when the sink is unreachable.
    """
    if source == sink:
        return 0.0, ()
    best: Dict[int, Tuple[float, int, Tuple[int, ...]]] = {source: (0.0, 0, ())}
    heap = [(0.0, 0, (), source)]
    done = set()
    while heap:
        cost, hops, path, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        if node == sink:
            return cost, path
        for idx, nxt in graph.adjacency[node]:
            if nxt in done:
                continue
            key = (cost + float(prices[idx]), hops + 1, path + (idx,))
            if nxt not in best or key < best[nxt]:
                best[nxt] = key
                heapq.heappush(heap, key + (nxt,))
    return None


def routing_best_option(graph: RoutingInstance, request: RoutingRequest, resource_prices,
                        profit_weight: float = 1.0) -> Optional[Tuple[int, ...]]:
    """Surrogate-minimizing path (edge indices) or ``None`` for bottom."""
    prices = np.asarray(resource_prices, dtype=float)
    if prices.shape != (graph.n_resources,):
        raise ValueError(f"need {graph.n_resources} edge prices, got shape {prices.shape}")
    if (prices < 0).any():
        raise ValueError("edge prices must be nonnegative")
    found = shortest_path(graph, request.source, request.sink, prices)
    if found is None:
        return None
    cost, path = found
    score = request.rho * cost - request.value * profit_weight
    return path if score <= 0 else None


class RoutingSelector:
    """Option choice for routing requests through the shortest-path oracle."""

    def __init__(self, graph: RoutingInstance):
        self.graph = graph

    def choose(self, j: int, state):
        px, py = state.weights()
        req = self.graph.request_types[j]
        path = routing_best_option(self.graph, req, px, float(py[0]))
        if path is None:
            return -1, None, None
        a = np.zeros(self.graph.n_resources)
        a[list(path)] = req.rho
        return 0, a, np.array([req.value])


def parse_edge_list(text: str) -> List[Edge]:
    """Parse ``u v capacity`` lines; blank lines and ``#`` comments are skipped."""
    edges = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValidationError(f"line {lineno}: expected 'u v capacity'")
        try:
            edges.append(Edge(int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    return edges


def gen_routing(edges: Sequence[Edge], n_requests: int, m: int, seed: int = 0, rho: Tuple[float, float] = (0.5, 1.0),
                value: Tuple[float, float] = (0.5, 2.0), directed: bool = True) -> Tuple[RoutingInstance, IIDInput]:
    """Random source-sink request types over a fixed graph, uniform arrival law."""
    rng = np.random.default_rng(seed)
    n_nodes = 1 + max(max(e.u, e.v) for e in edges)
    reqs = []
    for rid in range(n_requests):
        s, t = rng.choice(n_nodes, size=2, replace=False)
        reqs.append(RoutingRequest(rid, int(s), int(t), float(rng.uniform(*rho)), float(rng.uniform(*value))))
    graph = RoutingInstance(n_nodes, tuple(edges), tuple(reqs), m, directed)
    return graph, IIDInput({r.id: 1.0 / n_requests for r in reqs})


# ============================================================
# Planted mixed packing-covering instances
# ============================================================

def gen_mixed_pc_planted(n_pack: int, n_cover: int, n_types: int, n_options: int, m: int,
                         slack: float = 2.0, seed: int = 0, density: float = 0.6,
                         serve_prob: float = 1.0, no_slack: Optional[float] = None,
                         margin: float = 0.05) -> Tuple[MixedPCInstance, Optional[MixedPCInstance]]:
    """Plant an integral assignment and derive rows from its sums.

    ``m`` requests are spread over ``n_types`` types as evenly as possible.
    Every request independently picks a random option with probability
    ``serve_prob`` (else bottom).  Capacities are the planted packing sums
    times ``slack`` and demands the planted covering sums divided by it.  With
    ``no_slack`` set, the NO counterpart is built by :func:`gen_no_instance`.
    """
    if min(n_pack, n_cover, n_types, n_options, m) < 1:
        raise ParameterError("shape parameters must be at least 1")
    if slack < 1:
        raise ParameterError("slack must be at least 1")
    rng = np.random.default_rng(seed)
    types = []
    for j in range(n_types):
        opts = []
        for _ in range(n_options):
            a = rng.uniform(0.1, 1.0, size=n_pack) * (rng.random(n_pack) < density)
            w = rng.uniform(0.1, 1.0, size=n_cover) * (rng.random(n_cover) < density)
            opts.append(OptionVector({i: float(x) for i, x in enumerate(a) if x > 0},
                                     {i: float(x) for i, x in enumerate(w) if x > 0}))
        types.append(RequestType(j, tuple(opts)))
    mult = np.full(n_types, m // n_types)
    mult[: m % n_types] += 1
    pack = np.zeros(n_pack)
    cover = np.zeros(n_cover)
    for j, rt in enumerate(types):
        for _ in range(int(mult[j])):
            if rng.random() < serve_prob:
                opt = rt.options[int(rng.integers(n_options))]
                for i, x in opt.consumption.items():
                    pack[i] += x
                for i, x in opt.profit.items():
                    cover[i] += x
    max_a = max((x for rt in types for o in rt.options for x in o.consumption.values()), default=1.0)
    min_w = min((x for rt in types for o in rt.options for x in o.profit.values()), default=1.0)
    capacities = np.where(pack > 0, pack * slack, max_a * slack)
    demands = np.where(cover > 0, cover / slack, 1e-9 * min_w)
    yes = MixedPCInstance(n_pack, n_cover, tuple(capacities), tuple(demands), m, tuple(types),
                          tuple(float(v) for v in mult))
    no = None if no_slack is None else gen_no_instance(yes, no_slack, margin=margin)
    return yes, no
