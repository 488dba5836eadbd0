"""Monte-Carlo experiment driver.

Trial ``t`` of an experiment uses seed ``base_seed + t``; results are keyed
by trial index so the worker count never changes the output.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    ASISchedule,
    IIDInput,
    Instance,
    RunReport,
    StochasticInput,
    ValidationError,
    build_expected_instance,
    compute_gamma_online,
)
from .gap_solver import MixedPCInstance, gap_check
from .greedy import AdwordsInstance, greedy_benchmark, greedy_run
from .lp_oracle import (
    per_step_optima,
    random_instance_optimum,
    solve_maximin_exact,
    solve_time_varying,
)
from . import online
from .io import to_jsonable

SCHEMA_VERSION = 1

ONLINE_ALGORITHMS = ("ho", "known-we", "staged", "asi1", "asi2", "asi3")
ALGORITHMS = ONLINE_ALGORITHMS + ("greedy", "gap")

ONLINE_COLUMNS = ["trial", "seed", "objective", "min_profit_ratio", "violated", "served_count"]
GREEDY_COLUMNS = ["trial", "revenue", "W_E", "ratio"]
GAP_COLUMNS = ["trial", "seed", "answer", "T"]


@dataclass
class ExperimentConfig:
    """What to run.

    ``params`` holds algorithm settings: ``eps`` (all online algorithms and
    gap), ``gamma`` (optional upper bound, computed when absent), ``w_e``,
    ``w_e_per_step``, ``c_profile``/``opt_profile``, ``alpha``, ``w_max``,
    ``hard_cap``, ``delta``, ``samples``, ``constant``.
    """
    algorithm: str
    instance: Any
    stochastic_input: Optional[StochasticInput] = None
    params: Dict[str, Any] = field(default_factory=dict)
    trials: int = 1
    base_seed: int = 0
    fmt: str = "csv"
    jobs: int = 1

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {self.algorithm!r}")
        if self.trials < 1:
            raise ValidationError("trials must be at least 1")
        if self.jobs < 1:
            raise ValidationError("jobs must be at least 1")
        if self.fmt not in ("csv", "json"):
            raise ValidationError(f"unknown output format {self.fmt!r}")
        if self.algorithm in ONLINE_ALGORITHMS and "eps" not in self.params:
            raise ValidationError(f"{self.algorithm} needs params['eps']")


@dataclass
class SummaryStats:
    n: int
    mean: float
    se: float
    min: float
    max: float
    violation_frequency: Optional[float] = None
    yes_frequency: Optional[float] = None
    no_frequency: Optional[float] = None

    @classmethod
    def from_rows(cls, rows: Sequence[dict], ratio_key: str = "min_profit_ratio") -> "SummaryStats":
        n = len(rows)
        stats = cls(n=n, mean=math.nan, se=math.nan, min=math.nan, max=math.nan)
        if n and ratio_key in rows[0]:
            vals = [float(r[ratio_key]) for r in rows]
            stats.mean = math.fsum(vals) / n
            stats.se = statistics.stdev(vals) / math.sqrt(n) if n > 1 else 0.0
            stats.min, stats.max = min(vals), max(vals)
        if n and "violated" in rows[0]:
            stats.violation_frequency = sum(bool(r["violated"]) for r in rows) / n
        if n and "answer" in rows[0]:
            stats.yes_frequency = sum(r["answer"] == "YES" for r in rows) / n
            stats.no_frequency = 1.0 - stats.yes_frequency
        return stats

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass
class Prepared:
    """Experiment inputs with benchmarks resolved once."""
    config: ExperimentConfig
    benchmark: Any = None
    targets: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class ExperimentResult:
    rows: List[dict]
    stats: SummaryStats
    columns: List[str]
    benchmark: Any = None

    def render(self, fmt: str = "csv") -> str:
        return render_rows(self.rows, self.columns, fmt, self.stats)


def _iid(config: ExperimentConfig) -> IIDInput:
    if not isinstance(config.stochastic_input, IIDInput):
        raise ValidationError(f"{config.algorithm} needs an i.i.d. input")
    return config.stochastic_input


def _schedule(config: ExperimentConfig) -> ASISchedule:
    inp = config.stochastic_input
    if not isinstance(inp, ASISchedule):
        raise ValidationError(f"{config.algorithm} needs an ASI schedule (or per-step benchmarks)")
    return inp


def prepare(config: ExperimentConfig) -> Prepared:
    config.validate()
    p = config.params
    inst = config.instance
    prep = Prepared(config)
    algo = config.algorithm
    if algo == "greedy":
        prep.benchmark = p.get("w_e", None) or greedy_benchmark(inst)
        return prep
    if algo == "gap":
        return prep
    if algo in ("ho", "known-we", "staged"):
        if algo == "ho" or "w_e" not in p:
            sol = solve_maximin_exact(build_expected_instance(inst, _iid(config)))
            prep.extra["x_star"] = sol
            w_e = sol.lam
        if "w_e" in p:
            w_e = float(p["w_e"])
        prep.benchmark = w_e
    elif algo in ("asi1", "asi2"):
        w_t = p.get("w_e_per_step")
        if w_t is None:
            w_t = per_step_optima(inst, _schedule(config))
        prep.extra["w_e_per_step"] = [float(w) for w in w_t]
        prep.benchmark = min(w_t) if algo == "asi1" else statistics.mean(prep.extra["w_e_per_step"])
    elif algo == "asi3":
        if "c_profile" in p and "opt_profile" in p:
            c_prof = np.asarray(p["c_profile"], dtype=float)
            o_prof = np.asarray(p["opt_profile"], dtype=float)
        else:
            sol = solve_time_varying(inst, _schedule(config))
            c_prof, o_prof = sol.consumption_profile, sol.profit_profile
        prep.extra["c_profile"], prep.extra["opt_profile"] = c_prof, o_prof
        prep.targets = o_prof.sum(axis=0)
        prep.benchmark = float(prep.targets.min())
    if prep.targets is None:
        prep.targets = np.full(inst.n_profits, float(prep.benchmark))
    if "gamma" in p:
        prep.gamma = float(p["gamma"])
    elif prep.benchmark and prep.benchmark > 0:
        prep.gamma = compute_gamma_online(inst, prep.benchmark).gamma
    return prep


def _stream(config: ExperimentConfig):
    if config.stochastic_input is None:
        raise ValidationError("experiment needs a stochastic input")
    return config.stochastic_input


def run_trial(prep: Prepared, trial: int) -> dict:
    """One trial as a row; errors carry the trial index."""
    try:
        return _run_trial(prep, trial)
    except ValueError as exc:
        raise ValidationError(f"trial {trial}: {exc}") from exc
    except Exception as exc:
        raise RuntimeError(f"trial {trial}: {exc}") from exc


def _run_trial(prep: Prepared, trial: int) -> dict:
    config = prep.config
    seed = config.base_seed + trial
    p = config.params
    inst = config.instance
    algo = config.algorithm
    if algo == "greedy":
        rep = greedy_run(inst, seed)
        w_e = prep.benchmark
        return {"trial": trial, "revenue": rep.revenue, "W_E": w_e,
                "ratio": rep.revenue / w_e if w_e > 0 else math.nan}
    if algo == "gap":
        verdict = gap_check(inst, p["eps"], p["delta"], seed, T_override=p.get("samples"),
                            constant=p.get("constant", 4.0))
        return {"trial": trial, "seed": seed, "answer": verdict.answer, "T": verdict.T}
    rep = run_online(prep, seed)
    return {
        "trial": trial, "seed": seed, "objective": rep.objective,
        "min_profit_ratio": min_ratio(rep.cum_profit, prep.targets),
        "violated": rep.violated, "served_count": rep.served_count,
    }


def run_online(prep: Prepared, seed) -> RunReport:
    """One online run with the prepared benchmarks."""
    config = prep.config
    p = config.params
    inst = config.instance
    algo = config.algorithm
    eps = p["eps"]
    hard_cap = bool(p.get("hard_cap", False))
    stream = _stream(config)
    if algo == "ho":
        rep = online.ho_conservative_run(inst, _iid(config), prep.extra["x_star"], eps, seed)
    elif algo == "known-we":
        rep = online.known_we_run(inst, stream, prep.benchmark, prep.gamma, eps, seed, hard_cap)
    elif algo == "staged":
        rep = online.staged_run(inst, stream, prep.gamma, eps, seed, alpha=p.get("alpha", 1.0),
                                w_max=p.get("w_max"), hard_cap=hard_cap)
    elif algo == "asi1":
        rep = online.asi1_run(inst, stream, prep.extra["w_e_per_step"], prep.gamma, eps, seed, hard_cap)
    elif algo == "asi2":
        rep = online.asi2_run(inst, stream, prep.extra["w_e_per_step"], prep.gamma, eps, seed, hard_cap)
    else:
        rep = online.asi3_run(inst, stream, prep.extra["c_profile"], prep.extra["opt_profile"],
                              prep.gamma, eps, seed, hard_cap)
    return rep


def min_ratio(profit: np.ndarray, targets: np.ndarray) -> float:
    """min over profit types of profit/target; a zero target is met by any profit."""
    ratios = [p / t if t > 0 else math.inf for p, t in zip(profit.tolist(), targets.tolist())]
    best = min(ratios)
    return 1.0 if math.isinf(best) else best


def columns_for(algorithm: str) -> List[str]:
    if algorithm == "greedy":
        return GREEDY_COLUMNS
    if algorithm == "gap":
        return GAP_COLUMNS
    return ONLINE_COLUMNS


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    prep = prepare(config)
    work = partial(run_trial, prep)
    if config.jobs == 1 or config.trials == 1:
        rows = [work(t) for t in range(config.trials)]
    else:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(work, range(config.trials)))
    ratio_key = "ratio" if config.algorithm == "greedy" else "min_profit_ratio"
    return ExperimentResult(rows=rows, stats=SummaryStats.from_rows(rows, ratio_key),
                            columns=columns_for(config.algorithm), benchmark=prep.benchmark)


def compare_benchmarks(instance: Instance, stochastic_input: IIDInput, samples: int = 200,
                       seed: int = 0) -> Tuple[float, float, float]:
    """(W_E, mean of W_R over sampled realizations, standard error of that mean)."""
    w_e = solve_maximin_exact(build_expected_instance(instance, stochastic_input)).lam
    values = []
    for s in range(samples):
        types = online.sample_requests(instance, stochastic_input, seed + s)
        values.append(random_instance_optimum(instance, types.tolist()))
    mean = math.fsum(values) / samples
    se = statistics.stdev(values) / math.sqrt(samples) if samples > 1 else 0.0
    return w_e, mean, se


# ============================================================
# Serialization
# ============================================================

def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_rows(rows: Sequence[dict], columns: Sequence[str], fmt: str = "csv",
                stats: Optional[SummaryStats] = None) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(f"#schema={SCHEMA_VERSION}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_cell(r[c]) for c in columns])
        return buf.getvalue()
    if fmt == "json":
        obj = {"schema": SCHEMA_VERSION, "columns": list(columns), "rows": to_jsonable(list(rows))}
        if stats is not None:
            obj["summary"] = to_jsonable(stats.to_dict())
        return json.dumps(obj, indent=1) + "\n"
    raise ValidationError(f"unknown output format {fmt!r}")


def parse_csv(text: str) -> List[dict]:
    """Read rows written by :func:`render_rows` back with their original types."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#schema="):
        raise ValidationError("missing #schema header")
    reader = csv.DictReader(lines[1:])
    out = []
    for row in reader:
        parsed = {}
        for k, v in row.items():
            if v in ("true", "false"):
                parsed[k] = v == "true"
            elif k in ("trial", "seed", "served_count", "T"):
                parsed[k] = int(v)
            elif k == "answer":
                parsed[k] = v
            else:
                parsed[k] = float(v)
        out.append(parsed)
    return out
