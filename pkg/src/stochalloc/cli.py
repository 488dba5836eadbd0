"""Command-line interface.

Exit status is 0 on success, 1 for invalid input (bad flags, files or
parameters) and 2 for runtime failures.  ``bench`` also exits 2 when the
named experiment misses its criterion.
"""

from __future__ import annotations

import argparse
import inspect
import json
import sys
from typing import List, Optional

import numpy as np

from . import __version__, io
from .bench import REGISTRY, run_bench
from .core import ASISchedule, IIDInput, ValidationError, build_expected_instance
from .gap_solver import gap_check, gen_no_instance
from .generators import (
    BidLaw,
    LowerBoundParams,
    gen_adwords_iid,
    gen_asi_schedule,
    gen_lower_bound,
    gen_mixed_pc_planted,
    gen_routing,
    parse_edge_list,
)
from .greedy import AdwordsInstance
from .harness import ONLINE_ALGORITHMS, ExperimentConfig, prepare, run_experiment, run_online
from .lp_oracle import solve_maximin_exact, solve_maximin_sampling


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed (trial t uses seed + t)")
    common.add_argument("--trials", type=int, default=None, help="number of seeded trials")
    common.add_argument("--format", choices=("csv", "json"), default=None, help="output format")
    common.add_argument("--out", default=None, help="write output to this file instead of stdout")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for trials")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="stochalloc", description="Online stochastic resource allocation toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run-online", parents=[common], help="run an online allocation algorithm")
    p.add_argument("--algo", required=True, choices=ONLINE_ALGORITHMS)
    p.add_argument("--instance", required=True)
    p.add_argument("--eps", type=float, required=True)
    bench_src = p.add_mutually_exclusive_group()
    bench_src.add_argument("--we", type=float, help="benchmark W_E (solved from the instance when absent)")
    bench_src.add_argument("--we-per-step", help="JSON file with a list of per-step benchmarks")
    bench_src.add_argument("--profiles", help="JSON file with c_profile and opt_profile arrays")
    p.add_argument("--gamma", type=float, help="gamma upper bound (computed when absent)")
    p.add_argument("--alpha", type=float, default=1.0, help="offline oracle approximation factor (staged)")
    p.add_argument("--w-max", type=float, help="largest profit entry (staged; estimated when absent)")
    p.add_argument("--hard-cap", action="store_true", help="skip options that would exceed a capacity")

    p = sub.add_parser("run-greedy", parents=[common], help="run greedy Adwords")
    p.add_argument("--instance", required=True)

    p = sub.add_parser("gap-check", parents=[common], help="decide a mixed packing-covering gap instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--samples", type=int, help="sample count T (computed when absent)")
    p.add_argument("--constant", type=float, default=4.0, help="constant in the sample-count formula")

    p = sub.add_parser("solve-offline", parents=[common], help="solve the expected-instance LP")
    p.add_argument("--instance", required=True)
    p.add_argument("--method", choices=("exact", "sampling"), default="exact")
    p.add_argument("--eps", type=float, default=0.1, help="accuracy for the sampling method")
    p.add_argument("--delta", type=float, default=0.1, help="failure probability for the sampling method")

    p = sub.add_parser("gen-instance", parents=[common], help="write a generated instance as JSON")
    p.add_argument("--family", required=True, choices=("adwords", "lower-bound", "routing", "mixed-pc", "asi"))
    p.add_argument("--n", type=int, default=5, help="advertisers (adwords, asi)")
    p.add_argument("--m", type=int, default=None, help="number of requests")
    p.add_argument("--budget", type=float, default=None, help="budget per advertiser (default: m/10)")
    p.add_argument("--bid-low", type=float, default=0.1)
    p.add_argument("--bid-high", type=float, default=1.0)
    p.add_argument("--density", type=float, default=1.0, help="probability a bid is nonzero")
    p.add_argument("--queries", type=int, default=10, help="query types (adwords, asi)")
    p.add_argument("--query-law", choices=("uniform", "dirichlet"), default="uniform")
    p.add_argument("--z", type=int, default=2, help="lower-bound z")
    p.add_argument("--B", type=float, default=4.0, help="lower-bound B")
    p.add_argument("--alpha", type=float, default=0.5, help="lower-bound alpha")
    p.add_argument("--edges", help="edge-list file, one 'u v capacity' per line (routing)")
    p.add_argument("--requests", type=int, default=4, help="request types (routing)")
    p.add_argument("--undirected", action="store_true", help="treat routing edges as undirected")
    p.add_argument("--max-paths", type=int, default=10_000, help="path enumeration limit (routing)")
    p.add_argument("--n-pack", type=int, default=2)
    p.add_argument("--n-cover", type=int, default=2)
    p.add_argument("--types", type=int, default=8, help="request types (mixed-pc)")
    p.add_argument("--options", type=int, default=3, help="options per type (mixed-pc)")
    p.add_argument("--slack", type=float, default=2.0, help="planted slack factor (mixed-pc)")
    p.add_argument("--no-slack", type=float, default=None, help="write the certified NO counterpart at this slack")
    p.add_argument("--bases", type=int, default=2, help="base distributions (asi)")
    p.add_argument("--pattern", choices=("chunked", "alternating"), default="chunked")
    p.add_argument("--chunks", type=int, default=None, help="chunk count (asi, chunked)")

    p = sub.add_parser("bench", parents=[common], help="run a named acceptance experiment")
    p.add_argument("name", nargs="?", choices=sorted(REGISTRY))
    p.add_argument("--list", action="store_true", help="list experiment names")
    return parser


# ============================================================
# Subcommands
# ============================================================

def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _json(obj) -> str:
    return json.dumps(io.to_jsonable(obj), indent=1) + "\n"


def _rows(config: ExperimentConfig, args) -> str:
    return run_experiment(config).render(args.format or "csv")


def cmd_run_online(args) -> int:
    inst, stochastic_input = io.load_instance(args.instance)
    if stochastic_input is None:
        raise ValidationError("instance file needs an 'input' entry")
    params = {"eps": args.eps, "hard_cap": args.hard_cap, "alpha": args.alpha}
    if args.we is not None:
        params["w_e"] = args.we
    if args.we_per_step is not None:
        params["w_e_per_step"] = [float(w) for w in io.read_json(args.we_per_step)]
    if args.profiles is not None:
        prof = io.read_json(args.profiles)
        if not isinstance(prof, dict) or set(prof) != {"c_profile", "opt_profile"}:
            raise ValidationError("profiles file needs exactly 'c_profile' and 'opt_profile'")
        params.update(prof)
    if args.gamma is not None:
        params["gamma"] = args.gamma
    if args.w_max is not None:
        params["w_max"] = args.w_max
    config = ExperimentConfig(args.algo, inst, stochastic_input, params, trials=args.trials or 1,
                              base_seed=args.seed, fmt=args.format or "csv", jobs=args.jobs)
    if args.trials is not None:
        _emit(_rows(config, args), args.out)
        return 0
    prep = prepare(config)
    try:
        rep = run_online(prep, args.seed)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    _emit(io.dump_json(io.to_jsonable(io.report_to_dict(rep, prep.benchmark))), args.out)
    return 0


def cmd_run_greedy(args) -> int:
    inst, stochastic_input = io.load_instance(args.instance, allow_large_gamma=True)
    if not isinstance(stochastic_input, IIDInput):
        raise ValidationError("greedy needs an 'iid' input")
    adw = AdwordsInstance.from_instance(inst, stochastic_input)
    config = ExperimentConfig("greedy", adw, None, {}, trials=args.trials or 1, base_seed=args.seed,
                              fmt=args.format or "csv", jobs=args.jobs)
    _emit(_rows(config, args), args.out)
    return 0


def cmd_gap_check(args) -> int:
    inst = io.load_mixed(args.instance)
    if args.trials is not None:
        params = {"eps": args.eps, "delta": args.delta, "samples": args.samples, "constant": args.constant}
        config = ExperimentConfig("gap", inst, None, params, trials=args.trials, base_seed=args.seed,
                                  fmt=args.format or "csv", jobs=args.jobs)
        _emit(_rows(config, args), args.out)
        return 0
    try:
        verdict = gap_check(inst, args.eps, args.delta, args.seed, T_override=args.samples,
                            constant=args.constant)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    _emit(json.dumps(io.to_jsonable(verdict.to_dict())) + "\n", args.out)
    return 0


def cmd_solve_offline(args) -> int:
    inst, stochastic_input = io.load_instance(args.instance)
    if not isinstance(stochastic_input, IIDInput):
        raise ValidationError("solve-offline needs an 'iid' input")
    if args.method == "exact":
        sol = solve_maximin_exact(build_expected_instance(inst, stochastic_input))
        out = {"method": "exact", **sol.to_dict()}
    else:
        est = solve_maximin_sampling(inst, stochastic_input, args.eps, args.delta, args.seed)
        out = {"method": "sampling", "lower": est.lower, "upper": est.upper, "probes": est.probes}
    _emit(_json(out), args.out)
    return 0


def _generate(args):
    fam = args.family
    if fam in ("adwords", "asi"):
        m = args.m or 1000
        budget = args.budget if args.budget is not None else m / 10
        law = BidLaw("uniform", args.bid_low, args.bid_high, args.density)
        _, inst, inp = gen_adwords_iid(args.n, m, budget, law, args.queries, args.seed, args.query_law)
        if fam == "asi":
            rng = np.random.default_rng(args.seed)
            bases = [{rt.id: float(p) for rt, p in zip(inst.request_types, rng.dirichlet(np.ones(args.queries)))}
                     for _ in range(args.bases)]
            inp = gen_asi_schedule(bases, args.pattern, m, args.seed, n_chunks=args.chunks)
        return io.instance_to_dict(inst, inp)
    if fam == "lower-bound":
        inst, inp = gen_lower_bound(LowerBoundParams(args.z, args.B, args.alpha))
        return io.instance_to_dict(inst, inp)
    if fam == "routing":
        if args.edges is None:
            raise ValidationError("routing needs --edges FILE")
        with open(args.edges) as fh:
            edges = parse_edge_list(fh.read())
        if not edges:
            raise ValidationError("edge list is empty")
        graph, inp = gen_routing(edges, args.requests, args.m or 100, args.seed, directed=not args.undirected)
        return io.instance_to_dict(graph.to_instance(args.max_paths), inp)
    yes, no = gen_mixed_pc_planted(args.n_pack, args.n_cover, args.types, args.options, args.m or 100,
                                   slack=args.slack, seed=args.seed, no_slack=args.no_slack)
    return io.mixed_to_dict(no if no is not None else yes)


def cmd_gen_instance(args) -> int:
    _emit(io.dump_json(_generate(args)), args.out)
    return 0


def cmd_bench(args) -> int:
    if args.list:
        _emit("".join(f"{name}\n" for name in REGISTRY), args.out)
        return 0
    if args.name is None:
        raise ValidationError("bench needs an experiment name (or --list)")
    accepted = inspect.signature(REGISTRY[args.name]).parameters
    kwargs = {}
    if "seed" in accepted:
        kwargs["seed"] = args.seed
    if args.trials is not None:
        if "trials" not in accepted:
            raise ValidationError(f"{args.name} does not take --trials")
        kwargs["trials"] = args.trials
    result = run_bench(args.name, **kwargs)
    if args.format == "json":
        text = _json({"name": result.name, "passed": result.passed, "criterion": result.criterion,
                      "measured": result.measured, "seconds": result.seconds})
    else:
        text = result.line() + "\n"
    _emit(text, args.out)
    return 0 if result.passed else 2


COMMANDS = {
    "run-online": cmd_run_online,
    "run-greedy": cmd_run_greedy,
    "gap-check": cmd_gap_check,
    "solve-offline": cmd_solve_offline,
    "gen-instance": cmd_gen_instance,
    "bench": cmd_bench,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.trials is not None and args.trials < 1:
            raise ValidationError("--trials must be at least 1")
        if args.jobs < 1:
            raise ValidationError("--jobs must be at least 1")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ValidationError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
