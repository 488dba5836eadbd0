"""JSON serialization of instances, inputs and results.

Instance files use exactly the keys ``n_resources``, ``n_profits``,
``capacities``, ``m``, ``request_types`` and optionally ``input``; a
packing-covering instance additionally carries ``demands`` and reads its
type multiplicities from ``input.iid`` (multiplicity = ``m * p``).
"""

from __future__ import annotations

import json
import math
from typing import Any, Optional, Tuple

import numpy as np

from .core import (
    ASISchedule,
    IIDInput,
    Instance,
    OptionVector,
    RequestType,
    RunReport,
    StochasticInput,
    ValidationError,
    require_valid,
)
from .gap_solver import MixedPCInstance, validate_mixed

_TOP_KEYS = {"n_resources", "n_profits", "capacities", "m", "request_types"}
_OPTIONAL_TOP = {"input"}


def _check_keys(obj: Any, required: set, optional: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object")
    unknown = set(obj) - required - optional
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ValidationError(f"{where}: missing keys {sorted(missing)}")


def _int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ValidationError(f"{where}: expected an integer, got {value!r}")
    return int(value)


def _num(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _sparse(obj, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object")
    out = {}
    for k, v in obj.items():
        try:
            key = int(k)
        except ValueError:
            raise ValidationError(f"{where}: key {k!r} is not an integer id") from None
        out[key] = _num(v, f"{where}[{k}]")
    return out


def _request_types(raw, where: str = "request_types") -> Tuple[RequestType, ...]:
    if not isinstance(raw, list):
        raise ValidationError(f"{where}: expected a list")
    types = []
    for idx, rt in enumerate(raw):
        here = f"{where}[{idx}]"
        _check_keys(rt, {"id", "options"}, set(), here)
        if not isinstance(rt["options"], list):
            raise ValidationError(f"{here}.options: expected a list")
        opts = []
        for k, opt in enumerate(rt["options"]):
            ohere = f"{here}.options[{k}]"
            _check_keys(opt, set(), {"a", "w"}, ohere)
            opts.append(OptionVector(_sparse(opt.get("a", {}), ohere + ".a"),
                                     _sparse(opt.get("w", {}), ohere + ".w")))
        types.append(RequestType(_int(rt["id"], here + ".id"), tuple(opts)))
    return tuple(types)


def _input(raw) -> StochasticInput:
    if not isinstance(raw, dict) or len(raw) != 1 or next(iter(raw)) not in ("iid", "asi"):
        raise ValidationError("input: expected exactly one of 'iid' or 'asi'")
    if "iid" in raw:
        return IIDInput(_sparse(raw["iid"], "input.iid"))
    steps = raw["asi"]
    if not isinstance(steps, list):
        raise ValidationError("input.asi: expected a list of distributions")
    return ASISchedule(per_step=tuple(_sparse(d, f"input.asi[{t}]") for t, d in enumerate(steps)))


def instance_from_dict(data: dict, allow_large_gamma: bool = False) -> Tuple[Instance, Optional[StochasticInput]]:
    _check_keys(data, _TOP_KEYS, _OPTIONAL_TOP, "instance")
    caps = data["capacities"]
    if not isinstance(caps, list):
        raise ValidationError("capacities: expected a list")
    inst = Instance(
        n_resources=_int(data["n_resources"], "n_resources"),
        n_profits=_int(data["n_profits"], "n_profits"),
        capacities=tuple(_num(c, "capacities") for c in caps),
        m=_int(data["m"], "m"),
        request_types=_request_types(data["request_types"]),
    )
    stochastic_input = _input(data["input"]) if "input" in data else None
    require_valid(inst, stochastic_input, allow_large_gamma)
    return inst, stochastic_input


def _num_out(x: float):
    x = float(x)
    return int(x) if x.is_integer() and abs(x) < 2 ** 53 else x


def _sparse_out(d) -> dict:
    return {str(k): _num_out(v) for k, v in sorted(d.items())}


def _types_out(types) -> list:
    return [{"id": rt.id, "options": [{"a": _sparse_out(o.consumption), "w": _sparse_out(o.profit)}
                                      for o in rt.options]} for rt in types]


def _input_out(stochastic_input: StochasticInput) -> dict:
    if isinstance(stochastic_input, IIDInput):
        return {"iid": _sparse_out(stochastic_input.probs)}
    if stochastic_input.per_step is None:
        raise ValidationError("adaptive schedules cannot be serialized")
    return {"asi": [_sparse_out(d) for d in stochastic_input.per_step]}


def instance_to_dict(instance: Instance, stochastic_input: Optional[StochasticInput] = None) -> dict:
    out = {
        "n_resources": instance.n_resources,
        "n_profits": instance.n_profits,
        "capacities": [_num_out(c) for c in instance.capacities],
        "m": instance.m,
        "request_types": _types_out(instance.request_types),
    }
    if stochastic_input is not None:
        out["input"] = _input_out(stochastic_input)
    return out


def mixed_from_dict(data: dict) -> MixedPCInstance:
    _check_keys(data, _TOP_KEYS | {"demands"}, _OPTIONAL_TOP, "instance")
    types = _request_types(data["request_types"])
    m = _int(data["m"], "m")
    if "input" in data:
        stochastic_input = _input(data["input"])
        if not isinstance(stochastic_input, IIDInput):
            raise ValidationError("packing-covering instances take an 'iid' input")
        mult = tuple(m * stochastic_input.probs.get(rt.id, 0.0) for rt in types)
    else:
        mult = None
    inst = MixedPCInstance(
        n_pack=_int(data["n_resources"], "n_resources"),
        n_cover=_int(data["n_profits"], "n_profits"),
        capacities=tuple(_num(c, "capacities") for c in data["capacities"]),
        demands=tuple(_num(d, "demands") for d in data["demands"]),
        m=m, request_types=types, multiplicities=mult)
    problems = validate_mixed(inst)
    if problems:
        raise ValidationError("; ".join(problems))
    return inst


def mixed_to_dict(inst: MixedPCInstance) -> dict:
    return {
        "n_resources": inst.n_pack,
        "n_profits": inst.n_cover,
        "capacities": [_num_out(c) for c in inst.capacities],
        "demands": [_num_out(d) for d in inst.demands],
        "m": inst.m,
        "request_types": _types_out(inst.request_types),
        "input": {"iid": {str(rt.id): v / inst.m for rt, v in zip(inst.request_types, inst.multiplicities)}},
    }


def read_json(path: str) -> Any:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def load_instance(path: str, allow_large_gamma: bool = False) -> Tuple[Instance, Optional[StochasticInput]]:
    return instance_from_dict(read_json(path), allow_large_gamma)


def load_mixed(path: str) -> MixedPCInstance:
    return mixed_from_dict(read_json(path))


def dump_json(obj: Any, path: Optional[str] = None) -> str:
    text = json.dumps(obj, indent=1, sort_keys=False, allow_nan=False) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def report_to_dict(report: RunReport, benchmark: Optional[float] = None) -> dict:
    out = {
        "decisions": [[t, k] for t, k in report.decisions],
        "cum_consumption": report.cum_consumption.tolist(),
        "cum_profit": report.cum_profit.tolist(),
        "violations": [list(v) for v in report.violations],
        "objective": report.objective,
        "served_count": report.served_count,
    }
    if benchmark is not None:
        out["benchmark"] = benchmark
    return out


def _finite(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def to_jsonable(obj: Any) -> Any:
    """Convert numpy values and containers into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return _finite(obj)
