"""Scenario files.

A config is a YAML document with a top-level ``scenarios`` list::

    scenarios:
      - name: S1
        task: stabilize
        seed: 7
        grid: {n: 200, length: pi}
        potential: 0.0            # or [[a, b, value], ...]
        masks: {w1: [0.9, 1.5], w2: [1.8, 2.4]}
        gamma: 2.0
        T: 1.0
        n_periods: 10

Unknown keys are rejected with their line number; so are keys that belong
to a different task.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..errors import ConfigurationError

TASKS = ("stabilize", "min_norm", "duality", "observation_chain", "inverse_source")
COMMON_KEYS = {"name", "task", "seed", "grid", "potential", "masks"}
# per-task parameters with their defaults (None = required)
TASK_KEYS = {
    "stabilize": {"gamma": None, "T": None, "n_periods": None, "n_initial": 1, "extra_samples": 16},
    "min_norm": {"times": None, "eps": None, "dim_trunc": 6, "n_instances": 20},
    "duality": {"times": None, "eps": None, "dim_trunc": 3, "n_samples": 50, "n_random": 16},
    "observation_chain": {"lambda_cut": None, "t_values": [0.1, 0.25, 0.5, 1.0],
                          "theta_values": [0.25, 0.5, 0.75], "beta": 0.5, "eps_values": [0.5, 0.1, 0.01]},
    "inverse_source": {"times": None, "eps": None, "K": None, "phi_modes": None},
}
REQUIRED_MASKS = {"stabilize": ("w1", "w2")}
TOP_KEYS = {"scenarios"}


@dataclass
class Scenario:
    name: str
    task: str
    n: int
    length: float
    potential: object = 0.0
    masks: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seed: int = 0
    line: int = 0

    def to_dict(self) -> dict:
        pot = self.potential if not isinstance(self.potential, list) else [list(p) for p in self.potential]
        return {"name": self.name, "task": self.task, "seed": self.seed,
                "grid": {"n": self.n, "length": self.length}, "potential": pot,
                "masks": {k: list(v) for k, v in self.masks.items()}, **self.params}


def _err(source, node, msg):
    line = node.start_mark.line + 1 if node is not None else 0
    return ConfigurationError(f"{source}:{line}: {msg}")


def _mapping(source, node, what):
    if not isinstance(node, yaml.MappingNode):
        raise _err(source, node, f"{what} must be a mapping")
    out = {}
    for k, v in node.value:
        if not isinstance(k, yaml.ScalarNode):
            raise _err(source, k, f"{what}: keys must be plain names")
        if k.value in out:
            raise _err(source, k, f"{what}: duplicate key '{k.value}'")
        out[k.value] = (k, v)
    return out


def _value(node):
    return yaml.safe_load(yaml.serialize(node))


def _number(source, node, what, positive=False, integer=False):
    v = _value(node)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
        raise _err(source, node, f"{what} must be {'an integer' if integer else 'a number'}, got {v!r}")
    if not math.isfinite(v) or (positive and v <= 0):
        raise _err(source, node, f"{what} must be {'positive' if positive else 'finite'}, got {v!r}")
    return v


def _length(source, node):
    v = _value(node)
    if v == "pi":
        return math.pi
    return float(_number(source, node, "grid.length", positive=True))


def _times(source, node):
    v = _value(node)
    if not (isinstance(v, list) and len(v) == 3 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
        raise _err(source, node, f"times must be [T1, T2, T3], got {v!r}")
    T1, T2, T3 = (float(x) for x in v)
    if not 0 <= T1 < T2 < T3:
        raise _err(source, node, f"times need 0 <= T1 < T2 < T3, got {v}")
    return [T1, T2, T3]


def _float_list(source, node, what):
    v = _value(node)
    if not (isinstance(v, list) and v and all(isinstance(x, (int, float)) and not isinstance(x, bool) and x > 0 for x in v)):
        raise _err(source, node, f"{what} must be a non-empty list of positive numbers")
    return [float(x) for x in v]


def _scenario(source, node) -> Scenario:
    m = _mapping(source, node, "scenario")
    for key in ("name", "task", "grid"):
        if key not in m:
            raise _err(source, node, f"scenario is missing '{key}'")
    name = _value(m["name"][1])
    if not isinstance(name, str) or not name or any(c in name for c in "/\\") or name.startswith("."):
        raise _err(source, m["name"][1], f"scenario name must be a plain non-empty string, got {name!r}")
    task = _value(m["task"][1])
    if task not in TASKS:
        raise _err(source, m["task"][1], f"scenario '{name}': unknown task {task!r} (expected one of {', '.join(TASKS)})")
    allowed = COMMON_KEYS | set(TASK_KEYS[task])
    for key, (knode, _) in m.items():
        if key not in allowed:
            raise _err(source, knode, f"scenario '{name}': unknown key '{key}' for task {task}")

    g = _mapping(source, m["grid"][1], "grid")
    for key, (knode, _) in g.items():
        if key not in ("n", "length"):
            raise _err(source, knode, f"scenario '{name}': unknown grid key '{key}'")
    if "n" not in g or "length" not in g:
        raise _err(source, m["grid"][1], f"scenario '{name}': grid needs n and length")
    n = _number(source, g["n"][1], "grid.n", positive=True, integer=True)
    if n < 2:
        raise _err(source, g["n"][1], "grid.n must be at least 2")
    length = _length(source, g["length"][1])

    seed = 0
    if "seed" in m:
        seed = _number(source, m["seed"][1], "seed", integer=True)
        if not 0 <= seed < 2**64:
            raise _err(source, m["seed"][1], "seed must be a 64-bit unsigned integer")

    potential = 0.0
    if "potential" in m:
        pnode = m["potential"][1]
        pv = _value(pnode)
        if isinstance(pv, list):
            pieces = []
            for piece in pv:
                if not (isinstance(piece, list) and len(piece) == 3
                        and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in piece)):
                    raise _err(source, pnode, f"scenario '{name}': potential pieces are [a, b, value]")
                a, b, val = (float(x) for x in piece)
                if not 0 <= a < b <= length:
                    raise _err(source, pnode, f"scenario '{name}': potential piece ({a}, {b}) is not inside (0, {length})")
                pieces.append((a, b, val))
            potential = pieces
        else:
            potential = float(_number(source, pnode, "potential"))

    masks = {}
    if "masks" in m:
        for mname, (knode, vnode) in _mapping(source, m["masks"][1], "masks").items():
            v = _value(vnode)
            if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
                raise _err(source, vnode, f"scenario '{name}': mask {mname} must be [a, b]")
            a, b = float(v[0]), float(v[1])
            if not 0 <= a < b <= length:
                raise _err(source, vnode, f"scenario '{name}': mask {mname} = ({a}, {b}) is not inside (0, {length})")
            masks[mname] = (a, b)
    for req in REQUIRED_MASKS.get(task, ("w1",)):
        if req not in masks:
            raise _err(source, node, f"scenario '{name}': task {task} needs mask '{req}'")

    params = {}
    for key, default in TASK_KEYS[task].items():
        if key not in m:
            if default is None and not (task == "inverse_source" and key == "phi_modes"):
                raise _err(source, node, f"scenario '{name}': task {task} needs '{key}'")
            params[key] = list(default) if isinstance(default, list) else default
            continue
        vnode = m[key][1]
        if key == "times":
            params[key] = _times(source, vnode)
        elif key in ("t_values", "theta_values", "eps_values"):
            params[key] = _float_list(source, vnode, key)
        elif key in ("n_periods", "n_initial", "dim_trunc", "n_instances", "n_samples", "n_random", "K", "phi_modes"):
            params[key] = _number(source, vnode, key, positive=True, integer=True)
        elif key == "extra_samples":
            params[key] = _number(source, vnode, key, integer=True)
            if params[key] < 0:
                raise _err(source, vnode, "extra_samples must be nonnegative")
        else:
            params[key] = float(_number(source, vnode, key, positive=(key != "lambda_cut")))
    if task == "inverse_source" and params["phi_modes"] is None:
        params["phi_modes"] = params["K"]
    if task == "observation_chain" and not 0 < params["beta"] < 1:
        raise _err(source, m.get("beta", (None, node))[1], "beta must lie in (0, 1)")
    for key in ("dim_trunc", "K", "phi_modes"):
        if key in params and params[key] > n:
            raise _err(source, m.get(key, (None, node))[1], f"scenario '{name}': {key}={params[key]} exceeds grid.n={n}")
    return Scenario(name, task, int(n), length, potential, masks, params, int(seed), node.start_mark.line + 1)


def parse_text(text: str, source: str = "<config>") -> list[Scenario]:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigurationError(f"{where}: {getattr(exc, 'problem', None) or exc}") from None
    if root is None:
        return []
    top = _mapping(source, root, "config")
    for key, (knode, _) in top.items():
        if key not in TOP_KEYS:
            raise _err(source, knode, f"unknown top-level key '{key}'")
    if "scenarios" not in top:
        return []
    snode = top["scenarios"][1]
    if isinstance(snode, yaml.ScalarNode) and _value(snode) is None:
        return []
    if not isinstance(snode, yaml.SequenceNode):
        raise _err(source, snode, "scenarios must be a list")
    out, seen = [], {}
    for item in snode.value:
        sc = _scenario(source, item)
        if sc.name in seen:
            raise _err(source, item, f"duplicate scenario name '{sc.name}' (first defined on line {seen[sc.name]})")
        seen[sc.name] = sc.line
        out.append(sc)
    return out


def parse_config(path) -> list[Scenario]:
    """Read and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_text(text, str(path))


def dump_config(scenarios) -> str:
    return yaml.safe_dump({"scenarios": [s.to_dict() for s in scenarios]}, sort_keys=False)
