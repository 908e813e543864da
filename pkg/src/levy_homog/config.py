"""Run configuration: JSON loading, dotted overrides, schema validation and problem assembly."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from .errors import ConfigError, ParseError
from .expr import check_positive_lower_bound, parse, var_names_for
from .measures import JumpMap, LevyDensity, builtin_example, example5_structures, symmetric_stable, _form_for
from .nonlocal_op import BoxDomain

DEFAULTS = {
    "seed": 0,
    "problem": {"dimension": 1, "domain": {"lower": [0.0], "upper": [1.0]}, "a": "1", "f": "0", "phi": "0"},
    "discretization": {"n": 256, "cell_n": 128, "rho": None, "R": 30.0, "cell_rho": None, "cell_R": 100.0,
                       "cells_per_decade": 32, "angular_sectors": 64, "eps_ball": None},
    "solver": {"lam_min": 1e-3, "osc_tol": 1e-4, "I": 0.0, "I2": 0.0, "eps_list": [0.25, 0.125, 0.0625],
               "effective_method": "auto", "margin_factor": 1.0, "threads": 1, "samples": 100,
               "homogeneity_trials": 1000, "homogeneity_rtol": 1e-10},
    "output": {"dir": "levy_out", "timing": True},
}


def schema():
    return json.loads(resources.files("levy_homog").joinpath("config_schema.json").read_text())


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg, overrides):
    """Apply ``key.sub=value`` strings; values are JSON when they parse as JSON."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = cfg
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-object")
        node[parts[-1]] = _parse_value(value)
    return cfg


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg):
    """Schema errors plus semantic checks, all reported together."""
    errors = [f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
              for e in sorted(jsonschema.Draft7Validator(schema()).iter_errors(cfg), key=lambda e: list(e.absolute_path))]
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    full = _merge(DEFAULTS, cfg)
    prob = full["problem"]
    dim = prob["dimension"]
    m = prob["measure"]
    sem = []
    if m["kind"] not in ("explicit",) and "alpha" not in m and m["kind"] != "example2":
        sem.append("problem/measure: alpha is required for this measure kind")
    if "alpha" in m and m["alpha"] == 1:
        sem.append("problem/measure/alpha: alpha = 1 is not covered (need (0,1) or (1,2))")
    if m["kind"] == "expr" and "expr" not in m:
        sem.append("problem/measure: expr measures need an 'expr' string")
    if m["kind"] == "explicit":
        if "nodes" not in m or "weights" not in m:
            sem.append("problem/measure: explicit measures need 'nodes' and 'weights'")
        elif len(m["nodes"]) != len(m["weights"]):
            sem.append("problem/measure: nodes and weights differ in length")
    dom = prob["domain"]
    if len(dom["lower"]) != dim or len(dom["upper"]) != dim:
        sem.append(f"problem/domain: bounds must have {dim} entries")
    for key, prefix in (("a", "y"), ("f", "y"), ("phi", "x")):
        try:
            parse(prob[key], var_names_for(prefix, dim))
        except ParseError as exc:
            sem.append(f"problem/{key}: {exc}")
    if not sem:
        a = parse(prob["a"], var_names_for("y", dim))
        a0 = prob.get("a0", 0.0)
        if not check_positive_lower_bound(a, max(a0, 1e-300), samples=64 if dim == 1 else 16, dims=dim):
            sem.append(f"problem/a: coefficient is not bounded below by a0={a0} > 0")
    eps = full["solver"]["eps_list"]
    if eps and any(e >= 1 for e in eps):
        sem.append("solver/eps_list: eps values must be < 1")
    if sem:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(sem))
    return full


def config_hash(cfg):
    """SHA-256 of the canonical JSON, excluding output settings and the thread count."""
    clean = copy.deepcopy(cfg)
    clean.pop("output", None)
    clean.get("solver", {}).pop("threads", None)
    text = json.dumps(clean, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def load(path=None, overrides=None, seed=None, data=None):
    if data is None:
        if path is None:
            raise ConfigError("no configuration given")
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    data = apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = int(seed)
    return validate(data)


@dataclass
class Problem:
    dim: int
    measure_kind: str
    structures: list
    form: int
    alpha: float | None
    a: object
    f: object
    phi: object
    a0: float
    domain: BoxDomain
    explicit: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def q(self):
        return self.structures[0][0]

    @property
    def beta(self):
        return self.structures[0][1]

    @property
    def q0(self):
        return self.structures[0][2]


def build_problem(cfg):
    prob = cfg["problem"]
    dim = prob["dimension"]
    m = prob["measure"]
    kind = m["kind"]
    alpha = m.get("alpha")
    params = {k: m[k] for k in ("dim", "alpha1", "alpha2", "slope", "decay") if k in m}
    explicit = None
    if kind in ("example1", "example2", "example3", "example4"):
        structures = [builtin_example(kind, alpha=alpha, **params)]
        if kind == "example2":
            alpha = structures[0][0].alpha
    elif kind == "example5":
        structures = example5_structures(alpha)
    elif kind == "stable":
        q, q0 = symmetric_stable(int(m.get("dim", dim)), alpha, m.get("gamma"))
        structures = [(q, JumpMap.identity(q.dim), q0)]
    elif kind == "expr":
        mdim = int(m.get("dim", dim))
        gamma = int(m.get("gamma") or _form_for(alpha))
        q = LevyDensity.from_expression(m["expr"], mdim, alpha, gamma, m.get("support"))
        structures = [(q, JumpMap.identity(mdim), None)]
    else:
        nodes = np.asarray(m["nodes"], dtype=float)
        explicit = {"nodes": nodes, "weights": np.asarray(m["weights"], dtype=float), "gamma": int(m.get("gamma", 1))}
        structures = [(None, JumpMap.identity(nodes.shape[1]), None)]
    if "beta" in prob and "matrix" in prob["beta"]:
        if kind == "example5":
            raise ConfigError("example5 fixes its own jump maps")
        beta = JumpMap.linear(prob["beta"]["matrix"], name=prob["beta"].get("name", "linear"))
        structures = [(s[0], beta, s[2]) for s in structures]
    for _, beta, _ in structures:
        if beta.target_dim != dim:
            raise ConfigError(f"jump map targets R^{beta.target_dim} but the problem dimension is {dim}")
    if explicit is not None:
        form = int(prob.get("form", explicit["gamma"]))
    else:
        form = int(prob.get("form") or structures[0][0].gamma)
    ys, xs = var_names_for("y", dim), var_names_for("x", dim)
    a = parse(prob["a"], ys)
    dom = prob["domain"]
    domain = BoxDomain(tuple(dom["lower"]), tuple(dom["upper"]), cfg["discretization"]["n"])
    samples = 64 if dim == 1 else 16
    axes = np.meshgrid(*[np.arange(samples) / samples] * dim, indexing="ij")
    a_min = float(a.on_points(np.stack([g.ravel() for g in axes], axis=1)).min())
    return Problem(dim, kind, structures, form, alpha, a, parse(prob["f"], ys), parse(prob["phi"], xs),
                   float(prob.get("a0", a_min)), domain, explicit)
