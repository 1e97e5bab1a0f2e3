"""Run configuration files.

A configuration is a JSON document with the sections ``data``, ``model``,
``chains``, ``simulator``, ``predict`` and ``diagnose``.  Relative paths are
resolved against the directory holding the file.  Unknown keys are errors.
"""
from __future__ import annotations

import difflib
import json
import math
import shlex
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linkfun import LinkKind
from .model import (Constraint, FieldDataset, Hyperpriors, ModelSpec, ParameterSpec, Problem,
                    Variant, read_field_csv, standardize)
from .protocol import DEFAULT_TIMEOUT, ExternalSimulator
from .sampler import ChainConfig
from .simulators import BUILTIN_SIMULATORS, ExternalSimulatorStub, Simulator, builtin_simulator

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "SCHEMA"]


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


_HYPER = ("a_y", "b_y", "a_lambda_theta", "b_lambda_theta", "b_rho")

SCHEMA = {
    "data": {"path": None, "response": None, "inputs": None, "x_bounds": None},
    "model": {"variant": None, "link": None, "mu_theta": None, "hyperpriors": dict.fromkeys(_HYPER),
              "parameters": None, "nugget_log_threshold": None},
    "chains": {"n_burn": None, "n_post": None, "thin": None, "n_chains": None,
               "adapt_interval": None, "target_accept_scalar": None,
               "target_accept_block": None, "seed": None, "max_init_attempts": None,
               "aux_moves": None, "workers": None},
    "simulator": {"builtin": None, "command": None, "external": None, "timeout": None,
                  "concurrency_safe": None, "constants": None, "cwd": None},
    "predict": {"grid": None, "scaled": None, "draws": None, "traces": None},
    "diagnose": {"n_rep": None, "traces": None},
}
_PARAM_KEYS = ("name", "bounds", "role", "constraints")
_CONSTRAINT_KEYS = ("x", "lower", "upper")


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", where or "<root>")
    for key in obj:
        if key not in allowed:
            close = difflib.get_close_matches(key, list(allowed), n=1, cutoff=0.6)
            hint = f"; did you mean {close[0]!r}?" if close else f"; allowed: {sorted(allowed)}"
            name = f"{where}.{key}" if where else key
            raise ConfigError(f"unknown key {key!r}{hint}", name)


def _num(value, name, positive=False, integer=False, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", name)
    if not math.isfinite(value):
        raise ConfigError(f"must be finite, got {value!r}", name)
    if integer and int(value) != value:
        raise ConfigError(f"must be an integer, got {value!r}", name)
    if positive and not value > 0:
        raise ConfigError(f"must be positive, got {value!r}", name)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}, got {value!r}", name)
    return int(value) if integer else float(value)


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


@dataclass
class RunConfig:
    """A validated configuration, ready to build a problem."""

    source: Path
    data: FieldDataset
    spec: ModelSpec
    chains: ChainConfig
    simulator: dict
    predict: dict = field(default_factory=dict)
    diagnose: dict = field(default_factory=dict)
    nugget_log_threshold: float = None
    workers: int = None
    raw: dict = field(default_factory=dict, repr=False)

    def build_simulator(self) -> Simulator:
        s = self.simulator
        n_in = self.data.d_x
        if "builtin" in s:
            sim = builtin_simulator(s["builtin"])
            if sim.n_inputs != n_in:
                raise ConfigError(f"builtin {s['builtin']!r} takes {sim.n_inputs} control "
                                  f"inputs, data has {n_in}", "simulator.builtin")
            return sim
        if "command" in s:
            cmd = list(s["command"]) + [f"{k}={v!r}" for k, v in s.get("constants", {}).items()]
            return ExternalSimulator(cmd, n_in, 2, s.get("timeout", DEFAULT_TIMEOUT),
                                     s.get("concurrency_safe", False), cwd=s.get("cwd"),
                                     name=s.get("external") or "external")
        return ExternalSimulatorStub(n_in, 2, label=s["external"])

    def problem(self, sim: Simulator = None) -> Problem:
        kw = {}
        if self.nugget_log_threshold is not None:
            kw["nugget_log_threshold"] = self.nugget_log_threshold
        return Problem(self.spec, self.data, sim or self.build_simulator(), **kw)


def _parse_data(sec, base):
    _check_keys(sec, SCHEMA["data"], "data")
    for k in ("path", "response"):
        if k not in sec:
            raise ConfigError("required", f"data.{k}")
    path = _resolve(base, sec["path"])
    if not path.is_file():
        raise ConfigError(f"file not found: {path}", "data.path")
    inputs = sec.get("inputs")
    if inputs is not None and (not isinstance(inputs, list) or not all(isinstance(c, str) for c in inputs)):
        raise ConfigError("expected a list of column names", "data.inputs")
    try:
        X, y, names = read_field_csv(path, sec["response"], inputs)
    except ValueError as exc:
        raise ConfigError(str(exc), "data.path") from None
    bounds = sec.get("x_bounds")
    if bounds is not None:
        b = np.asarray(bounds, dtype=float)
        if b.shape != (X.shape[1], 2):
            raise ConfigError(f"need one [min, max] pair per input ({X.shape[1]})", "data.x_bounds")
    try:
        return standardize(X, y, bounds, names, sec["response"])
    except ValueError as exc:
        raise ConfigError(str(exc), "data") from None


def _parse_parameters(params):
    if not isinstance(params, list) or not params:
        raise ConfigError("expected a non-empty list", "model.parameters")
    out = []
    for i, p in enumerate(params):
        where = f"model.parameters[{i}]"
        _check_keys(p, _PARAM_KEYS, where)
        if "name" not in p or "bounds" not in p:
            raise ConfigError("needs 'name' and 'bounds'", where)
        b = p["bounds"]
        if not (isinstance(b, list) and len(b) == 2):
            raise ConfigError("expected [min, max]", f"{where}.bounds")
        lo, hi = (_num(v, f"{where}.bounds") for v in b)
        if not lo < hi:
            raise ConfigError(f"need min < max, got {b}", f"{where}.bounds")
        cons = []
        for j, c in enumerate(p.get("constraints", [])):
            cw = f"{where}.constraints[{j}]"
            _check_keys(c, _CONSTRAINT_KEYS, cw)
            if set(c) != set(_CONSTRAINT_KEYS):
                raise ConfigError("needs 'x', 'lower' and 'upper'", cw)
            lower, upper = _num(c["lower"], f"{cw}.lower"), _num(c["upper"], f"{cw}.upper")
            if not lower < upper:
                raise ConfigError("need lower < upper", cw)
            cons.append(Constraint(c["x"], lower, upper))
        try:
            out.append(ParameterSpec(str(p["name"]), (lo, hi), p.get("role", "constant"), tuple(cons)))
        except ValueError as exc:
            raise ConfigError(str(exc), where) from None
    return tuple(out)


def _parse_model(sec):
    _check_keys(sec, SCHEMA["model"], "model")
    _check_keys(sec.get("hyperpriors", {}), SCHEMA["model"]["hyperpriors"], "model.hyperpriors")
    try:
        variant = Variant(sec.get("variant", "gp"))
    except ValueError:
        raise ConfigError(f"must be one of {[v.value for v in Variant]}", "model.variant") from None
    try:
        link = LinkKind(sec.get("link", "logit"))
    except ValueError:
        raise ConfigError(f"must be one of {[k.value for k in LinkKind]}", "model.link") from None
    hyper = {k: _num(v, f"model.hyperpriors.{k}", positive=True)
             for k, v in sec.get("hyperpriors", {}).items()}
    mu = sec.get("mu_theta")
    if mu is not None:
        mu = _num(mu, "model.mu_theta")
    if "parameters" not in sec:
        raise ConfigError("required", "model.parameters")
    params = _parse_parameters(sec["parameters"])
    try:
        spec = ModelSpec(variant, link, params, Hyperpriors.for_link(link, **hyper), mu)
    except ValueError as exc:
        raise ConfigError(str(exc), "model") from None
    a = sec.get("nugget_log_threshold")
    return spec, (None if a is None else _num(a, "model.nugget_log_threshold", positive=True))


def _parse_chains(sec):
    _check_keys(sec, SCHEMA["chains"], "chains")
    kw = {}
    for k in ("n_burn", "n_post", "seed", "max_init_attempts"):
        if k in sec:
            kw[k] = _num(sec[k], f"chains.{k}", integer=True, minimum=0)
    for k in ("thin", "n_chains", "adapt_interval"):
        if k in sec:
            kw[k] = _num(sec[k], f"chains.{k}", integer=True, minimum=1)
    for k in ("target_accept_scalar", "target_accept_block"):
        if k in sec:
            v = sec[k]
            if not (isinstance(v, list) and len(v) == 2):
                raise ConfigError("expected [low, high]", f"chains.{k}")
            lo, hi = (_num(t, f"chains.{k}") for t in v)
            if not 0 < lo < hi < 1:
                raise ConfigError(f"need 0 < low < high < 1, got {v}", f"chains.{k}")
            kw[k] = (lo, hi)
    if "aux_moves" in sec:
        if not isinstance(sec["aux_moves"], bool):
            raise ConfigError("expected true or false", "chains.aux_moves")
        kw["aux_moves"] = sec["aux_moves"]
    workers = sec.get("workers")
    if workers is not None:
        workers = _num(workers, "chains.workers", integer=True, minimum=1)
    try:
        return ChainConfig(**kw), workers
    except ValueError as exc:
        raise ConfigError(str(exc), "chains") from None


def _parse_simulator(sec, base):
    _check_keys(sec, SCHEMA["simulator"], "simulator")
    kinds = [k for k in ("builtin", "command") if k in sec]
    if len(kinds) > 1:
        raise ConfigError("give either 'builtin' or 'command', not both", "simulator")
    out = dict(sec)
    if not kinds and "external" not in sec:
        raise ConfigError("needs 'builtin', 'command' or 'external'", "simulator")
    if "builtin" in sec and sec["builtin"] not in BUILTIN_SIMULATORS:
        raise ConfigError(f"unknown builtin {sec['builtin']!r}; available: "
                          f"{sorted(BUILTIN_SIMULATORS)}", "simulator.builtin")
    if "command" in sec:
        cmd = sec["command"]
        if isinstance(cmd, str):
            cmd = shlex.split(cmd)
        if not (isinstance(cmd, list) and cmd and all(isinstance(c, str) for c in cmd)):
            raise ConfigError("expected a non-empty command line", "simulator.command")
        out["command"] = cmd
        out["cwd"] = str(_resolve(base, sec.get("cwd", ".")))
    if "timeout" in sec:
        out["timeout"] = _num(sec["timeout"], "simulator.timeout", positive=True)
    if "constants" in sec:
        if not isinstance(sec["constants"], dict):
            raise ConfigError("expected an object", "simulator.constants")
        out["constants"] = {k: _num(v, f"simulator.constants.{k}") for k, v in sec["constants"].items()}
    if "concurrency_safe" in sec and not isinstance(sec["concurrency_safe"], bool):
        raise ConfigError("expected true or false", "simulator.concurrency_safe")
    return out


def _parse_predict(sec, data: FieldDataset, base):
    _check_keys(sec, SCHEMA["predict"], "predict")
    out = {"scaled": bool(sec.get("scaled", False)), "draws": bool(sec.get("draws", False))}
    if "grid" in sec:
        try:
            grid = np.asarray(sec["grid"], dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("expected a list of numbers or of input rows", "predict.grid") from None
        grid = grid.reshape(-1, data.d_x) if grid.ndim < 2 else grid
        if grid.shape[1] != data.d_x or grid.size == 0:
            raise ConfigError(f"each grid row needs {data.d_x} inputs", "predict.grid")
        scaled = grid if out["scaled"] else data.scale_x(grid)
        if np.any(scaled < 0) or np.any(scaled > 1):
            raise ConfigError("grid points must lie within the input bounds", "predict.grid")
        out["grid"] = grid
    if "traces" in sec:
        out["traces"] = str(_resolve(base, sec["traces"]))
    return out


def _parse_diagnose(sec, base):
    _check_keys(sec, SCHEMA["diagnose"], "diagnose")
    out = {"n_rep": _num(sec.get("n_rep", 2000), "diagnose.n_rep", integer=True, minimum=1)}
    if "traces" in sec:
        out["traces"] = str(_resolve(base, sec["traces"]))
    return out


def load_config(text: str, base=".", source="<string>") -> RunConfig:
    """Parse and validate configuration text."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: parse error at line {exc.lineno}, column {exc.colno}: "
                          f"{exc.msg}") from None
    _check_keys(raw, SCHEMA, "")
    base = Path(base)
    for k in ("data", "model", "simulator"):
        if k not in raw:
            raise ConfigError("required section missing", k)
    data = _parse_data(raw["data"], base)
    spec, a = _parse_model(raw["model"])
    chains, workers = _parse_chains(raw.get("chains", {}))
    sim = _parse_simulator(raw["simulator"], base)
    return RunConfig(
        source=Path(source), data=data, spec=spec, chains=chains, simulator=sim,
        predict=_parse_predict(raw.get("predict", {}), data, base),
        diagnose=_parse_diagnose(raw.get("diagnose", {}), base),
        nugget_log_threshold=a, workers=workers, raw=raw,
    )


def parse_config(path) -> RunConfig:
    """Read and validate a configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return load_config(text, path.parent, str(path))
