"""Experiment configuration documents.

A config is one JSON object::

    {
      "seed": 20240611,
      "processes": {"name": {process document}, ...},
      "kernels":   {"name": {kernel document}, ...},
      "plan":    {"stages": [{"process": "p1", "kernel": "k1"}, {"process": "p2"}],
                  "max_revivals": 1, "horizon": null},
      "pasting": {"minus": "m", "plus": "p", "kernel_minus": "km", "kernel_plus": "kp",
                  "max_revivals": 200, "horizon": null},
      "start":   {"stage": 1, "state": "a"},
      "params":  {"alpha": 1.0, "time": 1.0, "samples": 10000, "f": {...}, ...},
      "out_dir": "results"
    }

Exactly one of ``plan`` or ``pasting`` is needed by the simulation commands;
``invert-laplace`` may use neither. Errors carry the dotted field path, and
JSON syntax errors carry the line and column.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Any, Mapping

from .concat import ConcatenationPlan, Stage
from .errors import ConcatError, ConfigurationError
from .functions import StateFunction, function_from_json
from .pasting import PastingSpec, make_alternating_plan
from .process import ProcessSpec, process_from_json
from .spaces import FiniteLabels
from .transfer import TransferKernel, kernel_from_json

__all__ = ["ExperimentConfig", "load_config", "parse_config", "OVERRIDE_KEYS"]

# CLI flag -> (section, key)
OVERRIDE_KEYS = {
    "seed": (None, "seed"),
    "samples": ("params", "samples"),
    "alpha": ("params", "alpha"),
    "time": ("params", "time"),
    "max_revivals": ("plan", "max_revivals"),
    "horizon": ("plan", "horizon"),
    "tolerance_sigma": ("params", "tolerance_sigma"),
    "out_dir": (None, "out_dir"),
}

_TOP_KEYS = {"seed", "processes", "kernels", "plan", "pasting", "start", "params", "out_dir", "description"}


def _fail(where: str, msg: str):
    raise ConfigurationError(f"{where}: {msg}")


def _get(doc: Mapping, key: str, where: str, kind=None, default=...):
    if key not in doc:
        if default is ...:
            _fail(where, f"missing field '{key}'")
        return default
    val = doc[key]
    if kind is not None and not isinstance(val, kind):
        _fail(f"{where}.{key}", f"expected {getattr(kind, '__name__', kind)}, got {type(val).__name__}")
    return val


@dataclass
class ExperimentConfig:
    raw: dict
    seed: int
    processes: dict = field(default_factory=dict)
    kernel_docs: dict = field(default_factory=dict)
    plan: ConcatenationPlan | None = None
    pasting: PastingSpec | None = None
    start: tuple | None = None
    params: dict = field(default_factory=dict)
    out_dir: str | None = None

    def param(self, key: str, default=...):
        if key not in self.params:
            if default is ...:
                _fail("params", f"missing field '{key}'")
            return default
        return self.params[key]

    def function(self, key: str = "f", default=...) -> StateFunction | list:
        doc = self.param(key, default)
        if isinstance(doc, StateFunction) or doc is None:
            return doc
        try:
            if isinstance(doc, list):
                return [function_from_json(d) for d in doc]
            return function_from_json(doc)
        except (ConfigurationError, KeyError, TypeError, ValueError) as exc:
            _fail(f"params.{key}", str(exc))

    def require_plan(self) -> ConcatenationPlan:
        if self.plan is None:
            _fail("plan", "this command needs a 'plan' or 'pasting' section")
        return self.plan

    def resolved_json(self) -> str:
        """The config after overrides, as canonical one-line JSON."""
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))


def _parse_seed(val, where="seed") -> int:
    if isinstance(val, bool) or not isinstance(val, int):
        _fail(where, "seed must be an integer")
    if not 0 <= val < 2**64:
        _fail(where, "seed must be a 64-bit unsigned integer")
    return val


def _parse_horizon(val, where):
    if val is None:
        return math.inf
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not val > 0:
        _fail(where, "horizon must be a positive number or null")
    return float(val)


def _parse_revivals(val, where):
    if isinstance(val, bool) or not isinstance(val, int) or val < 0:
        _fail(where, "max_revivals must be a non-negative integer")
    return val


class _Resolver:
    def __init__(self, doc: Mapping):
        self.proc_docs = _get(doc, "processes", "config", Mapping, {})
        self.kern_docs = _get(doc, "kernels", "config", Mapping, {})
        self._procs: dict[str, ProcessSpec] = {}

    def process(self, name, where) -> ProcessSpec:
        if not isinstance(name, str) or name not in self.proc_docs:
            _fail(where, f"unknown process {name!r}")
        if name not in self._procs:
            try:
                self._procs[name] = process_from_json(self.proc_docs[name], tag=0)
            except (ConfigurationError, KeyError, TypeError, ValueError) as exc:
                _fail(f"processes.{name}", str(exc))
        return self._procs[name]

    def kernel(self, name, source: ProcessSpec, where) -> TransferKernel:
        if not isinstance(name, str) or name not in self.kern_docs:
            _fail(where, f"unknown kernel {name!r}")
        kind = "labels" if isinstance(source.space.base, FiniteLabels) else "interval"
        try:
            return kernel_from_json(self.kern_docs[name], kind)
        except (ConfigurationError, KeyError, TypeError, ValueError) as exc:
            _fail(f"kernels.{name}", str(exc))


def _parse_plan(doc: Mapping, res: _Resolver) -> ConcatenationPlan:
    stages_doc = _get(doc, "stages", "plan", list)
    if not stages_doc:
        _fail("plan.stages", "needs at least one stage")
    stages = []
    for i, sd in enumerate(stages_doc):
        where = f"plan.stages[{i}]"
        if not isinstance(sd, Mapping):
            _fail(where, "stage must be an object")
        proc = res.process(_get(sd, "process", where), f"{where}.process")
        kname = sd.get("kernel")
        kernel = None if kname is None else res.kernel(kname, proc, f"{where}.kernel")
        stages.append(Stage(proc, kernel))
    max_rev = _parse_revivals(doc.get("max_revivals", len(stages) - 1), "plan.max_revivals")
    horizon = _parse_horizon(doc.get("horizon"), "plan.horizon")
    try:
        return ConcatenationPlan(stages, None, max_rev, horizon)
    except ConfigurationError as exc:
        _fail("plan", str(exc))


def _parse_pasting(doc: Mapping, res: _Resolver) -> tuple[PastingSpec, ConcatenationPlan]:
    minus = res.process(_get(doc, "minus", "pasting"), "pasting.minus")
    plus = res.process(_get(doc, "plus", "pasting"), "pasting.plus")
    km = res.kernel(_get(doc, "kernel_minus", "pasting"), minus, "pasting.kernel_minus")
    kp = res.kernel(_get(doc, "kernel_plus", "pasting"), plus, "pasting.kernel_plus")
    try:
        ps = PastingSpec(minus, plus, km, kp)
    except ConfigurationError as exc:
        _fail("pasting", str(exc))
    max_rev = _parse_revivals(doc.get("max_revivals", 200), "pasting.max_revivals")
    horizon = _parse_horizon(doc.get("horizon"), "pasting.horizon")
    return ps, make_alternating_plan(ps, max_rev, horizon)


def apply_overrides(doc: dict, overrides: Mapping[str, Any]) -> dict:
    out = copy.deepcopy(doc)
    for key, val in overrides.items():
        if val is None:
            continue
        if key not in OVERRIDE_KEYS:
            raise ConfigurationError(f"unknown override {key!r}")
        section, name = OVERRIDE_KEYS[key]
        if section == "plan" and "pasting" in out and "plan" not in out:
            section = "pasting"
        if section is None:
            out[name] = val
        else:
            if section in ("plan",) and section not in out:
                # truncation flags without a plan section have nothing to act on
                continue
            out.setdefault(section, {})[name] = val
    return out


def parse_config(doc: Any, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    if not isinstance(doc, Mapping):
        _fail("config", "top level must be a JSON object")
    doc = apply_overrides(dict(doc), overrides or {})
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        _fail("config", f"unknown top-level fields {sorted(unknown)}")
    if "seed" not in doc:
        _fail("config", "missing field 'seed' (there is no default seed)")
    seed = _parse_seed(doc["seed"])
    res = _Resolver(doc)
    plan = pasting = None
    if "plan" in doc and "pasting" in doc:
        _fail("config", "give either 'plan' or 'pasting', not both")
    if "plan" in doc:
        plan = _parse_plan(_get(doc, "plan", "config", Mapping), res)
    elif "pasting" in doc:
        pasting, plan = _parse_pasting(_get(doc, "pasting", "config", Mapping), res)
    start = None
    if "start" in doc:
        sd = _get(doc, "start", "config", Mapping)
        stage = _get(sd, "stage", "start", int, 1)
        if isinstance(stage, bool) or stage < 1:
            _fail("start.stage", "must be a positive integer")
        start = (stage, _get(sd, "state", "start"))
    params = dict(_get(doc, "params", "config", Mapping, {}))
    for key in ("alpha", "time"):
        if key in params and (isinstance(params[key], bool) or not isinstance(params[key], (int, float))):
            _fail(f"params.{key}", "must be a number")
    if "samples" in params and (isinstance(params["samples"], bool) or not isinstance(params["samples"], int)):
        _fail("params.samples", "must be an integer")
    # validate every process, even ones not referenced by the plan
    for name in res.proc_docs:
        res.process(name, f"processes.{name}")
    out_dir = doc.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        _fail("out_dir", "must be a string")
    return ExperimentConfig(doc, seed, dict(res._procs), dict(res.kern_docs), plan, pasting, start, params, out_dir)


def load_config(path: str | FsPath, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    p = FsPath(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    try:
        return parse_config(doc, overrides)
    except ConcatError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
