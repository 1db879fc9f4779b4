"""``concatmc`` command line.

Every command reads a JSON config, applies flag overrides, runs, writes
``<out_dir>/<command>.csv`` (and a JSON report where one exists) and prints
the CSV to stdout. Exit codes: 0 pass, 1 statistical failure, 2 bad config
or arguments.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path as FsPath
from typing import Sequence

from . import __version__
from .concat import concat_path_rows, sample_concatenated
from .config import ExperimentConfig, load_config
from .errors import ConcatError
from .estimate import (
    EntryStop,
    RevivalStop,
    dynkin_residual,
    mc_lifetime,
    mc_resolvent,
    mc_semigroup,
    post_widder_invert,
    rational_laplace,
    chain_laplace,
    oracle_generator,
    report_row,
    reports_to_csv,
    revival_formula_test,
)
from .functions import function_to_json
from .oracle import assemble_alternating_pair, exact_resolvent, exact_semigroup
from .pasting import check_consistency, projection_criterion_test
from .process import FiniteChain
from .rng import RngStream
from .spaces import Region, SpacePoint

COMMANDS = (
    "simulate",
    "resolvent",
    "semigroup",
    "check-dynkin",
    "check-revival",
    "check-pasting",
    "check-projection",
    "invert-laplace",
)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
DEFAULT_OUT = "concatmc-out"


class _Run:
    """Shared state for one command invocation."""

    def __init__(self, command: str, cfg: ExperimentConfig, workers: int):
        self.command = command
        self.cfg = cfg
        self.workers = workers
        self.rng = RngStream(cfg.seed)
        self.sigma = float(cfg.param("tolerance_sigma", 3.0))
        self.rows: list[dict] = []
        self.extra_files: dict[str, str] = {}
        self.failed = False

    def add(self, label: str, rep, passed: bool | None):
        self.rows.append(report_row(self.command, label, rep, passed))
        if passed is False:
            self.failed = True

    def add_raw(self, label: str, estimate: float, stderr, n, passed: bool | None):
        self.rows.append(
            {
                "command": self.command,
                "label": label,
                "estimate": repr(float(estimate)),
                "stderr": "" if stderr is None else repr(float(stderr)),
                "n": n,
                "seed": self.cfg.seed,
                "pass": "" if passed is None else str(bool(passed)).lower(),
            }
        )
        if passed is False:
            self.failed = True


def _fname(f) -> str:
    return json.dumps(function_to_json(f), sort_keys=True)


def _functions(cfg: ExperimentConfig, key: str = "f"):
    f = cfg.function(key, {"const": 1.0})
    return f if isinstance(f, list) else [f]


def _start(cfg: ExperimentConfig):
    if cfg.start is None:
        raise ConcatError("start: missing section 'start'")
    return cfg.start


def _oracle_values(cfg: ExperimentConfig, kind: str, fs, param: float):
    """Exact values at the start state for finite-chain targets, else ``None``."""
    plan = cfg.plan
    stage, value = _start(cfg)
    if cfg.pasting is not None:
        ps = cfg.pasting
        if not (isinstance(ps.minus, FiniteChain) and isinstance(ps.plus, FiniteChain)):
            return None
        sg = assemble_alternating_pair(ps.minus, ps.plus, ps.kernel_minus, ps.kernel_plus)
        # truncation is ignored here: the alternating oracle has no revival budget
        state = SpacePoint(1 if stage % 2 else 2, value)
    else:
        try:
            sg = oracle_generator(plan)
        except ConcatError:
            return None
        state = SpacePoint(stage, value)
    if state not in sg.states:
        return None
    i = sg.states.index(state)
    out = []
    for f in fs:
        vec = exact_resolvent(sg, param, f) if kind == "resolvent" else exact_semigroup(sg, param, f)
        out.append(float(vec[i]))
    return out


def _expected(cfg: ExperimentConfig, n: int):
    exp = cfg.param("expected", None)
    if exp is None:
        return None
    exp = exp if isinstance(exp, list) else [exp]
    if len(exp) != n:
        raise ConcatError("params.expected: needs one value per test function")
    return [float(e) for e in exp]


def cmd_simulate(run: _Run):
    cfg = run.cfg
    plan = cfg.require_plan()
    start = _start(cfg)
    n_trace = int(cfg.param("trace", 10))
    lines = ["path_id,time,tag,state"]
    trace_rng = run.rng.spawn(1)
    for i in range(n_trace):
        cp = sample_concatenated(plan, start, trace_rng.child(i))
        for pid, t, tag, state in concat_path_rows(cp, i):
            lines.append(f"{pid},{t!r},{tag},{state}")
    run.extra_files["simulate_paths.csv"] = "\n".join(lines) + "\n"
    n = int(cfg.param("samples", 1000))
    rep, hits = mc_lifetime(plan, start, n, run.rng, workers=run.workers, truncation=True)
    exp = cfg.param("expected_lifetime", None)
    rel = float(cfg.param("relative_tolerance", 0.05))
    passed = None if exp is None else abs(rep.value - exp) <= rel * abs(exp)
    run.add("lifetime", rep, passed)
    run.add("truncation_hit_rate", hits, None)


def _estimate_cmd(run: _Run, kind: str):
    cfg = run.cfg
    plan = cfg.require_plan()
    fs = _functions(cfg)
    n = int(cfg.param("samples", 10000))
    if kind == "resolvent":
        param = float(cfg.param("alpha"))
        reps = mc_resolvent(plan, _start(cfg), param, fs, n, run.rng, workers=run.workers)
    else:
        param = float(cfg.param("time"))
        reps = mc_semigroup(plan, _start(cfg), param, fs, n, run.rng, workers=run.workers)
    targets = _expected(cfg, len(fs))
    if targets is None and cfg.param("oracle", True):
        targets = _oracle_values(cfg, kind, fs, param)
    for j, (f, rep) in enumerate(zip(fs, reps)):
        passed = None if targets is None else rep.within(targets[j], run.sigma) and not rep.flagged
        run.add(_fname(f), rep, passed)


def cmd_resolvent(run):
    _estimate_cmd(run, "resolvent")


def cmd_semigroup(run):
    _estimate_cmd(run, "semigroup")


def _stopping(cfg: ExperimentConfig):
    doc = cfg.param("stopping", {"revival": 1})
    if isinstance(doc, dict) and "revival" in doc:
        return RevivalStop(int(doc["revival"]))
    if isinstance(doc, dict) and "entry" in doc:
        return EntryStop(Region.of_labels(doc["entry"], doc.get("tag")))
    raise ConcatError(f"params.stopping: expected {{'revival': n}} or {{'entry': [...]}}, got {doc!r}")


def _continuation(cfg: ExperimentConfig):
    doc = cfg.param("continuation", "oracle")
    if doc == "oracle":
        return "oracle"
    if isinstance(doc, dict) and "nested" in doc:
        return ("nested", int(doc["nested"]))
    raise ConcatError(f"params.continuation: expected 'oracle' or {{'nested': M}}, got {doc!r}")


def cmd_check_dynkin(run: _Run):
    cfg = run.cfg
    plan = cfg.require_plan()
    n = int(cfg.param("samples", 10000))
    alpha = float(cfg.param("alpha"))
    stopping, cont = _stopping(cfg), _continuation(cfg)
    for k, f in enumerate(_functions(cfg)):
        rep = dynkin_residual(plan, _start(cfg), stopping, alpha, f, n, run.rng.child(k), cont, workers=run.workers)
        run.add(_fname(f), rep, rep.within(0.0, run.sigma))


def cmd_check_revival(run: _Run):
    cfg = run.cfg
    plan = cfg.require_plan()
    n = int(cfg.param("samples", 10000))
    rev = int(cfg.param("revival", 1))
    times = [float(t) for t in cfg.param("g_times", [])]
    gs = _functions(cfg, "g") if "g" in cfg.params else []
    fs = _functions(cfg)
    reps = revival_formula_test(plan, _start(cfg), rev, fs, (times, gs), n, run.rng, run.workers)
    for f, rep in zip(fs, reps):
        name = _fname(f)
        run.add(f"gap:{name}", rep.gap, rep.passed(run.sigma))
        run.add(f"lhs:{name}", rep.lhs, None)
        run.add(f"rhs:{name}", rep.rhs, None)


def cmd_check_pasting(run: _Run):
    cfg = run.cfg
    if cfg.pasting is None:
        raise ConcatError("pasting: this command needs a 'pasting' section")
    alpha = float(cfg.param("alpha"))
    engine_doc = cfg.param("engine", "oracle")
    if isinstance(engine_doc, dict) and "monte_carlo" in engine_doc:
        engine = ("monte_carlo", int(engine_doc["monte_carlo"]))
    elif engine_doc == "oracle":
        engine = "oracle"
    else:
        raise ConcatError(f"params.engine: expected 'oracle' or {{'monte_carlo': N}}, got {engine_doc!r}")
    fs = cfg.function("f", None)
    fs = None if fs is None else (fs if isinstance(fs, list) else [fs])
    rep = check_consistency(
        cfg.pasting,
        alpha,
        fs,
        engine=engine,
        rng=run.rng,
        sigma=run.sigma,
        tolerance=cfg.param("tolerance", None),
        workers=run.workers,
    )
    n = engine[1] if isinstance(engine, tuple) else 0
    for r in rep.residuals:
        run.add_raw(f"{r.condition}:{r.point}:{r.function}", r.value, None, n, r.passed if r.condition != "projection" else None)
    # individual residual failures are informative; the verdict decides the exit code
    run.failed = not rep.passed
    run.add_raw("verdict:" + rep.route, 0.0, None, n, rep.passed)
    run.extra_files["check-pasting.json"] = rep.to_json() + "\n"


def cmd_check_projection(run: _Run):
    cfg = run.cfg
    plan = cfg.require_plan()
    alpha = float(cfg.param("alpha"))
    n = int(cfg.param("samples", 10000))
    f = cfg.function("f", {"const": 1.0})
    if isinstance(f, list):
        raise ConcatError("params.f: check-projection takes a single function")
    points = cfg.param("points", None)
    if points is None:
        if cfg.pasting is None:
            raise ConcatError("params.points: needed when there is no pasting section")
        points = list(cfg.pasting.shared.labels())
    rep = projection_criterion_test(
        plan, alpha, f, points, n, run.rng, int(cfg.param("n_odd", 1)), int(cfg.param("n_even", 2)), run.sigma, run.workers
    )
    for pr in rep.points:
        if pr.status != "tested":
            run.add_raw(f"{pr.point}:{pr.status}", 0.0, None, 0, None)
            continue
        run.add_raw(f"{pr.point}:difference", pr.difference, pr.pooled_stderr, n, pr.passed)


def cmd_invert_laplace(run: _Run):
    cfg = run.cfg
    t = float(cfg.param("time"))
    ks = cfg.param("k", 64)
    ks = ks if isinstance(ks, list) else [ks]
    rel = float(cfg.param("relative_tolerance", 0.02))
    source = cfg.param("laplace", None)
    cases = []
    if isinstance(source, dict) and "rate" in source:
        rate = float(source["rate"])
        cases.append((f"rate={rate!r}", rational_laplace(rate), math.exp(-rate * t)))
    else:
        plan = cfg.require_plan()
        sg = oracle_generator(plan)
        stage, value = _start(cfg)
        i = sg.states.index(SpacePoint(stage, value))
        for f in _functions(cfg):
            cases.append((_fname(f), _ChainEntry(chain_laplace(sg, f), i), float(exact_semigroup(sg, t, f)[i])))
    ks = sorted(int(k) for k in ks)
    for name, oracle, exact in cases:
        errs = []
        for k in ks:
            approx = post_widder_invert(oracle, t, k)
            err = abs(approx - exact) / abs(exact) if exact else abs(approx)
            errs.append(err)
            # smaller orders are reported for the convergence trend; the largest is judged
            run.add_raw(f"{name}:k={k}", approx, None, k, err < rel if k == ks[-1] else None)
            run.add_raw(f"{name}:k={k}:relative_error", err, None, k, None)
        if len(ks) > 1:
            run.add_raw(f"{name}:error_decreases", errs[-1] - errs[0], None, ks[-1], errs[-1] < errs[0])


class _ChainEntry:
    """Derivatives of one entry of a vector-valued transform."""

    def __init__(self, base, i: int):
        self.base, self.i = base, i

    def __call__(self, alpha, k):
        return [float(d[self.i]) for d in self.base(alpha, k)]


HANDLERS = {
    "simulate": cmd_simulate,
    "resolvent": cmd_resolvent,
    "semigroup": cmd_semigroup,
    "check-dynkin": cmd_check_dynkin,
    "check-revival": cmd_check_revival,
    "check-pasting": cmd_check_pasting,
    "check-projection": cmd_check_projection,
    "invert-laplace": cmd_invert_laplace,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="concatmc", description="Concatenation and pasting of killed Markov processes.")
    parser.add_argument("--version", action="version", version=f"concatmc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--time", type=float)
        p.add_argument("--max-revivals", type=int)
        p.add_argument("--horizon", type=float)
        p.add_argument("--tolerance-sigma", type=float)
        p.add_argument("--out-dir")
        p.add_argument("--threads", type=int, default=1, help="worker processes for replication")
        p.add_argument("--quiet", action="store_true", help="do not echo the CSV to stdout")
    return parser


def _out_dir(args, cfg: ExperimentConfig) -> FsPath:
    if args.out_dir:
        return FsPath(args.out_dir)
    if cfg.out_dir:
        return FsPath(cfg.out_dir)
    return FsPath(os.environ.get("CONCATMC_OUT_DIR", DEFAULT_OUT))


def run(command: str, config_path: str, overrides: dict | None = None, out_dir: str | None = None, threads: int = 1, echo=None) -> int:
    """Run one command; returns the exit code."""
    ns = argparse.Namespace(out_dir=out_dir)
    try:
        cfg = load_config(config_path, overrides or {})
        state = _Run(command, cfg, max(1, threads))
        HANDLERS[command](state)
    except (ConcatError, KeyError, TypeError, ValueError) as exc:
        print(f"concatmc {command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    header = [
        f"concatmc {__version__}",
        f"command: {command}",
        f"seed: {cfg.seed}",
        f"tolerance_sigma: {state.sigma!r}",
        f"config: {cfg.resolved_json()}",
    ]
    text = reports_to_csv(state.rows, header)
    dest = _out_dir(ns, cfg)
    dest.mkdir(parents=True, exist_ok=True)
    (dest / f"{command}.csv").write_text(text)
    for name, body in state.extra_files.items():
        (dest / name).write_text(body)
    if echo is not None:
        echo(text)
    return EXIT_FAIL if state.failed else EXIT_PASS


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "samples": args.samples,
        "alpha": args.alpha,
        "time": args.time,
        "max_revivals": args.max_revivals,
        "horizon": args.horizon,
        "tolerance_sigma": args.tolerance_sigma,
    }
    if args.samples is not None and args.samples < 2:
        print(f"concatmc {args.command}: configuration error: --samples must be at least 2", file=sys.stderr)
        return EXIT_CONFIG
    echo = None if args.quiet else (lambda s: sys.stdout.write(s))
    return run(args.command, args.config, overrides, args.out_dir, args.threads, echo)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
