"""Command-line driver.

Exit codes: 0 success, 1 a verify check or scenario assertion failed,
2 bad configuration / unknown scenario or suite, 3 numerical failure.
Only the output directory and the thread count may come from the environment
(``CSBOHM_OUT``, ``CSBOHM_THREADS``); everything physical lives in config files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import ConfigError, CSBohmError
from .fields import amplitude
from .propagators import Potential, evolve_window
from .runs import RunConfig, RunManifest, load_config
from .scenarios import (
    RUNNERS,
    SCENARIOS,
    ScenarioConfig,
    _clean,
    apply_overrides,
    build_state,
    default_config,
    run_scenario,
)
from .trajectories import FieldInterpolator, ensemble
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    """argparse usage problems, reported with exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(args, default: str) -> Path:
    base = args.out or os.environ.get("CSBOHM_OUT")
    return Path(base) if base else Path("runs") / default


def _threads(args) -> int:
    raw = args.threads if args.threads is not None else os.environ.get("CSBOHM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"thread count must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"thread count must be positive, got {n}")
    return n


def _warning_rows(caught) -> list:
    return [{"category": w.category.__name__, "message": str(w.message)} for w in caught]


def _load_run_config(args) -> tuple[RunConfig, dict]:
    if not args.config:
        raise ConfigError("--config is required for this command")
    doc = load_config(args.config, args.set)
    if args.seed is not None:
        doc["seed"] = args.seed
    return RunConfig.from_dict(doc), doc


def _evolve_records(cfg: RunConfig):
    g = cfg.make_grid()
    w = cfg.window
    t1, t2, dt, stride = float(w["t1"]), float(w["t2"]), float(w["dt"]), int(w.get("stride", 1))
    V = Potential.from_dict(cfg.potential)
    ri = evolve_window(build_state(cfg.initial, g, t1), V, t1, t2, dt, stride)
    rf = None
    if cfg.final:
        rf = evolve_window(build_state(cfg.final, g, t2), V, t2, t1, dt, stride).chronological()
    return ri, rf


# --- commands --------------------------------------------------------------------------

def cmd_evolve(args) -> int:
    cfg, doc = _load_run_config(args)
    out = _out_dir(args, "evolve")
    man = RunManifest.start("evolve", cfg.to_dict(), [args.config])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ri, rf = _evolve_records(cfg)
    ri.save(out / "initial")
    summary = {"snapshots": len(ri), "boundary_leak_initial": ri.boundary_leak}
    if rf is not None:
        rf.save(out / "final")
        a = [amplitude(f, i).value for i, f in zip(ri, rf)]
        drift = float(np.max(np.abs(np.array(a) - a[0])) / abs(a[0]))
        summary.update({"boundary_leak_final": rf.boundary_leak, "amplitude": a[0], "amplitude_drift": drift})
        (out / "amplitude.csv").write_text(
            "t,re_a,im_a\n" + "".join(f"{float(t)!r},{z.real!r},{z.imag!r}\n" for t, z in zip(ri.times, a)))
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    man.warnings = _warning_rows(caught)
    man.finish(out, True, _clean(summary))
    print(f"evolve: {len(ri)} snapshots written to {out}")
    for w in man.warnings:
        print(f"warning: {w['category']}: {w['message']}", file=sys.stderr)
    return EXIT_OK


def cmd_trajectories(args) -> int:
    cfg, doc = _load_run_config(args)
    out = _out_dir(args, "trajectories")
    man = RunManifest.start("trajectories", cfg.to_dict(), [args.config])
    tr = cfg.trajectories
    mode = tr.get("mode", "time")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ri, rf = _evolve_records(cfg)
        interp = FieldInterpolator.from_records(ri, rf, normalization=tr.get("normalization", "complex"))
        xs = cfg.seed_positions()
        t1 = float(cfg.window["t1"])
        seeds = xs if mode == "time" else [(t1, x) for x in xs]
        kw = {k: float(tr[k]) for k in ("rtol", "atol", "lambda_max") if k in tr}
        res = ensemble(interp, seeds, mode=mode, threads=_threads(args), **kw)
    res.write(out)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    man.warnings = _warning_rows(caught)
    summary = {"mode": mode, "model": interp.model, "lines": len(res.lines), "errors": len(res.errors)}
    man.finish(out, True, summary)
    print(f"trajectories: {len(res.lines) - len(res.errors)}/{len(res.lines)} lines ({mode}, {interp.model}) in {out}")
    return EXIT_OK


def _scenario_config(name: str, args) -> ScenarioConfig:
    if name not in RUNNERS:
        raise ConfigError(f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}")
    doc = load_config(args.config) if args.config else default_config(name)
    doc = apply_overrides(doc, args.set)
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = ScenarioConfig.from_dict(doc)
    if cfg.scenario != name:
        raise ConfigError(f"config is for scenario {cfg.scenario!r}, not {name!r}")
    return cfg


def _run_named_scenario(name: str, args) -> int:
    cfg = _scenario_config(name, args)
    out = _out_dir(args, name)
    man = RunManifest.start(f"scenario:{name}", cfg.to_dict(), [args.config] if args.config else [])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = run_scenario(cfg, out, threads=_threads(args))
    man.warnings = _warning_rows(caught)
    failed = sorted(k for k, v in rep.assertions.items() if not v["passed"])
    man.finish(out, rep.passed, {"assertions": len(rep.assertions), "failed": failed})
    for k in rep.contract:
        print(f"{'PASS' if rep.assertions[k]['passed'] else 'FAIL'}  {name}: {k}")
    print(f"report: {out / 'report.json'}")
    return EXIT_OK if rep.passed else EXIT_FAILED


def cmd_epr(args) -> int:
    return _run_named_scenario("epr-zigzag", args)


def cmd_dirac(args) -> int:
    return _run_named_scenario("dirac-demo", args)


def cmd_scenario(args) -> int:
    if args.action == "list":
        for name in SCENARIOS:
            print(name)
        return EXIT_OK
    if not args.name:
        raise ConfigError("scenario run needs a scenario name")
    return _run_named_scenario(args.name, args)


def cmd_verify(args) -> int:
    if args.suite not in SUITES:
        raise ConfigError(f"unknown suite {args.suite!r}; known: {', '.join(SUITES)}")
    out = _out_dir(args, f"verify-{args.suite}")
    man = RunManifest.start(f"verify:{args.suite}", {"suite": args.suite, "set": list(args.set or [])})

    def show(c):
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  value={json.dumps(_clean(c.value))}"
              + ("" if c.passed else f"  threshold={json.dumps(_clean(c.threshold))}  {c.detail}"), flush=True)

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = run_suite(args.suite, args.set, out=out, seed=args.seed, threads=_threads(args), progress=show)
    res.write(out)
    man.warnings = _warning_rows(caught)
    man.finish(out, res.passed, {"checks": len(res.checks), "failed": [c.name for c in res.checks if not c.passed],
                                 "seconds": {c.name: round(c.seconds, 3) for c in res.checks}})
    print(f"verify {args.suite}: {'PASS' if res.passed else 'FAIL'} ({len(res.checks)} checks)")
    return EXIT_OK if res.passed else EXIT_FAILED


# --- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--out", metavar="DIR", help="output directory (default $CSBOHM_OUT or ./runs/<command>)")
    common.add_argument("--seed", type=int, help="RNG seed override")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path config override; repeatable")
    common.add_argument("--threads", type=int, help="worker threads (default $CSBOHM_THREADS or 1)")

    p = _Parser(prog="csbohm", description="Two-wavefunction Bohmian guidance: runs, scenarios and checks.")
    p.add_argument("--version", action="version", version=f"csbohm {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("evolve", parents=[common], help="evolve an initial/final state pair").set_defaults(func=cmd_evolve)
    sub.add_parser("trajectories", parents=[common], help="integrate a trajectory ensemble").set_defaults(
        func=cmd_trajectories)
    sub.add_parser("epr", parents=[common], help="run the EPR zigzag scenario").set_defaults(func=cmd_epr)
    sub.add_parser("dirac", parents=[common], help="run the Dirac scenario").set_defaults(func=cmd_dirac)
    sc = sub.add_parser("scenario", parents=[common], help="list or run canned scenarios")
    sc.add_argument("action", choices=("list", "run"))
    sc.add_argument("name", nargs="?")
    sc.set_defaults(func=cmd_scenario)
    ve = sub.add_parser("verify", parents=[common], help="run an invariant suite")
    ve.add_argument("suite", help=f"one of: {', '.join(SUITES)}")
    ve.set_defaults(func=cmd_verify)
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"csbohm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"csbohm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CSBohmError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"csbohm: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
