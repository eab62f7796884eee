"""Command line entry point: ``stlnav {run,map,check} SCENARIO``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .export import map_diagnostics, write_run
from .harmonic import HarmonicMap, MapFitError
from .hybrid import Problem, SimulationAbort, simulate, simulate_baseline
from .scenario import Scenario, builtin_scenario_path, load_scenario
from .stl import ScenarioError

log = logging.getLogger("stlnav")


def _scenario(arg: str) -> Scenario:
    path = Path(arg)
    if not path.exists() and not path.suffix:
        path = builtin_scenario_path(arg)
    return load_scenario(path)


def _apply_overrides(sc: Scenario, args) -> Scenario:
    if getattr(args, "dt", None) is not None:
        sc = sc.with_settings(dt=args.dt)
    return sc


def build_transform(sc: Scenario) -> HarmonicMap:
    s = sc.settings
    return HarmonicMap(puncture_guard=s.puncture_guard, **s.map).fit(sc.workspace)


def run(sc: Scenario, mode: str, out_dir) -> tuple[int, dict]:
    """Simulate and write artifacts.  Returns ``(exit_status, summary)``."""
    problem = Problem(sc, build_transform(sc))
    logs = {}
    status = 0
    try:
        if mode in ("hybrid", "both"):
            logs["hybrid"] = simulate(problem)
        if mode in ("baseline", "both"):
            logs["baseline"] = simulate_baseline(problem)
    except SimulationAbort as exc:
        log.error("simulation aborted: %s", exc)
        status = 2
        if exc.log is not None and len(exc.log):
            logs[exc.log.mode] = exc.log
    if not logs:
        return status, {}
    return status, write_run(out_dir, sc, logs)


def dump_transform(sc: Scenario, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    T = build_transform(sc)
    diag = map_diagnostics(T)
    T.save(out / "transform.json")
    reloaded = HarmonicMap.load(out / "transform.json")
    diag["cache_reload_identical"] = bool(
        (reloaded.weights_ == T.weights_).all() and (reloaded.offset_ == T.offset_).all()
        and (reloaded.punctures_ == T.punctures_).all()
    )
    (out / "map_diagnostics.json").write_text(json.dumps(diag, indent=2) + "\n")
    return diag


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stlnav", description="STL motion planning on a harmonic disk map.")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON file or name of a packaged scenario")
        sp.add_argument("--out-dir", default="out", help="artifact directory (default: out)")
        sp.add_argument("--seed", type=int, default=0,
                        help="accepted for reproducibility bookkeeping; the loop itself is deterministic")
        sp.add_argument("-v", "--verbose", action="store_true")

    r = sub.add_parser("run", help="simulate a scenario and write trace, summary and plots")
    common(r)
    r.add_argument("--mode", choices=["hybrid", "baseline", "both"], default="hybrid")
    r.add_argument("--dt", type=float, default=None, help="override the integration step")
    common(sub.add_parser("map", help="fit the harmonic map and write diagnostics plus a cache file"))
    common(sub.add_parser("check", help="validate a scenario file only"))
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        sc = _apply_overrides(_scenario(args.scenario), args)
        if args.verb == "check":
            print(f"ok: {len(sc.tasks)} tasks, {len(sc.regions)} regions, {len(sc.workspace.obstacles)} obstacles")
            return 0
        if args.verb == "map":
            diag = dump_transform(sc, args.out_dir)
            print(json.dumps(diag, indent=2))
            return 0
        status, summary = run(sc, args.mode, args.out_dir)
    except (ScenarioError, MapFitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for mode, s in summary.get("runs", {}).items():
        print(f"{mode}: {s['satisfied_count']}/{len(s['verdicts'])} satisfied, {s['jump_count']} jumps, "
              f"{s['timing']['wall_seconds']:.1f} s")
        for tid, v in s["verdicts"].items():
            print(f"  task {tid}: {v}")
    return status


if __name__ == "__main__":
    sys.exit(main())
