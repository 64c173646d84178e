#!/usr/bin/env python3
"""Collision-count sweep over methods, swarm sizes, noise presets and levels.

Runs `swarmcco run` once per grid cell, validates every summary.json against
schema/summary.schema.json (when the jsonschema package is installed) and
collects the collision counts into one CSV.

The deterministic planner ignores the confidence level, so it runs once per
noise preset and its row is repeated for both levels in the table.
"""

import argparse
import csv
import json
import os
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
METHODS = ["deterministic", "gaussian", "gmm2", "gmm3"]
AGENTS = [2, 4, 6, 8, 10]
NOISES = ["sigma1", "sigma2"]
DELTAS = [0.75, 0.9]


def cells(methods, agents, noises, deltas):
    for noise in noises:
        for method in methods:
            levels = deltas[:1] if method == "deterministic" else deltas
            for delta in levels:
                for n in agents:
                    yield noise, method, delta, n


def validator():
    try:
        import jsonschema
    except ImportError:
        return None
    schema_dir = ROOT / "schema"
    summary = json.loads((schema_dir / "summary.schema.json").read_text())
    scenario = json.loads((schema_dir / "scenario.schema.json").read_text())
    try:
        from referencing import Registry, Resource

        registry = Registry().with_resource(scenario["$id"], Resource.from_contents(scenario))
        return jsonschema.Draft202012Validator(summary, registry=registry)
    except ImportError:
        resolver = jsonschema.RefResolver.from_schema(summary, store={scenario["$id"]: scenario})
        return jsonschema.Draft202012Validator(summary, resolver=resolver)


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--binary", default=str(ROOT / "target" / "release" / "swarmcco"))
    p.add_argument("--out", required=True, help="sweep directory (one sub-directory per cell)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", nargs="+", default=METHODS)
    p.add_argument("--agents", nargs="+", type=int, default=AGENTS)
    p.add_argument("--noises", nargs="+", default=NOISES)
    p.add_argument("--deltas", nargs="+", type=float, default=DELTAS)
    p.add_argument("--dry-run", action="store_true", help="print the commands only")
    args = p.parse_args()

    out = Path(args.out)
    check = validator()
    if check is None:
        print("jsonschema not installed; summaries will not be validated", file=sys.stderr)
    rows = []
    for noise, method, delta, n in cells(args.methods, args.agents, args.noises, args.deltas):
        cell = out / noise / f"delta_{delta}" / f"{method}_{n}"
        cmd = [
            args.binary, "run",
            "--method", method, "--agents", str(n), "--noise", noise,
            "--delta", str(delta), "--trials", str(args.trials),
            "--seed", str(args.seed), "--out", str(cell),
        ]
        if args.dry_run:
            print(" ".join(cmd))
            continue
        summary_path = cell / "summary.json"
        if not summary_path.exists():
            code = subprocess.run(cmd, env=os.environ.copy()).returncode
            if code != 0:
                print(f"run failed ({code}): {' '.join(cmd)}", file=sys.stderr)
                return 1
        summary = json.loads(summary_path.read_text())
        if check is not None:
            errors = sorted(check.iter_errors(summary), key=lambda e: list(e.path))
            if errors:
                print(f"{summary_path}: {errors[0].message}", file=sys.stderr)
                return 1
        s = summary["summary"]
        levels = args.deltas if method == "deterministic" else [delta]
        for level in levels:
            rows.append({
                "noise": noise, "delta": level, "method": method, "agents": n,
                "trials": s["trials"], "collision_trials": s["collision_trials"],
                "unsafe_trials": s["unsafe_trials"], "mean_path_length": s["mean_path_length"],
                "mean_time_to_goal": s["mean_time_to_goal"],
            })
    if args.dry_run:
        return 0
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep_v1.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()) if rows else ["noise"])
        w.writeheader()
        w.writerows(rows)
    print(f"{len(rows)} rows written to {out / 'sweep_v1.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
