"""Command line interface: run single episodes, batch matrices, and reports."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import errors
from .harness import EpisodeConfig, episode_config_from_dict, run_batch, run_episode, write_report


def _load_json(path: str) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise errors.MalformedConfig(f"cannot read config {path}: {exc}") from exc


def _cmd_run(args) -> int:
    cfg_dict = _load_json(args.config) if args.config else {}
    if args.world:
        cfg_dict["world"] = args.world
    if args.method:
        cfg_dict["method"] = args.method
    if args.ablate:
        cfg_dict["ablations"] = [a.strip() for a in args.ablate.split(",") if a.strip()]
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if args.duration is not None:
        cfg_dict["duration"] = args.duration
    if args.out:
        cfg_dict["out_dir"] = args.out
    env_seed = os.environ.get("MONOSPHERES_SEED")
    if env_seed is not None:
        cfg_dict["seed"] = int(env_seed)
    if "world" not in cfg_dict:
        print("error: no world given (config file or --world)", file=sys.stderr)
        return 2
    if isinstance(cfg_dict["world"], str) and not os.path.exists(cfg_dict["world"]) \
            and not cfg_dict["world"].endswith(".json"):
        cfg_dict["world"] = {"generator": cfg_dict["world"], "seed": cfg_dict.get("seed", 0)}
    config = episode_config_from_dict(cfg_dict)
    result = run_episode(config)
    print(json.dumps({
        "world": result.world,
        "method": result.method,
        "ablations": result.ablations,
        "seed": result.seed,
        "explored_area": result.explored_area,
        "explored_volume": result.explored_volume,
        "crashed": result.crashed,
        "crash_time": result.crash_time,
        "mission_complete": result.mission_complete,
    }, indent=2, sort_keys=True))
    return 0


def _cmd_batch(args) -> int:
    matrix = _load_json(args.matrix)
    out_root = args.out or matrix.get("out", "runs")
    env_seed = os.environ.get("MONOSPHERES_SEED")
    if env_seed is not None:
        matrix["seeds"] = [int(env_seed)]
    results = run_batch(matrix, out_root)
    print(f"{len(results)} runs complete; outputs under {out_root}")
    return 0


def _cmd_report(args) -> int:
    out_path = args.out or os.path.join(args.in_dir, "report.md")
    text = write_report(args.in_dir, out_path)
    print(text)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="monospheres",
        description="Sphere-graph mapping and exploration simulator")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="run one episode")
    p_run.add_argument("--config", help="episode config JSON")
    p_run.add_argument("--world", help="world generator name or world spec JSON path")
    p_run.add_argument("--method", choices=["monospheres", "grid", "grid_baseline"])
    p_run.add_argument("--ablate", help="comma list: no_fff,no_dbof,no_ovde,no_vpb")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--duration", type=float, help="simulated seconds")
    p_run.add_argument("--out", help="output directory")
    p_run.set_defaults(func=_cmd_run)

    p_batch = sub.add_parser("batch", help="run a (world x method x seed) matrix")
    p_batch.add_argument("--matrix", required=True, help="matrix JSON file")
    p_batch.add_argument("--out", help="output root directory")
    p_batch.set_defaults(func=_cmd_batch)

    p_rep = sub.add_parser("report", help="summarize run outputs")
    p_rep.add_argument("--in", dest="in_dir", required=True)
    p_rep.add_argument("--out", help="report markdown path")
    p_rep.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except errors.MonospheresError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
