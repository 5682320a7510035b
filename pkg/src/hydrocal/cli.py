"""Command-line interface.

Subcommands: synth, simulate, episode, calibrate, bench, select-window,
serve, score-trajectory. Flags are long-form only.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .bench import make_task, run_benchmark, select_event_window, calibration_episode_config
from .calibrators import AGENT_NAMES, best_of_rounds
from .control import format_timestamp, parse_control_file, read_discharge_csv, write_discharge_csv
from .crest import Basin, ForcingSeries, simulate
from .episode import Episode, EpisodeClosedError, EpisodeConfig, ToolRejection, load_trajectory
from .rewards import score_trajectory
from .service import EpisodeService, serve_stdio, serve_tcp
from .synth import SCENARIOS, synth_basin


def _cmd_synth(args) -> int:
    bundle = synth_basin(
        args.out, seed=args.seed, n=args.size, scenario=args.scenario,
        noise_frac=args.noise_frac, cell_size_m=args.cell_size,
    )
    print(json.dumps({
        "control": str(bundle.control_path),
        "gauge_id": bundle.gauge_id,
        "area_km2": bundle.mask.area_km2,
        "cells": int(bundle.mask.member().sum()),
        "true_params": bundle.true_params.to_dict(),
    }, sort_keys=True, indent=2))
    return 0


def _cmd_simulate(args) -> int:
    cfg = parse_control_file(args.control)
    basin = Basin.from_config(cfg)
    forcing = ForcingSeries.from_csv(
        cfg.resolve(cfg.precip_csv), cfg.resolve(cfg.pet_csv)
    )
    hydro = simulate(basin, forcing, cfg.params,
                     window=(cfg.window_start, cfg.window_end),
                     dt_hours=cfg.timestep_hours)
    if args.out:
        write_discharge_csv(args.out, hydro.timestamps, hydro.q_sim)
    summary = {"ledger": hydro.ledger.to_dict(),
               "closure_error": hydro.ledger.relative_closure_error(),
               "steps": len(hydro.timestamps)}
    try:
        stamps, values = read_discharge_csv(cfg.resolve(cfg.obs_csv))
        obs_by_time = dict(zip(stamps, values))
        if all(t in obs_by_time for t in hydro.timestamps):
            from .metrics import nse

            obs = [obs_by_time[t] for t in hydro.timestamps]
            summary["nse"] = nse(obs, hydro.q_sim)
    except (OSError, ValueError):
        pass
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def _cmd_episode(args) -> int:
    """Interactive stdio tool loop for a scripted driver.

    Reads one JSON object per line: {"tool": <name>, "args": {...}}; tools are
    set_parameters, run_simulation, evaluate, parse_failure, plus status and
    score. Responds one JSON line per request.
    """
    cfg = EpisodeConfig(
        control_path=args.control,
        target_nse=args.target,
        max_turns=args.max_turns,
        no_improve_rounds=args.no_improve_rounds,
        improvement_epsilon=args.improvement_epsilon,
    )
    ep = Episode(cfg)
    print(json.dumps({"ready": True, "gauge_id": ep.gauge_id,
                      "target_nse": ep.target_nse}, sort_keys=True), flush=True)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            tool = request.get("tool")
            if tool == "set_parameters":
                result = ep.set_parameters(request.get("args", {}))
            elif tool == "run_simulation":
                result = ep.run_simulation()
            elif tool == "evaluate":
                result = ep.evaluate()
            elif tool == "parse_failure":
                result = ep.parse_failure()
            elif tool == "status":
                result = ep.status_payload()
            elif tool == "score":
                result = ep.reward_trace().to_dict()
            else:
                print(json.dumps({"ok": False, "error": f"unknown tool {tool!r}"},
                                 sort_keys=True), flush=True)
                continue
            print(json.dumps({"ok": True, "result": result}, sort_keys=True),
                  flush=True)
        except ToolRejection as rej:
            print(json.dumps({"ok": False, "error": rej.reason, "code": rej.code},
                             sort_keys=True), flush=True)
        except EpisodeClosedError as e:
            print(json.dumps({"ok": False, "error": str(e),
                              "code": "episode_closed"}, sort_keys=True), flush=True)
        except json.JSONDecodeError as e:
            print(json.dumps({"ok": False, "error": f"bad JSON: {e}"},
                             sort_keys=True), flush=True)
    if args.trajectory:
        ep.export_trajectory(args.trajectory)
    return 0


def _cmd_calibrate(args) -> int:
    def factory() -> Episode:
        return Episode(calibration_episode_config(
            args.control, args.budget, target_nse=args.target,
        ))

    sweeps = args.sweeps if args.sweeps else 1
    rounds = args.budget // sweeps
    run = best_of_rounds(factory, args.agent, rounds=rounds, sweeps=sweeps,
                         seed=args.seed, r=args.perturbation)
    print(json.dumps(run.to_dict(), sort_keys=True, indent=2))
    return 0


def _cmd_bench(args) -> int:
    tasks = [make_task(path, split=args.split) for path in args.control]
    agents = args.agents.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    report = run_benchmark(tasks, agents, rounds=args.rounds, sweeps=args.sweeps,
                           seeds=seeds, max_workers=args.workers)
    if args.out:
        Path(args.out).write_text(report.to_json())
    print(report.to_table())
    return 0


def _cmd_select_window(args) -> int:
    stamps, values = read_discharge_csv(args.obs)
    start, end, score = select_event_window(stamps, values,
                                            window_days=args.window_days)
    print(json.dumps({
        "start": format_timestamp(start),
        "end": format_timestamp(end),
        "score": score,
    }, sort_keys=True, indent=2))
    return 0


def _cmd_serve(args) -> int:
    service = EpisodeService(root=args.root, gate_width=args.gate_width)
    if args.mode == "stdio":
        serve_stdio(service)
        return 0
    serve_tcp(args.host, args.port, service)
    return 0


def _cmd_score_trajectory(args) -> int:
    events, summary = load_trajectory(args.trajectory)
    target = args.target
    if target is None and summary is not None:
        target = summary.get("tau")
    if target is None:
        print("error: no --target given and the trajectory has no summary line",
              file=sys.stderr)
        return 2
    trace = score_trajectory(events, target)
    print(json.dumps(trace.to_dict(), sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hydrocal",
        description="Rainfall-runoff calibration environment and benchmark harness",
    )
    parser.add_argument("--version", action="version", version=f"hydrocal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic gauge task")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=16, help="cells per side")
    p.add_argument("--scenario", choices=SCENARIOS, default="default")
    p.add_argument("--noise-frac", type=float, default=0.0,
                   help="observation noise as a fraction of mean flow")
    p.add_argument("--cell-size", type=float, default=100.0, help="meters")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("simulate", help="run one simulation from a control file")
    p.add_argument("--control", required=True)
    p.add_argument("--out", help="write the simulated hydrograph CSV here")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("episode", help="interactive stdio tool loop")
    p.add_argument("--control", required=True)
    p.add_argument("--target", type=float, default=None)
    p.add_argument("--max-turns", type=int, default=50)
    p.add_argument("--no-improve-rounds", type=int, default=5)
    p.add_argument("--improvement-epsilon", type=float, default=1e-4)
    p.add_argument("--trajectory", help="write the trajectory JSONL here on EOF")
    p.set_defaults(func=_cmd_episode)

    p = sub.add_parser("calibrate", help="run a reference agent on one gauge")
    p.add_argument("--control", required=True)
    p.add_argument("--agent", choices=AGENT_NAMES, default="dds")
    p.add_argument("--budget", type=int, default=200, help="simulation budget")
    p.add_argument("--sweeps", type=int, default=0,
                   help="sweeps per round for the curve (default: 1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target", type=float, default=None)
    p.add_argument("--perturbation", type=float, default=0.2,
                   help="DDS perturbation fraction")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("bench", help="run the best-of-rounds benchmark panel")
    p.add_argument("--control", action="append", required=True,
                   help="control file; repeat for more gauges")
    p.add_argument("--agents", default="dds,random_search")
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--sweeps", type=int, default=10)
    p.add_argument("--seeds", default="0")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("select-window", help="pick the best flood-event window")
    p.add_argument("--obs", required=True, help="gauge observation CSV")
    p.add_argument("--window-days", type=int, default=60)
    p.set_defaults(func=_cmd_select_window)

    p = sub.add_parser("serve", help="serve episodes over newline-delimited JSON")
    p.add_argument("--mode", choices=("tcp", "stdio"), default="tcp")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8431)
    p.add_argument("--root", default=".", help="base directory for control paths")
    p.add_argument("--gate-width", type=int, default=32,
                   help="max concurrent simulations")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("score-trajectory", help="score a trajectory JSONL file")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--target", type=float, default=None,
                   help="target NSE; default comes from the trailing summary")
    p.set_defaults(func=_cmd_score_trajectory)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
