"""Command-line harness: simulate scenarios, run navigation campaigns,
sweep observability and recompute metrics from logged estimates."""

import argparse
import json
import math
import os

import numpy as np

from . import io, observability, pipeline, simulate


def _ensure_out(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _load(args, default=None):
    if args.config is None:
        return dict(default or {})
    return io.load_json(args.config)


def cmd_simulate(args):
    cfg_dict = _load(args)
    scenario = io.scenario_from_dict(cfg_dict) if cfg_dict else simulate.ScenarioConfig()
    if args.seed is not None:
        scenario = scenario.with_(seed=args.seed)
    out = _ensure_out(args)
    truth = simulate.generate_truth(scenario)
    records = simulate.generate_measurements(truth, scenario)
    io.write_truth(os.path.join(out, "truth.csv"), truth)
    io.write_measurements(
        os.path.join(out, "measurements.jsonl"),
        records,
        meta={"config": io.scenario_to_dict(scenario)},
    )
    io.save_json(os.path.join(out, "config_echo.json"), io.scenario_to_dict(scenario))
    print(
        "wrote %d records over %.1f s to %s" % (len(records), scenario.duration, out)
    )
    return 0


def _run_common(args, trials_override=None):
    cfg_dict = _load(args)
    if cfg_dict:
        cfg = io.run_config_from_dict(cfg_dict)
    else:
        cfg = pipeline.RunConfig(scenario=simulate.ScenarioConfig())
    if args.seed is not None:
        cfg.seed = args.seed
    if trials_override is not None:
        cfg.trials = trials_override
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    out = _ensure_out(args)
    io.save_json(os.path.join(out, "config_echo.json"), io.run_config_to_dict(cfg))

    if cfg.mode == pipeline.MODE_USBL_AID:
        report = pipeline.run_usbl_aid_calibration(cfg)
        trials = []
    elif cfg.mode == pipeline.MODE_DEAD_RECKONING:
        report, trials, _ = pipeline.run_dr(cfg)
    else:
        report, trials, _ = pipeline.run_proposed(cfg)
    report.config_echo = io.run_config_to_dict(cfg)
    io.write_metrics(os.path.join(out, "metrics.json"), report)
    for trial in trials:
        if trial.completed:
            io.write_estimates_csv(
                os.path.join(out, "estimates_%03d.csv" % trial.trial), trial
            )
    summary = io.summary_table({cfg.mode: report})
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(summary + "\n")
    print(summary)
    return 0


def cmd_run(args):
    return _run_common(args)


def cmd_campaign(args):
    return _run_common(args, trials_override=args.trials)


def cmd_observability_sweep(args):
    cfg = _load(
        args,
        default={
            "sigma_a_deg": [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            "sigma_r": [0.0, 1.0, 2.0, 3.0, 4.0],
            "n_samples": 100,
            "seed": 0,
        },
    )
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    result = observability.sweep_observability(
        np.radians(cfg["sigma_a_deg"]),
        cfg["sigma_r"],
        n_samples=cfg.get("n_samples", 100),
        seed=seed,
        r_mean=cfg.get("r_mean", 20.0),
    )
    out = _ensure_out(args)
    path = os.path.join(out, "observability_sweep.csv")
    result.write_csv(path)
    print("wrote %s" % path)
    return 0


def cmd_metrics(args):
    est = io.read_estimates_csv(args.estimates)
    truth = io.read_truth(args.truth)
    err = pipeline.trajectory_errors(est["t"], est["pos"], truth)
    beacon_err = float(np.linalg.norm(est["gamma"][-1, :3] - truth.beacon))
    align_err = np.degrees(est["gamma"][-1, 3:] - truth.misalignment)
    payload = {
        "schema": io.METRICS_SCHEMA,
        "position_rmse": float(np.sqrt(np.mean(err**2))),
        "final_position_error": float(err[-1]),
        "max_position_error": float(np.max(err)),
        "beacon_error": beacon_err,
        "alignment_error_deg": [float(v) for v in align_err],
    }
    out = _ensure_out(args)
    io.save_json(os.path.join(out, "metrics.json"), payload)
    print(json.dumps(payload, indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="auvnav",
        description="Passive-acoustic AUV navigation, beacon localization "
        "and array alignment harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a scenario's truth and stream")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("run", help="run a navigation method per RunConfig")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--mode",
        choices=[
            pipeline.MODE_PROPOSED,
            pipeline.MODE_DEAD_RECKONING,
            pipeline.MODE_USBL_AID,
        ],
        default=None,
    )
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("campaign", help="Monte Carlo campaign")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--mode",
        choices=[
            pipeline.MODE_PROPOSED,
            pipeline.MODE_DEAD_RECKONING,
            pipeline.MODE_USBL_AID,
        ],
        default=None,
    )
    p.set_defaults(fn=cmd_campaign)

    p = sub.add_parser(
        "observability-sweep", help="singular-value-ratio study over geometry"
    )
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_observability_sweep)

    p = sub.add_parser("metrics", help="recompute metrics from logged estimates")
    p.add_argument("--estimates", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_metrics)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
