"""File formats: line-delimited measurement streams, ground-truth CSV,
JSON configs and metrics. Every format carries a schema tag so readers can
reject files from incompatible versions.
"""

import csv
import dataclasses
import json

import numpy as np

from . import pipeline, simulate
from .models import MeasurementRecord, NoiseSpec
from .ukf import UkfParams

MEASUREMENT_SCHEMA = "auvnav.measurements/1"
TRUTH_SCHEMA = "auvnav.truth/1"
CONFIG_SCHEMA = "auvnav.config/1"
METRICS_SCHEMA = "auvnav.metrics/1"

_TRUTH_COLUMNS = (
    "t,px,py,pz,roll,pitch,yaw,vx,vy,vz,ax,ay,az,wx,wy,wz"
)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if dataclasses.is_dataclass(obj):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# -- measurement streams -------------------------------------------------


def write_measurements(path, records, meta=None):
    """One JSON object per line; line 1 is the schema/meta header."""
    header = {"schema": MEASUREMENT_SCHEMA}
    if meta:
        header["meta"] = _jsonable(meta)
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for r in records:
            row = {
                "t": r.t,
                "kind": r.kind,
                "values": r.values.tolist(),
                "noise": [
                    {
                        "family": n.family,
                        "location": n.location,
                        "scale": n.scale,
                        "dof": n.dof,
                    }
                    for n in r.noise
                ],
            }
            if r.corrupted:
                row["corrupted"] = True
            fh.write(json.dumps(row) + "\n")


def read_measurements(path):
    """Returns ``(records, meta)``."""
    cache = {}

    def spec(d):
        key = (d["family"], d["location"], d["scale"], d.get("dof", 2.0))
        if key not in cache:
            cache[key] = NoiseSpec(*key)
        return cache[key]

    records = []
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != MEASUREMENT_SCHEMA:
            raise ValueError("unexpected measurement schema: %r" % header.get("schema"))
        for line in fh:
            row = json.loads(line)
            records.append(
                MeasurementRecord(
                    t=float(row["t"]),
                    kind=row["kind"],
                    values=np.array(row["values"], dtype=float),
                    noise=tuple(spec(d) for d in row["noise"]),
                    corrupted=bool(row.get("corrupted", False)),
                )
            )
    return records, header.get("meta")


# -- ground truth ---------------------------------------------------------


def write_truth(path, truth):
    meta = {
        "beacon": truth.beacon.tolist(),
        "misalignment": truth.misalignment.tolist(),
    }
    if truth.config is not None:
        meta["config"] = scenario_to_dict(truth.config)
    with open(path, "w") as fh:
        fh.write("# schema=%s\n" % TRUTH_SCHEMA)
        fh.write("# meta=%s\n" % json.dumps(_jsonable(meta)))
        fh.write(_TRUTH_COLUMNS + "\n")
        for t, row in zip(truth.t, truth.states):
            fh.write(
                "%.6f," % t + ",".join("%.9g" % v for v in row) + "\n"
            )


def read_truth(path):
    with open(path) as fh:
        schema_line = fh.readline().strip()
        if schema_line != "# schema=%s" % TRUTH_SCHEMA:
            raise ValueError("unexpected truth schema line: %r" % schema_line)
        meta = json.loads(fh.readline().strip()[len("# meta="):])
        fh.readline()  # column header
        data = np.loadtxt(fh, delimiter=",")
    config = None
    if "config" in meta:
        config = scenario_from_dict(meta["config"])
    return simulate.GroundTruthLog(
        t=data[:, 0],
        states=data[:, 1:16],
        beacon=np.array(meta["beacon"]),
        misalignment=np.array(meta["misalignment"]),
        config=config,
    )


# -- configs --------------------------------------------------------------


def scenario_to_dict(config):
    d = _jsonable(config)
    d["schema"] = CONFIG_SCHEMA
    return d


def scenario_from_dict(d):
    d = dict(d)
    d.pop("schema", None)
    traj = simulate.TrajectoryConfig(**{
        k: (tuple(v) if isinstance(v, list) else v)
        for k, v in d.pop("trajectory", {}).items()
    })
    outages = tuple(
        simulate.OutageWindow(**w) for w in d.pop("outages", ())
    )
    outliers = simulate.OutlierConfig(**d.pop("outliers", {}))
    for key in ("beacon_true", "base_misalignment"):
        if key in d and isinstance(d[key], list):
            d[key] = tuple(d[key])
    return simulate.ScenarioConfig(
        trajectory=traj, outages=outages, outliers=outliers, **d
    )


def run_config_to_dict(cfg):
    d = _jsonable(cfg)
    d["schema"] = CONFIG_SCHEMA
    d["scenario"] = scenario_to_dict(cfg.scenario)
    return d


def run_config_from_dict(d):
    d = dict(d)
    d.pop("schema", None)
    scenario = scenario_from_dict(d.pop("scenario"))
    ukf_d = d.pop("ukf", {})
    if ukf_d.get("process_noise") is not None:
        ukf_d["process_noise"] = np.array(ukf_d["process_noise"])
    ukf = UkfParams(**ukf_d)
    init_d = d.pop("init", {})
    ransac = pipeline.RansacOptions(**init_d.pop("ransac", {}))
    nls = pipeline.NlsOptions(**init_d.pop("nls", {}))
    init = pipeline.InitConfig(ransac=ransac, nls=nls, **init_d)
    usbl_d = d.pop("usbl", {})
    for key in ("beacon", "misalignment"):
        if key in usbl_d and isinstance(usbl_d[key], list):
            usbl_d[key] = tuple(usbl_d[key])
    usbl = simulate.UsblCalibConfig(**usbl_d)
    if d.get("initial_cov") is not None:
        d["initial_cov"] = np.array(d["initial_cov"])
    if "disabled_kinds" in d:
        d["disabled_kinds"] = tuple(d["disabled_kinds"])
    return pipeline.RunConfig(
        scenario=scenario, ukf=ukf, init=init, usbl=usbl, **d
    )


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


def save_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2)
        fh.write("\n")


# -- outputs ---------------------------------------------------------------


def write_metrics(path, report):
    payload = {"schema": METRICS_SCHEMA}
    payload.update(report.to_dict())
    save_json(path, payload)


def write_estimates_csv(path, trial):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "t", "px", "py", "pz", "std_px", "std_py", "std_pz",
                "beacon_x", "beacon_y", "beacon_z",
                "mis_roll", "mis_pitch", "mis_yaw",
            ]
        )
        for i, t in enumerate(trial.t):
            writer.writerow(
                ["%.6f" % t]
                + ["%.9g" % v for v in trial.pos[i]]
                + ["%.9g" % v for v in trial.pos_std[i]]
                + ["%.9g" % v for v in trial.gamma_log[i]]
            )


def read_estimates_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    data = np.atleast_2d(data)
    return {
        "t": data[:, 0],
        "pos": data[:, 1:4],
        "pos_std": data[:, 4:7],
        "gamma": data[:, 7:13],
    }


def summary_table(reports):
    """Plain-text accuracy table (one block per labeled report)."""
    lines = []
    lines.append(
        "%-12s %-6s %-34s %s" % ("Method", "", "Beacon location [m]", "Alignment [deg]")
    )
    for label, rep in reports.items():
        mean_b = ", ".join("%.2f" % v for v in rep.beacon_mean) if rep.beacon_mean else "-"
        mean_a = (
            ", ".join("%.2f" % v for v in rep.alignment_mean_deg)
            if rep.alignment_mean_deg
            else "-"
        )
        lines.append("%-12s %-6s [%s]%s[%s]" % (label, "Mean", mean_b, " " * 6, mean_a))
        lines.append(
            "%-12s %-6s %-34.2f %.2f" % ("", "RMSE", rep.beacon_rmse, rep.alignment_rmse_deg)
        )
    return "\n".join(lines)
