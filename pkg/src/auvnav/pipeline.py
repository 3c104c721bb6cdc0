"""End-to-end experiment harness.

``run_proposed`` executes the two-step method: a dead-reckoning filter
accumulates acoustic constraints, a robust NLS solve initializes the
beacon/misalignment block, and the augmented filter then fuses everything.
``run_dr`` and ``run_usbl_aid_calibration`` are the comparison baselines,
``run_outage_study`` the DVL-outage experiment. Campaigns fan trials out
over worker processes with per-trial seeds derived from the master seed,
so reports are reproducible regardless of worker count.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import groupby

import numpy as np

from . import simulate
from .geometry import euler_to_rotation, wrap_angle
from .initializer import (
    ConstraintAccumulator,
    DegenerateProblemError,
    InitReport,
    NlsOptions,
    NoConsensusError,
    RansacOptions,
    levenberg_marquardt,
    solve_nls,
    solve_ransac,
)
from .models import (
    KIND_AHRS,
    KIND_BEACON_DEPTH,
    KIND_DOA,
    KIND_DOPPLER,
    KIND_DVL,
    KIND_PRESSURE,
    doa_angle_gradients,
    euler_rotation_partials,
)
from .ukf import MODE_DR, NavigationUkf, UkfParams, augment_filter

MODE_PROPOSED = "proposed"
MODE_DEAD_RECKONING = "dr"
MODE_USBL_AID = "usbl_aid_calibration"

_DR_KINDS = (KIND_AHRS, KIND_DVL, KIND_PRESSURE)
_ACOUSTIC_KINDS = (KIND_BEACON_DEPTH, KIND_DOA, KIND_DOPPLER)


@dataclass
class InitConfig:
    min_constraints: int = 12
    min_svd_ratio: float = 1e-6
    prior_beacon_std: float = 50.0
    prior_misalign_std: float = math.radians(10.0)
    use_ransac: bool = True
    ransac: RansacOptions = field(default_factory=RansacOptions)
    nls: NlsOptions = field(default_factory=NlsOptions)
    gamma_cov_inflation: float = 2.0
    # a failed solve retries with a longer window until this cap (seconds)
    max_window: float = 600.0


def default_initial_cov():
    """Initial covariance of the 15-dim vehicle state."""
    return np.diag(
        [0.1**2] * 3
        + [math.radians(0.5) ** 2] * 2
        + [math.radians(1.0) ** 2]
        + [0.05**2] * 3
        + [0.05**2] * 3
        + [0.005**2] * 3
    )


@dataclass
class RunConfig:
    scenario: simulate.ScenarioConfig
    mode: str = MODE_PROPOSED
    ukf: UkfParams = field(default_factory=UkfParams)
    init: InitConfig = field(default_factory=InitConfig)
    usbl: simulate.UsblCalibConfig = field(default_factory=simulate.UsblCalibConfig)
    trials: int = 1
    seed: int = 0
    estimate_stride: float = 1.0
    estimate_misalignment: bool = True
    disabled_kinds: tuple = ()
    initial_cov: np.ndarray = None
    workers: int = None
    # the dead-reckoning baseline integrates AHRS attitude + DVL velocity;
    # its AHRS acceleration channel is withheld unless set to "full"
    dr_ahrs_channels: str = "attitude_rate"
    # constant angle added to every DoA bearing after generation
    bearing_offset: float = 0.0


@dataclass
class TrialResult:
    trial: int
    seed: int
    completed: bool
    failure: str = None
    t: np.ndarray = None  # logged sample times
    pos: np.ndarray = None  # estimated positions at sample times
    pos_std: np.ndarray = None
    gamma: np.ndarray = None  # final [beacon, misalignment]
    gamma_log: np.ndarray = None
    gate_counts: dict = field(default_factory=dict)
    jitter_events: int = 0
    init_report: InitReport = None


@dataclass
class MetricsReport:
    """Per-trial and aggregate accuracy numbers for a campaign."""

    mode: str
    n_trials: int
    completed: int
    failures: list
    position_rmse: list
    final_position_error: list
    max_position_error: list
    beacon_error: list
    alignment_error_deg: list  # per-trial 3-vectors
    beacon_rmse: float
    alignment_rmse_deg: float
    beacon_mean: list
    alignment_mean_deg: list
    gate_counts: dict
    init_window: list
    config_echo: dict = None

    @property
    def mean_final_position_error(self):
        return float(np.mean(self.final_position_error)) if self.final_position_error else float("nan")

    @property
    def median_final_position_error(self):
        return float(np.median(self.final_position_error)) if self.final_position_error else float("nan")

    def to_dict(self):
        out = {
            "mode": self.mode,
            "n_trials": self.n_trials,
            "completed": self.completed,
            "failures": list(self.failures),
            "position_rmse": list(map(float, self.position_rmse)),
            "final_position_error": list(map(float, self.final_position_error)),
            "max_position_error": list(map(float, self.max_position_error)),
            "beacon_error": list(map(float, self.beacon_error)),
            "alignment_error_deg": [list(map(float, e)) for e in self.alignment_error_deg],
            "beacon_rmse": float(self.beacon_rmse),
            "alignment_rmse_deg": float(self.alignment_rmse_deg),
            "beacon_mean": list(map(float, self.beacon_mean)),
            "alignment_mean_deg": list(map(float, self.alignment_mean_deg)),
            "gate_counts": self.gate_counts,
            "init_window": list(map(float, self.init_window)),
        }
        if self.config_echo is not None:
            out["config_echo"] = self.config_echo
        return out


def trial_seeds(master_seed, n_trials):
    """Deterministic (scenario, solver) seed pairs per trial."""
    pairs = []
    for i in range(n_trials):
        children = np.random.SeedSequence(master_seed, spawn_key=(i,)).spawn(2)
        pairs.append(
            (
                int(children[0].generate_state(1)[0]),
                int(children[1].generate_state(1)[0]),
            )
        )
    return pairs


def trajectory_errors(est_t, est_pos, truth):
    """Position error samples of an estimate log against the truth."""
    idx = np.round(np.asarray(est_t) * truth.config.ahrs_rate).astype(int)
    idx = np.clip(idx, 0, len(truth.t) - 1)
    err = np.linalg.norm(np.asarray(est_pos) - truth.states[idx, 0:3], axis=1)
    return err


def _run_navigation_trial(scenario, cfg, mode, trial, scen_seed, solver_seed):
    scenario = replace(scenario, seed=scen_seed)
    truth = simulate.generate_truth(scenario)
    records = simulate.generate_measurements(truth, scenario)
    if cfg.bearing_offset != 0.0:
        records = simulate.apply_bearing_offset(records, cfg.bearing_offset)
    if cfg.disabled_kinds:
        records = [r for r in records if r.kind not in cfg.disabled_kinds]

    x0 = truth.states[0].copy()
    P0 = cfg.initial_cov if cfg.initial_cov is not None else default_initial_cov()
    filt = NavigationUkf(x0, P0, params=cfg.ukf, t=0.0, mode=MODE_DR)

    acc = None
    init_report = None
    if mode == MODE_PROPOSED:
        prior_mis_std = (
            cfg.init.prior_misalign_std if cfg.estimate_misalignment else 1e-9
        )
        acc = ConstraintAccumulator(
            min_constraints=cfg.init.min_constraints,
            min_svd_ratio=cfg.init.min_svd_ratio,
            prior_beacon_std=cfg.init.prior_beacon_std,
            prior_misalign_std=prior_mis_std,
        )

    stride = cfg.estimate_stride
    n_log = int(math.floor(scenario.duration / stride + 1e-9)) + 1
    log_t = np.arange(n_log) * stride
    log_pos = np.zeros((n_log, 3))
    log_pos_std = np.zeros((n_log, 3))
    log_gamma = np.zeros((n_log, 6))
    log_i = 0
    initialized = False
    next_attempt_doa = 0

    def log_through(t_now):
        nonlocal log_i
        while log_i < n_log and log_t[log_i] <= t_now + 1e-9:
            log_pos[log_i] = filt.mean[0:3]
            log_pos_std[log_i] = filt.marginal_std()[0:3]
            log_gamma[log_i] = filt.gamma()
            log_i += 1

    reduced_ahrs = (
        mode == MODE_DEAD_RECKONING and cfg.dr_ahrs_channels == "attitude_rate"
    )

    for t_now, group in groupby(records, key=lambda r: r.t):
        filt.predict_to(t_now)
        for rec in group:
            if rec.kind in _DR_KINDS:
                if reduced_ahrs and rec.kind == KIND_AHRS:
                    filt.update_ahrs_attitude_rate(
                        rec.values[:6], rec.variance_vector()[:6]
                    )
                else:
                    filt.update(rec)
            elif mode == MODE_PROPOSED:
                if initialized:
                    filt.update(rec)
                else:
                    acc.add(rec, filt.nav_state())
                    if (
                        rec.kind == KIND_DOA
                        and acc.n_doa >= next_attempt_doa
                        and acc.ready()
                    ):
                        problem = acc.build_problem()
                        try:
                            if cfg.init.use_ransac:
                                r_opts = replace(cfg.init.ransac, seed=solver_seed)
                                sol = solve_ransac(problem, r_opts, cfg.init.nls)
                            else:
                                sol = solve_nls(problem, cfg.init.nls)
                        except (NoConsensusError, DegenerateProblemError) as exc:
                            w0, w1 = acc.window()
                            if w1 - w0 < cfg.init.max_window:
                                # widen the window before the next attempt
                                next_attempt_doa = acc.n_doa + 5
                                continue
                            return TrialResult(
                                trial, scen_seed, False, failure=str(exc)
                            )
                        filt = augment_filter(
                            filt,
                            sol.gamma,
                            cfg.init.gamma_cov_inflation * sol.cov_estimate,
                            estimate_misalignment=cfg.estimate_misalignment,
                        )
                        w0, w1 = acc.window()
                        init_report = InitReport(
                            t_start=w0,
                            t_end=w1,
                            gamma=sol.gamma,
                            cov=sol.cov_estimate,
                            n_constraints=len(problem.constraints),
                            n_inliers=int(np.count_nonzero(sol.inlier_mask)),
                            iterations=sol.iterations,
                            converged=sol.converged,
                            final_cost=sol.final_cost,
                        )
                        initialized = True
        log_through(filt.t)
    log_through(scenario.duration)

    return TrialResult(
        trial=trial,
        seed=scen_seed,
        completed=True,
        t=log_t[:log_i],
        pos=log_pos[:log_i],
        pos_std=log_pos_std[:log_i],
        gamma=filt.gamma(),
        gamma_log=log_gamma[:log_i],
        gate_counts=filt.update_counts,
        jitter_events=filt.jitter_events,
        init_report=init_report,
    )


def _navigation_worker(args):
    scenario, cfg, mode, trial, scen_seed, solver_seed = args
    return _run_navigation_trial(scenario, cfg, mode, trial, scen_seed, solver_seed)


def _run_trials(cfg, mode):
    seeds = trial_seeds(cfg.seed, cfg.trials)
    jobs = [
        (cfg.scenario, cfg, mode, i, s, r) for i, (s, r) in enumerate(seeds)
    ]
    if cfg.trials == 1 or cfg.workers == 1:
        return [_navigation_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(_navigation_worker, jobs))


def compute_metrics(trials, truth, mode="proposed", config_echo=None):
    """Aggregate a set of trial results against the shared ground truth.

    Beacon RMSE is the root mean square of the per-trial Euclidean beacon
    errors; alignment RMSE pools the per-axis wrapped angle errors (in
    degrees) across trials and axes.
    """
    failures = [t.failure for t in trials if not t.completed]
    done = [t for t in trials if t.completed]
    pos_rmse, final_err, max_err = [], [], []
    beacon_err, align_err, init_window = [], [], []
    beacons, aligns = [], []
    gate_totals = {}
    for t in done:
        err = trajectory_errors(t.t, t.pos, truth)
        pos_rmse.append(float(np.sqrt(np.mean(err**2))))
        final_err.append(float(err[-1]))
        max_err.append(float(np.max(err)))
        beacon_err.append(float(np.linalg.norm(t.gamma[:3] - truth.beacon)))
        align_err.append(
            np.degrees(wrap_angle(t.gamma[3:] - truth.misalignment))
        )
        beacons.append(t.gamma[:3])
        aligns.append(np.degrees(t.gamma[3:]))
        if t.init_report is not None:
            init_window.append(t.init_report.t_end - t.init_report.t_start)
        for kind, counts in t.gate_counts.items():
            agg = gate_totals.setdefault(
                kind, {"applied": 0, "rejected": 0, "degenerate": 0}
            )
            for key, val in counts.items():
                agg[key] += val
    beacon_rmse = (
        float(np.sqrt(np.mean(np.array(beacon_err) ** 2))) if beacon_err else float("nan")
    )
    align_rmse = (
        float(np.sqrt(np.mean(np.concatenate(align_err) ** 2)))
        if align_err
        else float("nan")
    )
    return MetricsReport(
        mode=mode,
        n_trials=len(trials),
        completed=len(done),
        failures=failures,
        position_rmse=pos_rmse,
        final_position_error=final_err,
        max_position_error=max_err,
        beacon_error=beacon_err,
        alignment_error_deg=align_err,
        beacon_rmse=beacon_rmse,
        alignment_rmse_deg=align_rmse,
        beacon_mean=list(np.mean(beacons, axis=0)) if beacons else [],
        alignment_mean_deg=list(np.mean(aligns, axis=0)) if aligns else [],
        gate_counts=gate_totals,
        init_window=init_window,
        config_echo=config_echo,
    )


def run_proposed(cfg):
    """Two-step navigation campaign; returns (report, trials, truth)."""
    trials = _run_trials(cfg, MODE_PROPOSED)
    truth = simulate.generate_truth(cfg.scenario)
    report = compute_metrics(trials, truth, mode=MODE_PROPOSED)
    return report, trials, truth


def run_dr(cfg):
    """Dead-reckoning-only campaign on the same streams."""
    trials = _run_trials(cfg, MODE_DEAD_RECKONING)
    truth = simulate.generate_truth(cfg.scenario)
    report = compute_metrics(trials, truth, mode=MODE_DEAD_RECKONING)
    return report, trials, truth


@dataclass
class OutageStudyResult:
    window: tuple
    t: np.ndarray
    proposed_error: list  # per-trial error arrays over the window
    dr_error: list
    max_proposed: list
    max_dr: list


def run_outage_study(cfg, extract_margin=50.0):
    """Run proposed and DR on identical outage streams and extract the
    estimates around the outage window."""
    if not cfg.scenario.outages:
        raise ValueError("run_outage_study requires an outage window")
    w = cfg.scenario.outages[0]
    lo, hi = w.start - extract_margin, w.end + extract_margin
    _, prop_trials, truth = run_proposed(cfg)
    _, dr_trials, _ = run_dr(cfg)
    t = None
    prop_err, dr_err = [], []
    for trial_p, trial_d in zip(prop_trials, dr_trials):
        if not (trial_p.completed and trial_d.completed):
            continue
        mask = (trial_p.t >= lo) & (trial_p.t <= hi)
        t = trial_p.t[mask]
        prop_err.append(trajectory_errors(trial_p.t, trial_p.pos, truth)[mask])
        dr_err.append(trajectory_errors(trial_d.t, trial_d.pos, truth)[mask])
    return OutageStudyResult(
        window=(lo, hi),
        t=t,
        proposed_error=prop_err,
        dr_error=dr_err,
        max_proposed=[float(np.max(e)) for e in prop_err],
        max_dr=[float(np.max(e)) for e in dr_err],
    )


# -- offline two-step calibration baseline -------------------------------


def usbl_locate_beacon(data, options=None):
    """Offline beacon fix from slant ranges and position fixes."""
    gps, ranges = data.gps, data.ranges
    center = np.mean(gps, axis=0)
    r_mean = float(np.mean(np.linalg.norm(gps[:, :2] - center[None, :2], axis=1)))
    z0 = math.sqrt(max(float(np.mean(ranges)) ** 2 - r_mean**2, 0.25))

    def fun(b):
        d = b - gps
        dist = np.linalg.norm(d, axis=1)
        r = ranges - dist
        J = -d / dist[:, None]
        return r, J

    x0 = np.array([center[0], center[1], z0])
    result = levenberg_marquardt(fun, x0, options or NlsOptions())
    return result.x, result


def usbl_estimate_misalignment(data, beacon, options=None, trim_threshold=5.0):
    """Offline misalignment fit with the beacon held fixed.

    The bearing start value is the median measured-minus-predicted bearing
    (the dominant, wrap-prone component), and one trim-and-refit pass
    drops heavy-tail acoustic outliers that would otherwise distort the
    quadratic fit.
    """
    R_att = euler_to_rotation(data.attitude)
    q = np.einsum("nji,nj->ni", R_att, beacon - data.gps)
    st = max(data.config.tau_bearing, 1e-9)
    se = max(data.config.tau_elevation, 1e-9)
    z = data.doa

    def make_fun(keep):
        qk, zk = q[keep], z[keep]

        def fun(delta):
            A = euler_to_rotation(delta)
            dA = euler_rotation_partials(delta)
            u = qk @ A.T
            n = len(u)
            r = np.zeros(2 * n)
            J = np.zeros((2 * n, 3))
            theta = np.arctan2(u[:, 1], u[:, 0])
            phi = np.arcsin(np.clip(u[:, 2] / np.linalg.norm(u, axis=1), -1, 1))
            r[0::2] = wrap_angle(theta - zk[:, 0]) / st
            r[1::2] = (phi - zk[:, 1]) / se
            for i in range(n):
                dtheta, dphi = doa_angle_gradients(u[i])
                dAq = dA @ qk[i]
                J[2 * i] = (dAq @ dtheta) / st
                J[2 * i + 1] = (dAq @ dphi) / se
            return r, J

        return fun

    yaw0 = float(np.median(wrap_angle(z[:, 0] - np.arctan2(q[:, 1], q[:, 0]))))
    x0 = np.array([0.0, 0.0, yaw0])
    opts = options or NlsOptions()
    keep = np.ones(len(q), dtype=bool)
    result = levenberg_marquardt(make_fun(keep), x0, opts, wrap=wrap_angle)
    r, _ = make_fun(keep)(result.x)
    rows = np.abs(r.reshape(-1, 2))
    keep = np.max(rows, axis=1) < trim_threshold
    if not np.all(keep) and np.count_nonzero(keep) >= 8:
        result = levenberg_marquardt(make_fun(keep), result.x, opts, wrap=wrap_angle)
    return result.x, result


def run_usbl_aid_calibration(cfg):
    """Offline two-step calibration baseline over ``cfg.trials`` runs."""
    seeds = trial_seeds(cfg.seed, cfg.trials)
    beacon_true = np.asarray(cfg.usbl.beacon, dtype=float)
    delta_true = np.asarray(cfg.usbl.misalignment, dtype=float)
    beacon_err, align_err, beacons, aligns, failures = [], [], [], [], []
    for i, (scen_seed, _) in enumerate(seeds):
        data = simulate.generate_usbl_calibration_data(cfg.usbl, seed=scen_seed)
        beacon_est, res1 = usbl_locate_beacon(data)
        delta_est, res2 = usbl_estimate_misalignment(data, beacon_est)
        if not (res1.converged and res2.converged):
            failures.append("trial %d: calibration solve did not converge" % i)
            continue
        beacon_err.append(float(np.linalg.norm(beacon_est - beacon_true)))
        align_err.append(np.degrees(wrap_angle(delta_est - delta_true)))
        beacons.append(beacon_est)
        aligns.append(np.degrees(delta_est))
    beacon_rmse = (
        float(np.sqrt(np.mean(np.array(beacon_err) ** 2))) if beacon_err else float("nan")
    )
    align_rmse = (
        float(np.sqrt(np.mean(np.concatenate(align_err) ** 2)))
        if align_err
        else float("nan")
    )
    return MetricsReport(
        mode=MODE_USBL_AID,
        n_trials=cfg.trials,
        completed=len(beacon_err),
        failures=failures,
        position_rmse=[],
        final_position_error=[],
        max_position_error=[],
        beacon_error=beacon_err,
        alignment_error_deg=align_err,
        beacon_rmse=beacon_rmse,
        alignment_rmse_deg=align_rmse,
        beacon_mean=list(np.mean(beacons, axis=0)) if beacons else [],
        alignment_mean_deg=list(np.mean(aligns, axis=0)) if aligns else [],
        gate_counts={},
        init_window=[],
    )


def run(cfg):
    """Dispatch on ``cfg.mode``."""
    if cfg.mode == MODE_PROPOSED:
        return run_proposed(cfg)[0]
    if cfg.mode == MODE_DEAD_RECKONING:
        return run_dr(cfg)[0]
    if cfg.mode == MODE_USBL_AID:
        return run_usbl_aid_calibration(cfg)
    raise ValueError("unknown mode: %r" % (cfg.mode,))
