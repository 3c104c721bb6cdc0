"""Scenario generator: six-DoF circular survey trajectory, sensor
sampling with per-channel noise, DVL outages, and acoustic outlier
injection.

The ground-truth velocity, acceleration, attitude and angular rate are
closed-form functions of time; positions integrate the discrete process
model exactly, so the logged truth is kinematically consistent with the
filter's propagation at the logging rate.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import body_rate_matrix, euler_to_rotation, wrap_angle
from .models import (
    GAUSSIAN,
    KIND_AHRS,
    KIND_BEACON_DEPTH,
    KIND_DOA,
    KIND_DOPPLER,
    KIND_DVL,
    KIND_ORDER,
    KIND_PRESSURE,
    LOCATION_SCALE_T,
    MeasurementRecord,
    NoiseSpec,
    beacon_in_array_frame,
    predict_doppler,
)

# horizontal circle sized so eight laps cover the nominal survey distance
DEFAULT_PATH_LENGTH = 7051.41
DEFAULT_LAPS = 8


@dataclass
class TrajectoryConfig:
    circle_radius: float = DEFAULT_PATH_LENGTH / (2.0 * math.pi * DEFAULT_LAPS)
    cruise_speed: float = DEFAULT_PATH_LENGTH / 6000.0
    n_laps: float = None  # when set, overrides cruise_speed for the run
    max_speed: float = 1.0  # nominal vehicle rating, recorded with the config
    center: tuple = (0.0, 0.0)
    depth_mean: float = 30.0
    depth_amplitude: float = 5.0
    depth_period: float = 300.0
    roll_amplitude: float = math.radians(10.0)
    roll_period: float = 120.0
    pitch_amplitude: float = math.radians(10.0)
    pitch_period: float = 90.0
    yaw_osc_amplitude: float = 0.0
    yaw_osc_period: float = 60.0


@dataclass
class OutageWindow:
    start: float
    end: float
    kind: str = KIND_DVL


@dataclass
class OutlierConfig:
    """Fraction of DoA records replaced by uniform draws over the full
    bearing/elevation ranges."""

    fraction: float = 0.0


@dataclass
class ScenarioConfig:
    duration: float = 6000.0
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    ahrs_rate: float = 20.0
    dvl_rate: float = 1.0
    pressure_rate: float = 1.0
    acoustic_rate: float = 0.2
    sigma_roll_pitch: float = math.radians(0.4)
    sigma_yaw: float = math.radians(2.0)
    sigma_accel: float = 0.05
    sigma_rate: float = math.radians(0.1)
    sigma_dvl: float = 0.04
    dvl_scale_error: float = 1.005
    sigma_pressure: float = 0.05
    tau_bearing: float = math.radians(1.0)
    tau_elevation: float = math.radians(1.0)
    tau_doppler: float = 0.05
    acoustic_dof: float = 2.0
    sigma_beacon_depth: float = 0.05
    beacon_true: tuple = (-50.0, 20.0, 10.0)
    misalignment_scale: float = 1.0
    base_misalignment: tuple = (
        math.radians(1.0),
        math.radians(2.0),
        math.radians(3.0),
    )
    outages: tuple = ()
    outliers: OutlierConfig = field(default_factory=OutlierConfig)
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValueError("duration must be > 0")
        for rate in (self.ahrs_rate, self.dvl_rate, self.pressure_rate,
                     self.acoustic_rate):
            if rate <= 0.0:
                raise ValueError("sensor rates must be > 0")
        if self.misalignment_scale < 0.0:
            raise ValueError("misalignment scale must be >= 0")
        for w in self.outages:
            if not (0.0 <= w.start <= w.end <= self.duration):
                raise ValueError("outage window outside [0, duration]")
        if not 0.0 <= self.outliers.fraction < 1.0:
            raise ValueError("outlier fraction must be in [0, 1)")

    @property
    def true_misalignment(self):
        return self.misalignment_scale * np.asarray(self.base_misalignment)

    @property
    def beacon(self):
        return np.asarray(self.beacon_true, dtype=float)

    def with_(self, **kwargs):
        return replace(self, **kwargs)


@dataclass
class GroundTruthLog:
    t: np.ndarray  # (N,)
    states: np.ndarray  # (N, 15)
    beacon: np.ndarray  # (3,)
    misalignment: np.ndarray  # (3,)
    config: ScenarioConfig = None

    def index_of(self, t):
        dt = self.t[1] - self.t[0]
        return int(round(t / dt))

    def state_at(self, t):
        return self.states[self.index_of(t)]

    def path_length(self):
        return float(np.sum(np.linalg.norm(np.diff(self.states[:, 0:3], axis=0), axis=1)))


def generate_truth(config):
    """Closed-form trajectory sampled at the AHRS rate.

    Horizontal circle at constant angular rate (cruise speed =
    2*pi*radius*laps/duration), sinusoidal depth, sinusoidal roll/pitch
    superimposed on path-tangent heading. Velocity, acceleration and
    angular rate are the exact derivatives; positions integrate the
    discrete process model so finite differences of the log reproduce the
    logged velocities.
    """
    traj = config.trajectory
    dt = 1.0 / config.ahrs_rate
    n = int(round(config.duration * config.ahrs_rate)) + 1
    t = np.arange(n) * dt

    radius = traj.circle_radius
    if traj.n_laps is not None:
        omega_c = 2.0 * math.pi * traj.n_laps / config.duration
    else:
        omega_c = traj.cruise_speed / radius
    angle = omega_c * t

    def sinusoid(amplitude, period):
        if amplitude == 0.0 or period <= 0.0:
            return np.zeros(n), np.zeros(n), np.zeros(n)
        w = 2.0 * math.pi / period
        return (
            amplitude * np.sin(w * t),
            amplitude * w * np.cos(w * t),
            -amplitude * w * w * np.sin(w * t),
        )

    z, z_dot, z_ddot = sinusoid(traj.depth_amplitude, traj.depth_period)
    z = z + traj.depth_mean
    roll, roll_dot, _ = sinusoid(traj.roll_amplitude, traj.roll_period)
    pitch, pitch_dot, _ = sinusoid(traj.pitch_amplitude, traj.pitch_period)
    yaw_osc, yaw_osc_dot, _ = sinusoid(traj.yaw_osc_amplitude, traj.yaw_osc_period)

    yaw = wrap_angle(angle + math.pi / 2.0 + yaw_osc)
    euler = np.stack([roll, pitch, yaw], axis=1)
    euler_rates = np.stack(
        [roll_dot, pitch_dot, np.full(n, omega_c) + yaw_osc_dot], axis=1
    )

    p_dot = np.stack(
        [-radius * omega_c * np.sin(angle), radius * omega_c * np.cos(angle), z_dot],
        axis=1,
    )
    p_ddot = np.stack(
        [
            -radius * omega_c**2 * np.cos(angle),
            -radius * omega_c**2 * np.sin(angle),
            z_ddot,
        ],
        axis=1,
    )

    R = euler_to_rotation(euler)
    v_body = np.einsum("nji,nj->ni", R, p_dot)
    w_body = np.einsum("nij,nj->ni", body_rate_matrix(euler), euler_rates)
    a_body = -np.cross(w_body, v_body) + np.einsum("nji,nj->ni", R, p_ddot)

    increments = np.einsum(
        "nij,nj->ni", R, v_body * dt + a_body * (0.5 * dt * dt)
    )
    p0 = np.array(
        [traj.center[0] + radius, traj.center[1], traj.depth_mean], dtype=float
    )
    positions = np.empty((n, 3))
    positions[0] = p0
    positions[1:] = p0 + np.cumsum(increments[:-1], axis=0)

    states = np.concatenate([positions, euler, v_body, a_body, w_body], axis=1)
    return GroundTruthLog(
        t=t,
        states=states,
        beacon=config.beacon,
        misalignment=np.array(config.true_misalignment, dtype=float),
        config=config,
    )


def _sensor_times(duration, rate):
    count = int(math.floor(duration * rate + 1e-9)) + 1
    return np.arange(count) / rate


def generate_measurements(truth, config):
    """Time-ordered measurement records for a ground-truth log.

    Fully determined by ``config.seed``. Outage windows drop the affected
    sensor's records after noise generation, so streams that differ only
    in their outage settings share identical noise realizations.
    """
    rng = np.random.default_rng(config.seed)
    records = []

    spec_rp = NoiseSpec(GAUSSIAN, 0.0, config.sigma_roll_pitch)
    spec_yaw = NoiseSpec(GAUSSIAN, 0.0, config.sigma_yaw)
    spec_rate = NoiseSpec(GAUSSIAN, 0.0, config.sigma_rate)
    spec_accel = NoiseSpec(GAUSSIAN, 0.0, config.sigma_accel)
    ahrs_noise = (spec_rp, spec_rp, spec_yaw) + (spec_rate,) * 3 + (spec_accel,) * 3
    spec_dvl = NoiseSpec(GAUSSIAN, 0.0, config.sigma_dvl)
    dvl_noise = (spec_dvl,) * 3
    spec_pressure = NoiseSpec(GAUSSIAN, 0.0, config.sigma_pressure)
    spec_bdepth = NoiseSpec(GAUSSIAN, 0.0, config.sigma_beacon_depth)
    spec_theta = NoiseSpec(LOCATION_SCALE_T, 0.0, config.tau_bearing, config.acoustic_dof)
    spec_phi = NoiseSpec(
        LOCATION_SCALE_T, 0.0, config.tau_elevation, config.acoustic_dof
    )
    spec_doppler = NoiseSpec(
        LOCATION_SCALE_T, 0.0, config.tau_doppler, config.acoustic_dof
    )

    def truth_at(times):
        idx = np.round(times * config.ahrs_rate).astype(int)
        return truth.states[np.clip(idx, 0, len(truth.t) - 1)]

    def lst(scale, size):
        z = rng.standard_normal(size)
        chi2 = rng.chisquare(config.acoustic_dof, size)
        return scale * z / np.sqrt(chi2 / config.acoustic_dof)

    # AHRS
    t_ahrs = _sensor_times(config.duration, config.ahrs_rate)
    s = truth_at(t_ahrs)
    att = wrap_angle(
        s[:, 3:6]
        + rng.standard_normal((len(t_ahrs), 3))
        * np.array([config.sigma_roll_pitch, config.sigma_roll_pitch, config.sigma_yaw])
    )
    rate = s[:, 12:15] + config.sigma_rate * rng.standard_normal((len(t_ahrs), 3))
    accel = s[:, 9:12] + config.sigma_accel * rng.standard_normal((len(t_ahrs), 3))
    for i, ti in enumerate(t_ahrs):
        records.append(
            MeasurementRecord(
                float(ti),
                KIND_AHRS,
                np.concatenate([att[i], rate[i], accel[i]]),
                ahrs_noise,
            )
        )

    # DVL (scale error applies to the measured velocity)
    t_dvl = _sensor_times(config.duration, config.dvl_rate)
    s = truth_at(t_dvl)
    v = config.dvl_scale_error * s[:, 6:9] + config.sigma_dvl * rng.standard_normal(
        (len(t_dvl), 3)
    )
    for i, ti in enumerate(t_dvl):
        records.append(MeasurementRecord(float(ti), KIND_DVL, v[i].copy(), dvl_noise))

    # vehicle pressure
    t_pr = _sensor_times(config.duration, config.pressure_rate)
    s = truth_at(t_pr)
    depth = s[:, 2] + config.sigma_pressure * rng.standard_normal(len(t_pr))
    for i, ti in enumerate(t_pr):
        records.append(
            MeasurementRecord(
                float(ti), KIND_PRESSURE, np.array([depth[i]]), (spec_pressure,)
            )
        )

    # acoustic channels share tick times
    t_ac = _sensor_times(config.duration, config.acoustic_rate)
    s = truth_at(t_ac)
    beacon = config.beacon
    delta = np.asarray(config.true_misalignment, dtype=float)

    b_depth = beacon[2] + config.sigma_beacon_depth * rng.standard_normal(len(t_ac))
    for i, ti in enumerate(t_ac):
        records.append(
            MeasurementRecord(
                float(ti), KIND_BEACON_DEPTH, np.array([b_depth[i]]), (spec_bdepth,)
            )
        )

    u = beacon_in_array_frame(s[:, 0:3], s[:, 3:6], delta, beacon)
    theta = np.arctan2(u[:, 1], u[:, 0]) + lst(config.tau_bearing, len(t_ac))
    phi = np.arcsin(
        np.clip(u[:, 2] / np.linalg.norm(u, axis=1), -1.0, 1.0)
    ) + lst(config.tau_elevation, len(t_ac))
    theta = wrap_angle(theta)
    phi = np.clip(phi, -math.pi / 2.0, math.pi / 2.0)

    n_out = int(round(config.outliers.fraction * len(t_ac)))
    corrupted = np.zeros(len(t_ac), dtype=bool)
    if n_out > 0:
        picks = rng.choice(len(t_ac), size=n_out, replace=False)
        corrupted[picks] = True
        theta[picks] = rng.uniform(-math.pi, math.pi, n_out)
        phi[picks] = rng.uniform(-math.pi / 2.0, math.pi / 2.0, n_out)

    doa_noise = (spec_theta, spec_phi)
    for i, ti in enumerate(t_ac):
        records.append(
            MeasurementRecord(
                float(ti),
                KIND_DOA,
                np.array([theta[i], phi[i]]),
                doa_noise,
                corrupted=bool(corrupted[i]),
            )
        )

    speed = predict_doppler(s[:, 0:3], s[:, 3:6], s[:, 6:9], beacon)
    speed = np.atleast_1d(speed) + lst(config.tau_doppler, len(t_ac))
    for i, ti in enumerate(t_ac):
        records.append(
            MeasurementRecord(
                float(ti), KIND_DOPPLER, np.array([speed[i]]), (spec_doppler,)
            )
        )

    for w in config.outages:
        records = [
            r
            for r in records
            if not (r.kind == w.kind and w.start <= r.t <= w.end)
        ]

    records.sort(key=lambda r: (r.t, KIND_ORDER[r.kind]))
    return records


def apply_bearing_offset(records, offset):
    """Add a constant angle to every DoA bearing (returned as a new list)."""
    out = []
    for r in records:
        if r.kind == KIND_DOA:
            values = r.values.copy()
            values[0] = wrap_angle(values[0] + offset)
            out.append(
                MeasurementRecord(r.t, r.kind, values, r.noise, r.corrupted)
            )
        else:
            out.append(r)
    return out


# -- offline calibration scenario (surface circle around the beacon) -----


@dataclass
class UsblCalibConfig:
    """Surface calibration run: GPS fixes, slant ranges and DoA angles.

    The vehicle circles the beacon's horizontal position on the surface;
    GPS errors have a per-run constant offset (correlated differential-GPS
    error) plus white jitter.
    """

    radius: float = 40.0
    duration: float = 600.0
    rate: float = 0.2
    speed: float = 1.0
    beacon: tuple = (-50.0, 20.0, 10.0)
    misalignment: tuple = (
        math.radians(3.0),
        math.radians(6.0),
        math.radians(9.0),
    )
    gps_sigma: float = 0.5
    gps_bias_sigma: float = 0.35
    range_sigma: float = 0.05
    sigma_roll_pitch: float = math.radians(0.4)
    sigma_yaw: float = math.radians(2.0)
    tau_bearing: float = math.radians(1.0)
    tau_elevation: float = math.radians(1.0)
    acoustic_dof: float = 2.0
    roll_amplitude: float = math.radians(5.0)
    roll_period: float = 60.0
    pitch_amplitude: float = math.radians(5.0)
    pitch_period: float = 45.0
    # heading weave: varies the beacon's relative bearing so all three
    # mounting angles become observable from the surface circle
    yaw_weave_amplitude: float = math.radians(30.0)
    yaw_weave_period: float = 50.0


@dataclass
class UsblCalibData:
    t: np.ndarray
    gps: np.ndarray  # (N, 3) surrogate position fixes
    attitude: np.ndarray  # (N, 3) measured attitude
    ranges: np.ndarray  # (N,)
    doa: np.ndarray  # (N, 2)
    config: UsblCalibConfig


def generate_usbl_calibration_data(config, seed=0):
    rng = np.random.default_rng(seed)
    n = int(math.floor(config.duration * config.rate + 1e-9)) + 1
    t = np.arange(n) / config.rate
    beacon = np.asarray(config.beacon, dtype=float)
    delta = np.asarray(config.misalignment, dtype=float)

    omega = config.speed / config.radius
    angle = omega * t
    pos = np.stack(
        [
            beacon[0] + config.radius * np.cos(angle),
            beacon[1] + config.radius * np.sin(angle),
            np.zeros(n),
        ],
        axis=1,
    )
    roll = config.roll_amplitude * np.sin(2.0 * math.pi * t / config.roll_period)
    pitch = config.pitch_amplitude * np.sin(2.0 * math.pi * t / config.pitch_period)
    yaw = wrap_angle(
        angle
        + math.pi / 2.0
        + config.yaw_weave_amplitude * np.sin(2.0 * math.pi * t / config.yaw_weave_period)
    )
    euler = np.stack([roll, pitch, yaw], axis=1)

    def lst(scale, size):
        z = rng.standard_normal(size)
        chi2 = rng.chisquare(config.acoustic_dof, size)
        return scale * z / np.sqrt(chi2 / config.acoustic_dof)

    bias = config.gps_bias_sigma * rng.standard_normal(2)
    gps = pos.copy()
    gps[:, 0] += bias[0] + config.gps_sigma * rng.standard_normal(n)
    gps[:, 1] += bias[1] + config.gps_sigma * rng.standard_normal(n)

    attitude = wrap_angle(
        euler
        + rng.standard_normal((n, 3))
        * np.array(
            [config.sigma_roll_pitch, config.sigma_roll_pitch, config.sigma_yaw]
        )
    )

    ranges = np.linalg.norm(beacon - pos, axis=1) + config.range_sigma * \
        rng.standard_normal(n)

    u = beacon_in_array_frame(pos, euler, delta, beacon)
    theta = wrap_angle(np.arctan2(u[:, 1], u[:, 0]) + lst(config.tau_bearing, n))
    phi = np.clip(
        np.arcsin(np.clip(u[:, 2] / np.linalg.norm(u, axis=1), -1.0, 1.0))
        + lst(config.tau_elevation, n),
        -math.pi / 2.0,
        math.pi / 2.0,
    )
    return UsblCalibData(
        t=t,
        gps=gps,
        attitude=attitude,
        ranges=ranges,
        doa=np.stack([theta, phi], axis=1),
        config=config,
    )


def table2_scenario(alpha=3.0, seed=0, **overrides):
    """The default survey scenario with a chosen misalignment scale."""
    return ScenarioConfig(misalignment_scale=alpha, seed=seed, **overrides)
