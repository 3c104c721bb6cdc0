"""Unscented Kalman filter over the vehicle / augmented state.

The filter runs in one of three layouts:

* ``dr``          -- 15-dim vehicle state, dead-reckoning sensors only.
* ``augmented``   -- 21-dim state including beacon position and misalignment.
* ``beacon_only`` -- 18-dim state including the beacon but with the
  misalignment pinned at zero (the misalignment-ignorant variant).

Attitude components (and the misalignment angles) are treated circularly:
sigma-point means are computed from summed unit vectors and all residuals
are wrapped, so yaw can cross +-pi freely. A measurement is applied only
when every innovation component passes the gate
``|nu_i| < multiplier * sqrt(S_ii)`` (strict), otherwise it is counted as
rejected and skipped. The sigma-point arithmetic itself is compiled in
``_kernels``.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import GimbalLockError
from .models import (
    ACC,
    BEACON,
    KIND_AHRS,
    KIND_BEACON_DEPTH,
    KIND_DOA,
    KIND_DOPPLER,
    KIND_DVL,
    KIND_PRESSURE,
    MISALIGN,
    NAV_DIM,
    RATE,
    VEL,
)

MODE_DR = "dr"
MODE_AUGMENTED = "augmented"
MODE_BEACON_ONLY = "beacon_only"

_MODE_DIM = {MODE_DR: 15, MODE_AUGMENTED: 21, MODE_BEACON_ONLY: 18}

KIND_AHRS_ATTITUDE_RATE = "ahrs_attitude_rate"

_KIND_CODE = {
    KIND_AHRS: _kernels.KIND_CODE_AHRS,
    KIND_AHRS_ATTITUDE_RATE: _kernels.KIND_CODE_AHRS_ATTITUDE_RATE,
    KIND_DVL: _kernels.KIND_CODE_DVL,
    KIND_PRESSURE: _kernels.KIND_CODE_PRESSURE,
    KIND_BEACON_DEPTH: _kernels.KIND_CODE_BEACON_DEPTH,
    KIND_DOA: _kernels.KIND_CODE_DOA,
    KIND_DOPPLER: _kernels.KIND_CODE_DOPPLER,
}

_OUTCOME = {
    _kernels.OUTCOME_APPLIED: "applied",
    _kernels.OUTCOME_REJECTED: "rejected",
    _kernels.OUTCOME_DEGENERATE: "degenerate",
}


class CovarianceError(RuntimeError):
    """Covariance factorization failed beyond repair."""


def gate(innovation, innovation_cov, multiplier):
    """Per-component innovation gate.

    Component i is accepted iff ``|nu_i| < multiplier * sqrt(S_ii)``
    (strict inequality). ``innovation_cov`` may be the full matrix or its
    diagonal.
    """
    nu = np.atleast_1d(np.asarray(innovation, dtype=float))
    S = np.asarray(innovation_cov, dtype=float)
    diag = np.diag(S) if S.ndim == 2 else np.atleast_1d(S)
    return np.abs(nu) < multiplier * np.sqrt(diag)


def default_process_noise(dim):
    """Diagonal continuous-time process noise (units^2 per second).

    Position and attitude receive no direct noise (they are driven through
    velocity and angular rate); constant parameters receive none at all.
    """
    q = np.zeros(dim)
    q[VEL] = 1e-4
    q[ACC] = 2.5e-3
    q[RATE] = 1e-4
    return q


@dataclass
class UkfParams:
    """Sigma-point spread and gating parameters.

    alpha defaults to 0.1: for a 21-dim state the textbook 1e-3 produces
    near-degenerate weights.
    """

    alpha: float = 0.1
    beta: float = 2.0
    kappa: float = 0.0
    process_noise: np.ndarray = None
    gate_multiplier: float = 3.0
    jitter: float = 1e-12
    gimbal_eps: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")


@dataclass
class FilterState:
    """Snapshot of the filter posterior."""

    mean: np.ndarray
    cov: np.ndarray
    t: float


@dataclass
class UpdateReport:
    t: float
    kind: str
    outcome: str  # applied | rejected | degenerate
    innovation: np.ndarray = None
    gate_mask: np.ndarray = None

    @property
    def applied(self):
        return self.outcome == "applied"


class NavigationUkf:
    """Sigma-point filter over the navigation (+ calibration) state."""

    def __init__(self, mean, cov, params=None, t=0.0, mode=MODE_DR):
        if mode not in _MODE_DIM:
            raise ValueError("unknown mode: %r" % (mode,))
        self.mode = mode
        self.n = _MODE_DIM[mode]
        self.mean = np.array(mean, dtype=float)
        self.cov = np.array(cov, dtype=float)
        if self.mean.shape != (self.n,) or self.cov.shape != (self.n, self.n):
            raise ValueError("state size does not match mode %r" % (mode,))
        self.t = float(t)
        self.params = params if params is not None else UkfParams()
        if self.params.process_noise is None:
            self.q_diag = default_process_noise(self.n)
        else:
            self.q_diag = np.asarray(self.params.process_noise, dtype=float)
            if self.q_diag.shape != (self.n,):
                raise ValueError("process_noise length must equal state dim")

        n, a, k = self.n, self.params.alpha, self.params.kappa
        lam = a * a * (n + k) - n
        self._scale = np.sqrt(n + lam)
        m = 2 * n + 1
        self.wm = np.full(m, 1.0 / (2.0 * (n + lam)))
        self.wc = self.wm.copy()
        self.wm[0] = lam / (n + lam)
        self.wc[0] = self.wm[0] + (1.0 - a * a + self.params.beta)

        angle_idx = [3, 4, 5]
        if mode == MODE_AUGMENTED:
            angle_idx += [18, 19, 20]
        self._angle_idx = np.array(angle_idx, dtype=np.int64)

        self.jitter_events = 0
        self.update_counts = {}

    # -- bookkeeping --------------------------------------------------

    @property
    def state(self):
        return FilterState(self.mean.copy(), self.cov.copy(), self.t)

    def nav_state(self):
        return self.mean[:NAV_DIM].copy()

    def gamma(self):
        """Current calibration estimate as a 6-vector (beacon, misalignment)."""
        g = np.zeros(6)
        if self.mode == MODE_DR:
            return g
        g[:3] = self.mean[BEACON]
        if self.mode == MODE_AUGMENTED:
            g[3:] = self.mean[MISALIGN]
        return g

    def marginal_std(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def _count(self, kind, outcome):
        per = self.update_counts.setdefault(
            kind, {"applied": 0, "rejected": 0, "degenerate": 0}
        )
        per[outcome] += 1

    # -- prediction ----------------------------------------------------

    def predict(self, dt):
        """Propagate mean and covariance forward by dt seconds."""
        if dt <= 0.0:
            raise ValueError("dt must be > 0")
        mean, cov, code, events = _kernels.predict_kernel(
            self.mean,
            self.cov,
            self.q_diag,
            float(dt),
            self._scale,
            self.wm,
            self.wc,
            self._angle_idx,
            NAV_DIM,
            self.params.gimbal_eps,
            self.params.jitter,
        )
        self.jitter_events += events
        if code == _kernels.ERR_COV:
            raise CovarianceError(
                "covariance not positive-definite at t=%.3f" % self.t
            )
        if code == _kernels.ERR_GIMBAL:
            raise GimbalLockError("sigma-point pitch at gimbal lock")
        self.mean, self.cov = mean, cov
        self.t += dt

    def predict_to(self, t, min_dt=1e-9):
        if t > self.t + min_dt:
            self.predict(t - self.t)

    # -- measurement updates --------------------------------------------

    def _kernel_update(self, kind, z, r_var):
        mean, cov, code, events, nu, mask = _kernels.update_kernel(
            self.mean,
            self.cov,
            np.asarray(z, dtype=float),
            np.asarray(r_var, dtype=float),
            _KIND_CODE[kind],
            self._scale,
            self.wm,
            self.wc,
            self._angle_idx,
            self.params.gate_multiplier,
            self.params.jitter,
        )
        self.jitter_events += events
        if code == _kernels.ERR_COV:
            raise CovarianceError(
                "covariance not positive-definite at t=%.3f" % self.t
            )
        if code == _kernels.OUTCOME_APPLIED:
            self.mean, self.cov = mean, cov
        outcome = _OUTCOME[code]
        self._count(kind, outcome)
        return UpdateReport(self.t, kind, outcome, nu, mask)

    def update_ahrs(self, values, variances):
        return self._kernel_update(KIND_AHRS, values, variances)

    def update_ahrs_attitude_rate(self, values, variances):
        """AHRS update without the acceleration channel (classical DR)."""
        return self._kernel_update(KIND_AHRS_ATTITUDE_RATE, values, variances)

    def update_dvl(self, values, variances):
        return self._kernel_update(KIND_DVL, values, variances)

    def update_pressure(self, value, variance):
        return self._kernel_update(
            KIND_PRESSURE, np.atleast_1d(value), np.atleast_1d(variance)
        )

    def update_beacon_depth(self, value, variance):
        self._require_params(KIND_BEACON_DEPTH)
        return self._kernel_update(
            KIND_BEACON_DEPTH, np.atleast_1d(value), np.atleast_1d(variance)
        )

    def update_doa(self, bearing, elevation, variances):
        self._require_params(KIND_DOA)
        return self._kernel_update(
            KIND_DOA, np.array([bearing, elevation]), variances
        )

    def update_doppler(self, value, variance):
        self._require_params(KIND_DOPPLER)
        return self._kernel_update(
            KIND_DOPPLER, np.atleast_1d(value), np.atleast_1d(variance)
        )

    def _require_params(self, kind):
        if self.mode == MODE_DR:
            raise ValueError(
                "%s update requires an augmented filter state" % kind
            )

    def update(self, record):
        """Dispatch a MeasurementRecord to the matching update."""
        r_var = record.variance_vector()
        v = record.values
        if record.kind == KIND_AHRS:
            return self.update_ahrs(v, r_var)
        if record.kind == KIND_DVL:
            return self.update_dvl(v, r_var)
        if record.kind == KIND_PRESSURE:
            return self.update_pressure(v[0], r_var[0])
        if record.kind == KIND_BEACON_DEPTH:
            return self.update_beacon_depth(v[0], r_var[0])
        if record.kind == KIND_DOA:
            return self.update_doa(v[0], v[1], r_var)
        if record.kind == KIND_DOPPLER:
            return self.update_doppler(v[0], r_var[0])
        raise ValueError("unknown record kind: %r" % (record.kind,))


def augment_filter(dr_filter, gamma, gamma_cov, estimate_misalignment=True):
    """Promote a dead-reckoning filter to the augmented state.

    ``gamma`` is the 6-vector (beacon, misalignment) from the initializer
    and ``gamma_cov`` its 6x6 covariance. With
    ``estimate_misalignment=False`` only the beacon block is appended and
    the misalignment stays pinned at zero.
    """
    if dr_filter.mode != MODE_DR:
        raise ValueError("augment_filter expects a DR-mode filter")
    gamma = np.asarray(gamma, dtype=float)
    gamma_cov = np.asarray(gamma_cov, dtype=float)
    if estimate_misalignment:
        mode, extra = MODE_AUGMENTED, 6
    else:
        mode, extra = MODE_BEACON_ONLY, 3
    n = NAV_DIM + extra
    mean = np.zeros(n)
    mean[:NAV_DIM] = dr_filter.mean
    mean[NAV_DIM:] = gamma[:extra]
    cov = np.zeros((n, n))
    cov[:NAV_DIM, :NAV_DIM] = dr_filter.cov
    cov[NAV_DIM:, NAV_DIM:] = gamma_cov[:extra, :extra]
    params = dr_filter.params
    if params.process_noise is not None:
        q = np.zeros(n)
        q[:NAV_DIM] = np.asarray(params.process_noise)[:NAV_DIM]
        params = UkfParams(
            alpha=params.alpha,
            beta=params.beta,
            kappa=params.kappa,
            process_noise=q,
            gate_multiplier=params.gate_multiplier,
            jitter=params.jitter,
            gimbal_eps=params.gimbal_eps,
        )
    out = NavigationUkf(mean, cov, params=params, t=dr_filter.t, mode=mode)
    out.jitter_events = dr_filter.jitter_events
    out.update_counts = dr_filter.update_counts
    return out
