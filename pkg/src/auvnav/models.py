"""Process and measurement models shared by the simulator, filter and
initializer.

State vector layout (fixed order, used everywhere a flat vector appears)::

    [0:3]   world position (m, NED)
    [3:6]   attitude [roll, pitch, yaw] (rad)
    [6:9]   body velocity (m/s)
    [9:12]  body acceleration (m/s^2)
    [12:15] body angular rate (rad/s)
    [15:18] beacon world position (m)        -- augmented state only
    [18:21] array misalignment [dr, dp, dy]  -- augmented state only

The mounting misalignment is applied as the array-from-vehicle rotation
``R(delta)``: a point expressed in the vehicle frame maps into the acoustic
array frame via ``p_array = R(delta) @ p_vehicle``.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    euler_rate_matrix,
    euler_to_rotation,
    wrap_angle,
)

POS = slice(0, 3)
ATT = slice(3, 6)
VEL = slice(6, 9)
ACC = slice(9, 12)
RATE = slice(12, 15)
BEACON = slice(15, 18)
MISALIGN = slice(18, 21)

NAV_DIM = 15
AUG_DIM = 21

# measurement record kinds, in the deterministic tie-break order used when
# several records share a timestamp
KIND_AHRS = "ahrs"
KIND_DVL = "dvl"
KIND_PRESSURE = "pressure"
KIND_BEACON_DEPTH = "beacon_depth"
KIND_DOA = "doa"
KIND_DOPPLER = "doppler"
KIND_ORDER = {
    KIND_AHRS: 0,
    KIND_DVL: 1,
    KIND_PRESSURE: 2,
    KIND_BEACON_DEPTH: 3,
    KIND_DOA: 4,
    KIND_DOPPLER: 5,
}

GAUSSIAN = "gaussian"
LOCATION_SCALE_T = "lst"

_DEGENERATE_RANGE = 1e-9


class DegenerateGeometryError(ValueError):
    """Beacon coincides with the vehicle (or the array origin)."""


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian or location-scale-t noise descriptor.

    ``scale`` is the Gaussian sigma or the t-distribution scale tau. For
    filter weighting both families use ``scale**2`` as the variance proxy
    (nu = 2 has no finite variance; outlier gating handles the tails).
    """

    family: str = GAUSSIAN
    location: float = 0.0
    scale: float = 1.0
    dof: float = 2.0

    def __post_init__(self):
        if self.family not in (GAUSSIAN, LOCATION_SCALE_T):
            raise ValueError("unknown noise family: %r" % (self.family,))
        if self.scale < 0.0:
            raise ValueError("noise scale must be >= 0")
        if self.family == LOCATION_SCALE_T and self.dof <= 0.0:
            raise ValueError("t-distribution dof must be > 0")

    @property
    def variance_proxy(self):
        return self.scale**2


def sample_noise(spec, rng, size=None):
    """Draw from a :class:`NoiseSpec` using ``rng`` (numpy Generator).

    The location-scale t draw uses the standard normal/chi-square ratio so
    a seeded generator reproduces sequences exactly.
    """
    if spec.family == GAUSSIAN:
        return spec.location + spec.scale * rng.standard_normal(size)
    z = rng.standard_normal(size)
    chi2 = rng.chisquare(spec.dof, size)
    return spec.location + spec.scale * z / np.sqrt(chi2 / spec.dof)


@dataclass(slots=True)
class MeasurementRecord:
    """One timestamped sensor output.

    ``values`` ordering per kind:

    * ahrs: [roll, pitch, yaw, wx, wy, wz, ax, ay, az]
    * dvl: [vx, vy, vz] (body frame)
    * pressure: [vehicle depth]
    * beacon_depth: [beacon depth]
    * doa: [bearing, elevation]
    * doppler: [speed along line of sight]

    ``noise`` holds one :class:`NoiseSpec` per value. ``corrupted`` marks
    synthetic records replaced by the simulator's outlier injection; it is
    ground-truth metadata for evaluation, never consumed by estimators.
    """

    t: float
    kind: str
    values: np.ndarray
    noise: tuple
    corrupted: bool = False

    def sigma_vector(self):
        return np.array([n.scale for n in self.noise])

    def variance_vector(self):
        return np.array([n.variance_proxy for n in self.noise])


@dataclass
class VehicleState:
    """Dead-reckonable 15-dim vehicle state."""

    p_world: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v_body: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a_body: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w_body: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_vector(self):
        return np.concatenate(
            [self.p_world, self.attitude, self.v_body, self.a_body, self.w_body]
        ).astype(float)

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(
            p_world=x[POS].copy(),
            attitude=x[ATT].copy(),
            v_body=x[VEL].copy(),
            a_body=x[ACC].copy(),
            w_body=x[RATE].copy(),
        )


@dataclass
class CalibrationParams:
    """Constant parameters: beacon world position + misalignment angles."""

    beacon_world: np.ndarray = field(default_factory=lambda: np.zeros(3))
    misalignment: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_vector(self):
        return np.concatenate([self.beacon_world, self.misalignment]).astype(float)

    @classmethod
    def from_vector(cls, g):
        g = np.asarray(g, dtype=float)
        return cls(beacon_world=g[:3].copy(), misalignment=g[3:6].copy())


@dataclass
class AugmentedState:
    vehicle: VehicleState
    calib: CalibrationParams

    def as_vector(self):
        return np.concatenate([self.vehicle.as_vector(), self.calib.as_vector()])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(
            vehicle=VehicleState.from_vector(x[:NAV_DIM]),
            calib=CalibrationParams.from_vector(x[NAV_DIM:AUG_DIM]),
        )


def propagate_states(X, dt, gimbal_eps=1e-3):
    """Discrete process model applied to a stack of state vectors.

    ``X`` has shape ``(..., n)`` with ``n >= 15``; trailing components
    beyond the vehicle block (beacon, misalignment) are constants and pass
    through unchanged. Position integrates the rotated body velocity plus
    the half-dt^2 acceleration term, attitude integrates the Euler-rate
    map, velocity integrates acceleration; acceleration and angular rate
    are random-walk states.
    """
    X = np.asarray(X, dtype=float)
    out = X.copy()
    att = X[..., ATT]
    R = euler_to_rotation(att)
    T = euler_rate_matrix(att, eps=gimbal_eps)
    v = X[..., VEL]
    a = X[..., ACC]
    w = X[..., RATE]

    dp = np.einsum("...ij,...j->...i", R, v * dt + a * (0.5 * dt * dt))
    out[..., POS] = X[..., POS] + dp
    out[..., ATT] = wrap_angle(att + np.einsum("...ij,...j->...i", T, w) * dt)
    out[..., VEL] = v + a * dt
    return out


def propagate(state, dt, gimbal_eps=1e-3):
    """Single-state convenience wrapper around :func:`propagate_states`."""
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    if isinstance(state, AugmentedState):
        return AugmentedState.from_vector(
            propagate_states(state.as_vector(), dt, gimbal_eps)
        )
    return VehicleState.from_vector(
        propagate_states(state.as_vector(), dt, gimbal_eps)
    )


def beacon_in_vehicle_frame(p_world, attitude, beacon_world):
    """Beacon position seen from the vehicle frame.

    All arguments broadcast; shapes ``(..., 3)``.
    """
    p_world = np.asarray(p_world, dtype=float)
    beacon_world = np.asarray(beacon_world, dtype=float)
    R = euler_to_rotation(attitude)
    return np.einsum("...ji,...j->...i", R, beacon_world - p_world)


def array_from_vehicle(misalignment):
    """Mounting rotation taking vehicle-frame vectors into the array frame."""
    return euler_to_rotation(misalignment)


def beacon_in_array_frame(p_world, attitude, misalignment, beacon_world):
    """Beacon position seen from the acoustic array frame."""
    q = beacon_in_vehicle_frame(p_world, attitude, beacon_world)
    A = array_from_vehicle(misalignment)
    return np.einsum("...ij,...j->...i", A, q)


def predict_doa(p_array, degenerate_tol=_DEGENERATE_RANGE):
    """Bearing/elevation of a point expressed in the array frame.

    Returns ``(bearing, elevation, bearing_defined)``. The bearing is
    undefined (flagged False) when the point sits on the array z-axis;
    elevation is still returned. Raises
    :class:`DegenerateGeometryError` when the point is at the origin.
    """
    p = np.asarray(p_array, dtype=float)
    norm = np.linalg.norm(p, axis=-1)
    if np.any(norm < degenerate_tol):
        raise DegenerateGeometryError("beacon direction undefined: |p| ~ 0")
    horiz = np.hypot(p[..., 0], p[..., 1])
    bearing = np.arctan2(p[..., 1], p[..., 0])
    elevation = np.arcsin(np.clip(p[..., 2] / norm, -1.0, 1.0))
    defined = horiz >= degenerate_tol
    if bearing.ndim == 0:
        return float(bearing), float(elevation), bool(defined)
    return bearing, elevation, defined


def predict_doppler(p_world, attitude, v_body, beacon_world,
                    degenerate_tol=_DEGENERATE_RANGE):
    """Component of body velocity along the vehicle-frame beacon direction.

    Positive toward the beacon. Independent of the array misalignment.
    """
    q = beacon_in_vehicle_frame(p_world, attitude, beacon_world)
    rng = np.linalg.norm(q, axis=-1)
    if np.any(rng < degenerate_tol):
        raise DegenerateGeometryError("Doppler undefined: beacon at vehicle")
    v_body = np.asarray(v_body, dtype=float)
    s = np.einsum("...i,...i->...", q, v_body) / rng
    if np.ndim(s) == 0:
        return float(s)
    return s


def predict_beacon_depth(beacon_world):
    """Beacon depth (z component of the world position)."""
    b = np.asarray(beacon_world, dtype=float)
    z = b[..., 2]
    if np.ndim(z) == 0:
        return float(z)
    return z


def doa_angle_gradients(u):
    """Gradients of (bearing, elevation) w.r.t. the array-frame vector u.

    Returns ``(dtheta_du, dphi_du)``, each shape (3,). Requires u off the
    array z-axis.
    """
    u = np.asarray(u, dtype=float)
    h2 = u[0] ** 2 + u[1] ** 2
    if h2 < _DEGENERATE_RANGE**2:
        raise DegenerateGeometryError("bearing gradient undefined on z-axis")
    rho2 = h2 + u[2] ** 2
    h = np.sqrt(h2)
    dtheta = np.array([-u[1], u[0], 0.0]) / h2
    dphi = np.array([-u[0] * u[2], -u[1] * u[2], h2]) / (rho2 * h)
    return dtheta, dphi


def euler_rotation_partials(euler):
    """Per-angle derivatives of :func:`euler_to_rotation`.

    Returns an array of shape (3, 3, 3): ``[dR/droll, dR/dpitch, dR/dyaw]``.
    """
    r, p, y = np.asarray(euler, dtype=float)
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    dRz = np.array([[-sy, -cy, 0.0], [cy, -sy, 0.0], [0.0, 0.0, 0.0]])
    dRy = np.array([[-sp, 0.0, cp], [0.0, 0.0, 0.0], [-cp, 0.0, -sp]])
    dRx = np.array([[0.0, 0.0, 0.0], [0.0, -sr, -cr], [0.0, cr, -sr]])
    return np.stack([Rz @ Ry @ dRx, Rz @ dRy @ Rx, dRz @ Ry @ Rx])
