"""Rotation and angle utilities shared by every other module.

Conventions used throughout the package:

* World frame is NED (north, east, down).
* Euler angles are ``[roll, pitch, yaw]`` in radians, composed ZYX: yaw
  about z, then pitch about y, then roll about x. ``euler_to_rotation``
  returns the world-from-body matrix under this convention.
* Roll and yaw live in ``(-pi, pi]``, pitch in ``[-pi/2, pi/2]``.

All functions broadcast over leading axes, so a ``(m, 3)`` stack of Euler
triplets yields a ``(m, 3, 3)`` stack of matrices.
"""

import numpy as np

TWO_PI = 2.0 * np.pi

# Default guard band around the pitch singularity of the Euler-rate map.
GIMBAL_EPS = 1e-3


class GimbalLockError(ValueError):
    """Pitch too close to +-pi/2 for the Euler-rate matrix."""


def wrap_angle(angle):
    """Wrap angle(s) to the half-open interval (-pi, pi]."""
    a = np.asarray(angle, dtype=float)
    wrapped = np.pi - np.mod(np.pi - a, TWO_PI)
    if wrapped.ndim == 0:
        return float(wrapped)
    return wrapped


def euler_to_rotation(euler):
    """World-from-body rotation matrix for ``[roll, pitch, yaw]`` (ZYX).

    Accepts shape ``(..., 3)`` and returns ``(..., 3, 3)``.
    """
    e = np.asarray(euler, dtype=float)
    cr, sr = np.cos(e[..., 0]), np.sin(e[..., 0])
    cp, sp = np.cos(e[..., 1]), np.sin(e[..., 1])
    cy, sy = np.cos(e[..., 2]), np.sin(e[..., 2])

    R = np.empty(e.shape[:-1] + (3, 3), dtype=float)
    R[..., 0, 0] = cy * cp
    R[..., 0, 1] = cy * sp * sr - sy * cr
    R[..., 0, 2] = cy * sp * cr + sy * sr
    R[..., 1, 0] = sy * cp
    R[..., 1, 1] = sy * sp * sr + cy * cr
    R[..., 1, 2] = sy * sp * cr - cy * sr
    R[..., 2, 0] = -sp
    R[..., 2, 1] = cp * sr
    R[..., 2, 2] = cp * cr
    return R


def rotation_to_euler(R):
    """Inverse of :func:`euler_to_rotation` (pitch clamped to [-pi/2, pi/2])."""
    R = np.asarray(R, dtype=float)
    roll = np.arctan2(R[..., 2, 1], R[..., 2, 2])
    pitch = np.arcsin(np.clip(-R[..., 2, 0], -1.0, 1.0))
    yaw = np.arctan2(R[..., 1, 0], R[..., 0, 0])
    return np.stack([roll, pitch, yaw], axis=-1)


def euler_rate_matrix(euler, eps=GIMBAL_EPS):
    """Matrix T mapping body angular rate to Euler-angle rates.

    Raises :class:`GimbalLockError` when ``|pitch| >= pi/2 - eps``.
    Accepts shape ``(..., 3)``.
    """
    e = np.asarray(euler, dtype=float)
    pitch = e[..., 1]
    if np.any(np.abs(pitch) >= np.pi / 2.0 - eps):
        raise GimbalLockError(
            "euler_rate_matrix singular: |pitch| >= pi/2 - %g" % eps
        )
    cr, sr = np.cos(e[..., 0]), np.sin(e[..., 0])
    cp, sp = np.cos(pitch), np.sin(pitch)
    tp = sp / cp

    T = np.zeros(e.shape[:-1] + (3, 3), dtype=float)
    T[..., 0, 0] = 1.0
    T[..., 0, 1] = sr * tp
    T[..., 0, 2] = cr * tp
    T[..., 1, 1] = cr
    T[..., 1, 2] = -sr
    T[..., 2, 1] = sr / cp
    T[..., 2, 2] = cr / cp
    return T


def body_rate_matrix(euler, eps=GIMBAL_EPS):
    """Inverse of :func:`euler_rate_matrix`: Euler-angle rates -> body rate.

    Closed form, valid everywhere (no pitch singularity), but the guard is
    kept symmetric with :func:`euler_rate_matrix` since callers pair them.
    """
    e = np.asarray(euler, dtype=float)
    cr, sr = np.cos(e[..., 0]), np.sin(e[..., 0])
    cp, sp = np.cos(e[..., 1]), np.sin(e[..., 1])

    E = np.zeros(e.shape[:-1] + (3, 3), dtype=float)
    E[..., 0, 0] = 1.0
    E[..., 0, 2] = -sp
    E[..., 1, 1] = cr
    E[..., 1, 2] = sr * cp
    E[..., 2, 1] = -sr
    E[..., 2, 2] = cr * cp
    return E


def skew(v):
    """Antisymmetric cross-product matrix: ``skew(v) @ u == cross(v, u)``."""
    v = np.asarray(v, dtype=float)
    S = np.zeros(v.shape[:-1] + (3, 3), dtype=float)
    S[..., 0, 1] = -v[..., 2]
    S[..., 0, 2] = v[..., 1]
    S[..., 1, 0] = v[..., 2]
    S[..., 1, 2] = -v[..., 0]
    S[..., 2, 0] = -v[..., 1]
    S[..., 2, 1] = v[..., 0]
    return S


def rotation_exp(phi):
    """Rodrigues formula: axis-angle vector -> rotation matrix."""
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    S = skew(phi)
    if angle < 1e-10:
        # second-order Taylor keeps the round-trip tight near identity
        return np.eye(3) + S + 0.5 * (S @ S)
    return (
        np.eye(3)
        + (np.sin(angle) / angle) * S
        + ((1.0 - np.cos(angle)) / angle**2) * (S @ S)
    )


def rotation_log(R):
    """Axis-angle vector of a rotation matrix; magnitude in [0, pi].

    At angle pi the sign of the axis is ambiguous; the representative with
    first nonzero component positive is returned so results are
    deterministic.
    """
    R = np.asarray(R, dtype=float)
    cos_angle = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(cos_angle))
    axial = 0.5 * np.array(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
    )
    if angle < 1e-7:
        return axial
    if angle < np.pi - 1e-6:
        return (angle / np.sin(angle)) * axial
    # near pi: recover the axis from the symmetric part
    B = 0.5 * (R + np.eye(3))
    axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
    k = int(np.argmax(axis))
    axis[(k + 1) % 3] = B[k, (k + 1) % 3] / axis[k]
    axis[(k + 2) % 3] = B[k, (k + 2) % 3] / axis[k]
    axis /= np.linalg.norm(axis)
    for comp in axis:
        if abs(comp) > 1e-12:
            if comp < 0.0:
                axis = -axis
            break
    return angle * axis


def is_rotation(R, tol=1e-9):
    """True when R is orthonormal with determinant +1 within tol."""
    R = np.asarray(R, dtype=float)
    return (
        np.allclose(R.T @ R, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )
