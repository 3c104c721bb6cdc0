"""Compiled inner loops of the sigma-point filter.

The filter runs one predict per record timestamp and one update per
record at rates up to 20 Hz over hour-long scenarios, so the sigma-point
arithmetic lives here as numba kernels. Layouts match ``models``:
nav block [p(3), rpy(3), v(3), a(3), w(3)], then optionally beacon(3)
and misalignment(3).

Update outcome codes: 0 applied, 1 gate-rejected, 2 degenerate geometry.
Negative codes are hard errors: -1 covariance factorization failure,
-2 gimbal lock in the process model.
"""

import math

import numpy as np
from numba import njit

KIND_CODE_AHRS = 0
KIND_CODE_DVL = 1
KIND_CODE_PRESSURE = 2
KIND_CODE_BEACON_DEPTH = 3
KIND_CODE_DOA = 4
KIND_CODE_DOPPLER = 5
KIND_CODE_AHRS_ATTITUDE_RATE = 6

OUTCOME_APPLIED = 0
OUTCOME_REJECTED = 1
OUTCOME_DEGENERATE = 2
ERR_COV = -1
ERR_GIMBAL = -2

# Measurement-variance floor: keeps innovation covariances invertible for
# zero-noise channels and holds the gate above the filter's own numerical
# noise (~1e-6 per channel in natural units).
_R_FLOOR = 1e-12
TWO_PI = 2.0 * math.pi


@njit(cache=True)
def _wrap(a):
    w = (a + math.pi) % TWO_PI
    if w <= 0.0:
        w += TWO_PI
    return w - math.pi


@njit(cache=True)
def _cholesky_lower(a, out):
    """Lower-triangular Cholesky; returns False when not positive-definite."""
    n = a.shape[0]
    for i in range(n):
        for j in range(i + 1):
            s = a[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                out[i, i] = math.sqrt(s)
            else:
                out[i, j] = s / out[j, j]
        for j in range(i + 1, n):
            out[i, j] = 0.0
    return True


@njit(cache=True)
def _chol_with_jitter(cov, jitter0):
    """Symmetrize, factorize, escalate jitter on failure.

    The jitter scales with the largest diagonal entry so that repairing a
    cancellation-level indefiniteness does not re-inflate well-converged
    (tiny-variance) components. Returns (L, jitter_events, ok).
    """
    n = cov.shape[0]
    sym = np.empty((n, n))
    max_diag = 0.0
    for i in range(n):
        for j in range(n):
            sym[i, j] = 0.5 * (cov[i, j] + cov[j, i])
        if sym[i, i] > max_diag:
            max_diag = sym[i, i]
    L = np.empty((n, n))
    events = 0
    jitter = jitter0
    if max_diag > 0.0 and 1e-15 * max_diag > jitter:
        jitter = 1e-15 * max_diag
    for _ in range(4):
        if _cholesky_lower(sym, L):
            return L, events, True
        events += 1
        for i in range(n):
            sym[i, i] += jitter
        jitter *= 100.0
    return L, events, False


@njit(cache=True)
def _sigma_points(mean, L, scale):
    n = mean.shape[0]
    X = np.empty((2 * n + 1, n))
    for j in range(n):
        X[0, j] = mean[j]
    for i in range(n):
        for j in range(n):
            step = scale * L[j, i]
            X[1 + i, j] = mean[j] + step
            X[1 + n + i, j] = mean[j] - step
    return X


@njit(cache=True)
def _rotation_entries(r, p, y):
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    R = np.empty((3, 3))
    R[0, 0] = cy * cp
    R[0, 1] = cy * sp * sr - sy * cr
    R[0, 2] = cy * sp * cr + sy * sr
    R[1, 0] = sy * cp
    R[1, 1] = sy * sp * sr + cy * cr
    R[1, 2] = sy * sp * cr - cy * sr
    R[2, 0] = -sp
    R[2, 1] = cp * sr
    R[2, 2] = cp * cr
    return R


@njit(cache=True)
def _propagate_rows(X, dt, gimbal_eps):
    """Process model applied to each sigma-point row in place."""
    m, n = X.shape
    half = 0.5 * dt * dt
    for i in range(m):
        r, p, y = X[i, 3], X[i, 4], X[i, 5]
        if abs(p) >= math.pi / 2.0 - gimbal_eps:
            return False
        cr, sr = math.cos(r), math.sin(r)
        cp, sp = math.cos(p), math.sin(p)
        cy, sy = math.cos(y), math.sin(y)
        tp = sp / cp

        vx = X[i, 6] * dt + X[i, 9] * half
        vy = X[i, 7] * dt + X[i, 10] * half
        vz = X[i, 8] * dt + X[i, 11] * half
        X[i, 0] += (cy * cp) * vx + (cy * sp * sr - sy * cr) * vy + (cy * sp * cr + sy * sr) * vz
        X[i, 1] += (sy * cp) * vx + (sy * sp * sr + cy * cr) * vy + (sy * sp * cr - cy * sr) * vz
        X[i, 2] += (-sp) * vx + (cp * sr) * vy + (cp * cr) * vz

        wx, wy, wz = X[i, 12], X[i, 13], X[i, 14]
        X[i, 3] = _wrap(r + (wx + sr * tp * wy + cr * tp * wz) * dt)
        X[i, 4] = _wrap(p + (cr * wy - sr * wz) * dt)
        X[i, 5] = _wrap(y + ((sr / cp) * wy + (cr / cp) * wz) * dt)

        X[i, 6] += X[i, 9] * dt
        X[i, 7] += X[i, 10] * dt
        X[i, 8] += X[i, 11] * dt
    return True


@njit(cache=True)
def _weighted_mean(X, wm, angle_idx):
    m, n = X.shape
    mean = np.zeros(n)
    for i in range(m):
        w = wm[i]
        for j in range(n):
            mean[j] += w * X[i, j]
    for k in range(angle_idx.shape[0]):
        j = angle_idx[k]
        s = 0.0
        c = 0.0
        for i in range(m):
            s += wm[i] * math.sin(X[i, j])
            c += wm[i] * math.cos(X[i, j])
        mean[j] = math.atan2(s, c)
    return mean


@njit(cache=True)
def predict_kernel(mean, cov, q_diag, dt, scale, wm, wc, angle_idx, n_nav,
                   gimbal_eps, jitter0):
    """One unscented prediction step.

    Returns (mean, cov, code, jitter_events); code 0 on success.
    """
    n = mean.shape[0]
    L, events, ok = _chol_with_jitter(cov, jitter0)
    if not ok:
        return mean, cov, ERR_COV, events
    X = _sigma_points(mean, L, scale)
    if not _propagate_rows(X, dt, gimbal_eps):
        return mean, cov, ERR_GIMBAL, events
    new_mean = _weighted_mean(X, wm, angle_idx)
    for j in range(n_nav, n):
        new_mean[j] = mean[j]  # constant parameters stay bit-exact
    m = X.shape[0]
    dX = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            dX[i, j] = X[i, j] - new_mean[j]
    for k in range(angle_idx.shape[0]):
        j = angle_idx[k]
        for i in range(m):
            dX[i, j] = _wrap(dX[i, j])
    new_cov = np.zeros((n, n))
    for i in range(m):
        w = wc[i]
        for a in range(n):
            da = w * dX[i, a]
            for b in range(a, n):
                new_cov[a, b] += da * dX[i, b]
    for a in range(n):
        new_cov[a, a] += q_diag[a] * dt
        for b in range(a + 1, n):
            new_cov[b, a] = new_cov[a, b]
    return new_mean, new_cov, 0, events


@njit(cache=True)
def _measurement_rows(X, kind, Z):
    """Fill Z with h(sigma point); False when geometry degenerates."""
    m = X.shape[0]
    n = X.shape[1]
    for i in range(m):
        if kind == KIND_CODE_AHRS:
            Z[i, 0] = X[i, 3]
            Z[i, 1] = X[i, 4]
            Z[i, 2] = X[i, 5]
            Z[i, 3] = X[i, 12]
            Z[i, 4] = X[i, 13]
            Z[i, 5] = X[i, 14]
            Z[i, 6] = X[i, 9]
            Z[i, 7] = X[i, 10]
            Z[i, 8] = X[i, 11]
        elif kind == KIND_CODE_AHRS_ATTITUDE_RATE:
            Z[i, 0] = X[i, 3]
            Z[i, 1] = X[i, 4]
            Z[i, 2] = X[i, 5]
            Z[i, 3] = X[i, 12]
            Z[i, 4] = X[i, 13]
            Z[i, 5] = X[i, 14]
        elif kind == KIND_CODE_DVL:
            Z[i, 0] = X[i, 6]
            Z[i, 1] = X[i, 7]
            Z[i, 2] = X[i, 8]
        elif kind == KIND_CODE_PRESSURE:
            Z[i, 0] = X[i, 2]
        elif kind == KIND_CODE_BEACON_DEPTH:
            Z[i, 0] = X[i, 17]
        else:
            R = _rotation_entries(X[i, 3], X[i, 4], X[i, 5])
            dx = X[i, 15] - X[i, 0]
            dy = X[i, 16] - X[i, 1]
            dz = X[i, 17] - X[i, 2]
            qx = R[0, 0] * dx + R[1, 0] * dy + R[2, 0] * dz
            qy = R[0, 1] * dx + R[1, 1] * dy + R[2, 1] * dz
            qz = R[0, 2] * dx + R[1, 2] * dy + R[2, 2] * dz
            if kind == KIND_CODE_DOA:
                if n >= 21:
                    A = _rotation_entries(X[i, 18], X[i, 19], X[i, 20])
                    ux = A[0, 0] * qx + A[0, 1] * qy + A[0, 2] * qz
                    uy = A[1, 0] * qx + A[1, 1] * qy + A[1, 2] * qz
                    uz = A[2, 0] * qx + A[2, 1] * qy + A[2, 2] * qz
                else:
                    ux, uy, uz = qx, qy, qz
                rho = math.sqrt(ux * ux + uy * uy + uz * uz)
                horiz = math.sqrt(ux * ux + uy * uy)
                if rho < 1e-9 or horiz < 1e-9:
                    return False
                Z[i, 0] = math.atan2(uy, ux)
                ratio = uz / rho
                if ratio > 1.0:
                    ratio = 1.0
                elif ratio < -1.0:
                    ratio = -1.0
                Z[i, 1] = math.asin(ratio)
            else:  # Doppler
                rng = math.sqrt(qx * qx + qy * qy + qz * qz)
                if rng < 1e-9:
                    return False
                Z[i, 0] = (qx * X[i, 6] + qy * X[i, 7] + qz * X[i, 8]) / rng
    return True


@njit(cache=True)
def update_kernel(mean, cov, z, r_var, kind, scale, wm, wc, angle_idx,
                  gate_mult, jitter0):
    """One gated sigma-point measurement update.

    Returns (mean, cov, code, jitter_events, innovation, gate_mask).
    """
    n = mean.shape[0]
    k = z.shape[0]
    nu = np.zeros(k)
    gate_ok = np.ones(k, dtype=np.bool_)

    L, events, ok = _chol_with_jitter(cov, jitter0)
    if not ok:
        return mean, cov, ERR_COV, events, nu, gate_ok
    X = _sigma_points(mean, L, scale)
    m = X.shape[0]
    Z = np.empty((m, k))
    if not _measurement_rows(X, kind, Z):
        return mean, cov, OUTCOME_DEGENERATE, events, nu, gate_ok

    # angle-valued measurement components: AHRS attitude, DoA bearing
    z_is_angle = np.zeros(k, dtype=np.bool_)
    if kind == KIND_CODE_AHRS or kind == KIND_CODE_AHRS_ATTITUDE_RATE:
        z_is_angle[0] = True
        z_is_angle[1] = True
        z_is_angle[2] = True
    elif kind == KIND_CODE_DOA:
        z_is_angle[0] = True

    zbar = np.zeros(k)
    for j in range(k):
        if z_is_angle[j]:
            s = 0.0
            c = 0.0
            for i in range(m):
                s += wm[i] * math.sin(Z[i, j])
                c += wm[i] * math.cos(Z[i, j])
            zbar[j] = math.atan2(s, c)
        else:
            for i in range(m):
                zbar[j] += wm[i] * Z[i, j]

    dZ = np.empty((m, k))
    for i in range(m):
        for j in range(k):
            d = Z[i, j] - zbar[j]
            if z_is_angle[j]:
                d = _wrap(d)
            dZ[i, j] = d

    S = np.zeros((k, k))
    for i in range(m):
        w = wc[i]
        for a in range(k):
            da = w * dZ[i, a]
            for b in range(a, k):
                S[a, b] += da * dZ[i, b]
    for a in range(k):
        floor = r_var[a]
        if floor < _R_FLOOR:
            floor = _R_FLOOR
        S[a, a] += floor
        for b in range(a + 1, k):
            S[b, a] = S[a, b]

    rejected = False
    for j in range(k):
        d = z[j] - zbar[j]
        if z_is_angle[j]:
            d = _wrap(d)
        nu[j] = d
        if abs(d) >= gate_mult * math.sqrt(S[j, j]):
            gate_ok[j] = False
            rejected = True
    if rejected:
        return mean, cov, OUTCOME_REJECTED, events, nu, gate_ok

    dX = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            dX[i, j] = X[i, j] - mean[j]
    for idx in range(angle_idx.shape[0]):
        j = angle_idx[idx]
        for i in range(m):
            dX[i, j] = _wrap(dX[i, j])

    Pxz = np.zeros((n, k))
    for i in range(m):
        w = wc[i]
        for a in range(n):
            da = w * dX[i, a]
            for b in range(k):
                Pxz[a, b] += da * dZ[i, b]

    K = np.linalg.solve(S, Pxz.T).T
    new_mean = mean + K @ nu
    for idx in range(angle_idx.shape[0]):
        j = angle_idx[idx]
        new_mean[j] = _wrap(new_mean[j])
    KS = K @ S
    new_cov = cov - KS @ K.T
    for a in range(n):
        for b in range(a + 1, n):
            v = 0.5 * (new_cov[a, b] + new_cov[b, a])
            new_cov[a, b] = v
            new_cov[b, a] = v
    return new_mean, new_cov, OUTCOME_APPLIED, events, nu, gate_ok
