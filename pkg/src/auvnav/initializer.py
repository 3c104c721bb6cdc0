"""Calibration bootstrap: accumulate acoustic constraints against
dead-reckoned vehicle states, then solve a robust nonlinear least-squares
problem for the beacon position and array misalignment.

The cost is the squared Mahalanobis norm of a Gaussian prior on the
6-vector ``gamma = [beacon_world, misalignment]`` plus one whitened
residual block per accumulated DoA / Doppler / beacon-depth constraint.
Dead-reckoning errors over the (short) accumulation window are ignored by
design: the recorded vehicle states enter the residuals as constants.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import euler_to_rotation, wrap_angle
from .models import (
    ATT,
    KIND_BEACON_DEPTH,
    KIND_DOA,
    KIND_DOPPLER,
    POS,
    VEL,
    euler_rotation_partials,
)
from . import observability

_ACOUSTIC_KINDS = (KIND_DOA, KIND_DOPPLER, KIND_BEACON_DEPTH)


class DegenerateProblemError(RuntimeError):
    """Constraint geometry cannot determine gamma; carries a diagnosis."""

    def __init__(self, message, diagnosis=None):
        super().__init__(message)
        self.diagnosis = diagnosis


class NoConsensusError(RuntimeError):
    """RANSAC failed to find a usable inlier set."""


# Whitening floor so zero-noise channels stay well-posed. Sized to the
# numerical noise of the dead-reckoned states the constraints treat as
# exact, so the Gauss-Newton covariance stays honest in noiseless runs.
_SIGMA_FLOOR = 1e-6


@dataclass
class InitConstraint:
    """One acoustic measurement paired with the DR state at its time."""

    t: float
    kind: str
    values: np.ndarray
    noise: tuple
    nav_state: np.ndarray  # 15-vector
    corrupted: bool = False  # simulator ground truth, never read by solvers

    def sigma_vector(self):
        return np.array([max(n.scale, _SIGMA_FLOOR) for n in self.noise])


@dataclass
class InitProblem:
    prior_gamma: np.ndarray
    prior_cov: np.ndarray
    constraints: list
    min_constraints: int = 12


@dataclass
class InitSolution:
    gamma: np.ndarray
    cov_estimate: np.ndarray
    inlier_mask: np.ndarray
    final_cost: float
    iterations: int
    converged: bool
    cost_history: list = field(default_factory=list)
    degenerate_rows: int = 0


@dataclass
class NlsOptions:
    max_iterations: int = 200
    gradient_tol: float = 1e-8
    cost_tol: float = 1e-12
    step_tol: float = 1e-12
    damping0: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    rank_tol: float = 1e-9


@dataclass
class RansacOptions:
    iterations: int = 200
    inlier_threshold: float = 3.0
    minimal_set: int = 3
    min_inlier_fraction: float = 0.5
    seed: int = 0


@dataclass
class LmResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool
    cost_history: list
    normal_matrix: np.ndarray


def levenberg_marquardt(fun, x0, options=None, wrap=None):
    """Damped Gauss-Newton minimization of ``sum(r**2)``.

    ``fun(x)`` returns the stacked residual vector and its Jacobian.
    ``wrap`` optionally normalizes the iterate after each step (angle
    wrapping). Damping scales the diagonal of the normal matrix; it grows
    on rejected steps and shrinks on accepted ones.
    """
    opts = options or NlsOptions()
    x = np.array(x0, dtype=float)
    if wrap is not None:
        x = wrap(x)
    r, J = fun(x)
    cost = float(r @ r)
    history = [cost]
    lam = opts.damping0
    converged = False
    iterations = 0
    while iterations < opts.max_iterations:
        iterations += 1
        g = J.T @ r
        if np.max(np.abs(g)) < opts.gradient_tol:
            converged = True
            break
        H = J.T @ J
        D = np.diag(np.maximum(np.diag(H), 1e-12))
        try:
            dx = np.linalg.solve(H + lam * D, -g)
        except np.linalg.LinAlgError:
            lam *= opts.damping_up
            continue
        if np.linalg.norm(dx) <= opts.step_tol * (np.linalg.norm(x) + opts.step_tol):
            converged = True  # step at numerical resolution
            break
        x_new = x + dx
        if wrap is not None:
            x_new = wrap(x_new)
        r_new, J_new = fun(x_new)
        cost_new = float(r_new @ r_new)
        if cost_new < cost:
            decrease = cost - cost_new
            x, r, J, cost = x_new, r_new, J_new, cost_new
            history.append(cost)
            lam = max(lam / opts.damping_down, 1e-12)
            if decrease < opts.cost_tol:
                converged = True
                break
        else:
            lam *= opts.damping_up
            if lam > 1e12:
                break
    return LmResult(x, cost, iterations, converged, history, J.T @ J)


class _Prepared:
    """Constraint data unpacked into arrays for fast re-evaluation."""

    def __init__(self, problem, subset=None):
        constraints = problem.constraints
        if subset is not None:
            constraints = [constraints[i] for i in subset]
        self.constraints = constraints
        self.prior_gamma = np.asarray(problem.prior_gamma, dtype=float)
        prior_cov = np.asarray(problem.prior_cov, dtype=float)
        L = np.linalg.cholesky(prior_cov)
        self.prior_whitener = np.linalg.solve(L, np.eye(6))

        doa, dop, dep = [], [], []
        for i, c in enumerate(constraints):
            if c.kind == KIND_DOA:
                doa.append(i)
            elif c.kind == KIND_DOPPLER:
                dop.append(i)
            elif c.kind == KIND_BEACON_DEPTH:
                dep.append(i)
            else:
                raise ValueError("unsupported constraint kind %r" % (c.kind,))
        self.doa_idx, self.dop_idx, self.dep_idx = doa, dop, dep

        def _stack(idx, pick, width):
            if not idx:
                return np.zeros((0, width))
            return np.array([pick(constraints[i]) for i in idx], dtype=float)

        self.doa_pos = _stack(doa, lambda c: c.nav_state[POS], 3)
        self.doa_rot = euler_to_rotation(_stack(doa, lambda c: c.nav_state[ATT], 3))
        self.doa_z = _stack(doa, lambda c: c.values, 2)
        self.doa_sigma = _stack(doa, lambda c: c.sigma_vector(), 2)

        self.dop_pos = _stack(dop, lambda c: c.nav_state[POS], 3)
        self.dop_rot = euler_to_rotation(_stack(dop, lambda c: c.nav_state[ATT], 3))
        self.dop_vel = _stack(dop, lambda c: c.nav_state[VEL], 3)
        self.dop_z = _stack(dop, lambda c: c.values, 1)[:, 0]
        self.dop_sigma = _stack(dop, lambda c: c.sigma_vector(), 1)[:, 0]

        self.dep_z = _stack(dep, lambda c: c.values, 1)[:, 0]
        self.dep_sigma = _stack(dep, lambda c: c.sigma_vector(), 1)[:, 0]

        # residual-row bookkeeping: prior first, then constraints in order
        self.n_rows = 6
        self.row_of = []
        for c in constraints:
            self.row_of.append(self.n_rows)
            self.n_rows += 2 if c.kind == KIND_DOA else 1


def _evaluate(prepared, gamma):
    """Whitened residual vector and Jacobian at gamma.

    Residual convention: (predicted - measured) / scale, DoA bearings
    wrapped. Rows of constraints whose geometry degenerates (beacon at a
    recorded vehicle position) are zeroed and counted.
    """
    gamma = np.asarray(gamma, dtype=float)
    beacon, delta = gamma[:3], gamma[3:6]
    r = np.zeros(prepared.n_rows)
    J = np.zeros((prepared.n_rows, 6))
    degenerate = 0

    W = prepared.prior_whitener
    r[0:6] = W @ (gamma - prepared.prior_gamma)
    J[0:6, :] = W

    if prepared.doa_idx:
        A = euler_to_rotation(delta)
        dA = euler_rotation_partials(delta)
        q = np.einsum("mji,j->mi", prepared.doa_rot, beacon) - np.einsum(
            "mji,mj->mi", prepared.doa_rot, prepared.doa_pos
        )
        u = q @ A.T
        h2 = u[:, 0] ** 2 + u[:, 1] ** 2
        rho2 = h2 + u[:, 2] ** 2
        ok = (rho2 > 1e-18) & (h2 > 1e-18)
        h = np.sqrt(np.where(ok, h2, 1.0))
        theta = np.arctan2(u[:, 1], u[:, 0])
        phi = np.arcsin(np.clip(u[:, 2] / np.sqrt(np.where(ok, rho2, 1.0)), -1, 1))
        dtheta_du = np.stack(
            [-u[:, 1] / h2, u[:, 0] / h2, np.zeros(len(u))], axis=1
        )
        dphi_du = np.stack(
            [-u[:, 0] * u[:, 2], -u[:, 1] * u[:, 2], h2], axis=1
        ) / (rho2 * h)[:, None]
        # du/dbeacon = A R^T ; du/ddelta_k = dA_k q
        ARt = np.einsum("ij,mkj->mik", A, prepared.doa_rot)
        dAq = np.einsum("kij,mj->mki", dA, q)
        for n, (idx, ok_i) in enumerate(zip(prepared.doa_idx, ok)):
            row = prepared.row_of[idx]
            if not ok_i:
                degenerate += 1
                continue
            st, se = prepared.doa_sigma[n]
            r[row] = wrap_angle(theta[n] - prepared.doa_z[n, 0]) / st
            r[row + 1] = (phi[n] - prepared.doa_z[n, 1]) / se
            J[row, :3] = (dtheta_du[n] @ ARt[n]) / st
            J[row, 3:] = (dAq[n] @ dtheta_du[n]) / st
            J[row + 1, :3] = (dphi_du[n] @ ARt[n]) / se
            J[row + 1, 3:] = (dAq[n] @ dphi_du[n]) / se

    if prepared.dop_idx:
        q = np.einsum("mji,j->mi", prepared.dop_rot, beacon) - np.einsum(
            "mji,mj->mi", prepared.dop_rot, prepared.dop_pos
        )
        rng = np.linalg.norm(q, axis=1)
        ok = rng > 1e-9
        rng_safe = np.where(ok, rng, 1.0)
        s = np.einsum("mi,mi->m", q, prepared.dop_vel) / rng_safe
        ds_dq = (
            prepared.dop_vel / rng_safe[:, None]
            - (s / rng_safe**2)[:, None] * q
        )
        ds_db = np.einsum("mi,mji->mj", ds_dq, prepared.dop_rot)
        for n, (idx, ok_i) in enumerate(zip(prepared.dop_idx, ok)):
            row = prepared.row_of[idx]
            if not ok_i:
                degenerate += 1
                continue
            sig = prepared.dop_sigma[n]
            r[row] = (s[n] - prepared.dop_z[n]) / sig
            J[row, :3] = ds_db[n] / sig

    for n, idx in enumerate(prepared.dep_idx):
        row = prepared.row_of[idx]
        sig = prepared.dep_sigma[n]
        r[row] = (beacon[2] - prepared.dep_z[n]) / sig
        J[row, 2] = 1.0 / sig

    return r, J, degenerate


def residuals_and_jacobian(gamma, problem):
    """Stacked whitened residuals and analytic Jacobian at gamma.

    Row order: prior (6 rows), then per constraint in list order (DoA two
    rows, Doppler and depth one each).
    """
    r, J, _ = _evaluate(_Prepared(problem), gamma)
    return r, J


def _wrap_gamma(gamma):
    out = np.array(gamma, dtype=float)
    out[3:6] = wrap_angle(out[3:6])
    return out


def _check_rank(prepared, gamma, rank_tol):
    """Fail fast when the measurement geometry cannot pin gamma down."""
    r, J, _ = _evaluate(prepared, gamma)
    J_meas = J[6:]
    if J_meas.shape[0] < 6:
        return
    s = np.linalg.svd(J_meas, compute_uv=False)
    if s[5] < rank_tol * s[0]:
        diagnosis = None
        if prepared.doa_idx:
            con_set = observability.DoaConstraintSet(
                positions=prepared.doa_pos,
                rotations=prepared.doa_rot,
                directions=_doa_directions(prepared),
                gamma=gamma,
            )
            diagnosis = observability.build_jacobian(con_set).diagnosis
        raise DegenerateProblemError(
            "rank-deficient constraint geometry (diagnosis: %s)" % diagnosis,
            diagnosis=diagnosis,
        )


def _doa_directions(prepared):
    z = prepared.doa_z
    ct = np.cos(z[:, 1])
    return np.stack(
        [ct * np.cos(z[:, 0]), ct * np.sin(z[:, 0]), np.sin(z[:, 1])], axis=1
    )


def solve_nls(problem, options=None, check_rank=True):
    """Levenberg-Marquardt solution of the initialization cost.

    Raises :class:`DegenerateProblemError` when the constraint Jacobian is
    rank-deficient at the prior (same-position / collinear geometry).
    """
    opts = options or NlsOptions()
    prepared = _Prepared(problem)
    if check_rank and prepared.constraints:
        _check_rank(prepared, _wrap_gamma(problem.prior_gamma), opts.rank_tol)

    degenerate_rows = [0]

    def fun(g):
        r, J, ndeg = _evaluate(prepared, g)
        degenerate_rows[0] = ndeg
        return r, J

    result = levenberg_marquardt(fun, problem.prior_gamma, opts, wrap=_wrap_gamma)
    H = result.normal_matrix
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(H)
    return InitSolution(
        gamma=result.x,
        cov_estimate=cov,
        inlier_mask=np.ones(len(problem.constraints), dtype=bool),
        final_cost=result.cost,
        iterations=result.iterations,
        converged=result.converged,
        cost_history=result.cost_history,
        degenerate_rows=degenerate_rows[0],
    )


def constraint_residual_norms(problem, gamma):
    """Whitened residual norm per constraint at a fixed gamma."""
    prepared = _Prepared(problem)
    r, _, _ = _evaluate(prepared, gamma)
    norms = np.zeros(len(problem.constraints))
    for i, c in enumerate(problem.constraints):
        row = prepared.row_of[i]
        if c.kind == KIND_DOA:
            norms[i] = math.hypot(r[row], r[row + 1])
        else:
            norms[i] = abs(r[row])
    return norms


def solve_ransac(problem, ransac_options=None, nls_options=None):
    """RANSAC over DoA minimal sets, then a full solve on the consensus.

    Minimal sets are sampled from the DoA constraints only; Doppler and
    depth constraints participate in consensus scoring and in the final
    solve. Deterministic for a fixed ``ransac_options.seed``.
    """
    r_opts = ransac_options or RansacOptions()
    n_opts = nls_options or NlsOptions()
    doa_idx = [
        i for i, c in enumerate(problem.constraints) if c.kind == KIND_DOA
    ]
    n_doa = len(doa_idx)
    if n_doa < r_opts.minimal_set:
        raise NoConsensusError(
            "need at least %d DoA constraints, have %d"
            % (r_opts.minimal_set, n_doa)
        )
    rng = np.random.default_rng(r_opts.seed)
    best = None  # (n_inliers, -inlier_rss, -iteration, mask)
    for it in range(r_opts.iterations):
        sample = rng.choice(doa_idx, size=r_opts.minimal_set, replace=False)
        sub = InitProblem(
            problem.prior_gamma,
            problem.prior_cov,
            [problem.constraints[i] for i in sample],
            min_constraints=r_opts.minimal_set,
        )
        try:
            candidate = solve_nls(sub, n_opts, check_rank=True)
        except (DegenerateProblemError, np.linalg.LinAlgError):
            continue
        norms = constraint_residual_norms(problem, candidate.gamma)
        mask = norms < r_opts.inlier_threshold
        rss = float(np.sum(norms[mask] ** 2))
        key = (int(np.count_nonzero(mask)), -rss, -it)
        if best is None or key > best[0]:
            best = (key, mask)
    if best is None:
        raise NoConsensusError("no RANSAC candidate solve succeeded")
    mask = best[1]
    doa_inliers = int(np.count_nonzero(mask[doa_idx]))
    needed = max(r_opts.minimal_set, math.ceil(r_opts.min_inlier_fraction * n_doa))
    if doa_inliers < needed:
        raise NoConsensusError(
            "best consensus has %d DoA inliers of %d (need %d)"
            % (doa_inliers, n_doa, needed)
        )
    subset = np.flatnonzero(mask)
    final_problem = InitProblem(
        problem.prior_gamma,
        problem.prior_cov,
        [problem.constraints[i] for i in subset],
        min_constraints=problem.min_constraints,
    )
    solution = solve_nls(final_problem, n_opts, check_rank=True)
    solution.inlier_mask = mask
    return solution


@dataclass
class InitReport:
    """Summary of a completed initialization, for logging."""

    t_start: float
    t_end: float
    gamma: np.ndarray
    cov: np.ndarray
    n_constraints: int
    n_inliers: int
    iterations: int
    converged: bool
    final_cost: float


class ConstraintAccumulator:
    """Collects acoustic constraints until the geometry supports a solve.

    Readiness requires ``min_constraints`` DoA constraints and a
    non-degenerate constraint Jacobian (smallest-to-largest singular value
    ratio above ``min_svd_ratio``), so a stationary vehicle never
    triggers a doomed initialization.
    """

    def __init__(
        self,
        min_constraints=12,
        min_svd_ratio=1e-6,
        prior_beacon_std=50.0,
        prior_misalign_std=math.radians(10.0),
        fallback_range=50.0,
    ):
        self.min_constraints = min_constraints
        self.min_svd_ratio = min_svd_ratio
        self.prior_beacon_std = prior_beacon_std
        self.prior_misalign_std = prior_misalign_std
        self.fallback_range = fallback_range
        self.constraints = []

    def add(self, record, nav_state):
        """Append an acoustic record paired with the DR state at its time."""
        if record.kind not in _ACOUSTIC_KINDS:
            raise ValueError("not an acoustic record: %r" % (record.kind,))
        self.constraints.append(
            InitConstraint(
                t=record.t,
                kind=record.kind,
                values=np.array(record.values, dtype=float),
                noise=record.noise,
                nav_state=np.array(nav_state, dtype=float),
                corrupted=record.corrupted,
            )
        )

    @property
    def n_doa(self):
        return sum(1 for c in self.constraints if c.kind == KIND_DOA)

    def window(self):
        if not self.constraints:
            return (0.0, 0.0)
        ts = [c.t for c in self.constraints]
        return (min(ts), max(ts))

    def prior(self):
        """Prior gamma and covariance seeded from the first DoA ray."""
        gamma0 = np.zeros(6)
        first_doa = next(
            (c for c in self.constraints if c.kind == KIND_DOA), None
        )
        depth = next(
            (c.values[0] for c in self.constraints if c.kind == KIND_BEACON_DEPTH),
            None,
        )
        if first_doa is not None:
            theta, phi = first_doa.values
            d_body = np.array(
                [np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)]
            )
            R = euler_to_rotation(first_doa.nav_state[ATT])
            d_world = R @ d_body
            p = first_doa.nav_state[POS]
            rng = self.fallback_range
            if depth is not None and abs(d_world[2]) > 0.05:
                rng = np.clip((depth - p[2]) / d_world[2], 5.0, 500.0)
            gamma0[:3] = p + rng * d_world
            if depth is not None:
                gamma0[2] = depth
        cov0 = np.diag(
            [self.prior_beacon_std**2] * 3 + [self.prior_misalign_std**2] * 3
        )
        return gamma0, cov0

    def geometry_ratio(self):
        """Singular-value ratio of the DoA constraint Jacobian at the prior."""
        doa = [c for c in self.constraints if c.kind == KIND_DOA]
        if len(doa) < 3:
            return 0.0
        gamma0, _ = self.prior()
        z = np.array([c.values for c in doa])
        ct = np.cos(z[:, 1])
        directions = np.stack(
            [ct * np.cos(z[:, 0]), ct * np.sin(z[:, 0]), np.sin(z[:, 1])], axis=1
        )
        con_set = observability.DoaConstraintSet(
            positions=np.array([c.nav_state[POS] for c in doa]),
            rotations=euler_to_rotation(np.array([c.nav_state[ATT] for c in doa])),
            directions=directions,
            gamma=gamma0,
        )
        return observability.build_jacobian(con_set).ratio

    def ready(self):
        if self.n_doa < self.min_constraints:
            return False
        return self.geometry_ratio() >= self.min_svd_ratio

    def build_problem(self):
        gamma0, cov0 = self.prior()
        return InitProblem(
            prior_gamma=gamma0,
            prior_cov=cov0,
            constraints=list(self.constraints),
            min_constraints=self.min_constraints,
        )
