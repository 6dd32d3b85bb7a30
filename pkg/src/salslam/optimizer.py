"""Saliency-weighted robust bundle adjustment.

The objective is ``sum_i w_i * huber(info_i * |r_i|^2)`` where ``w_i`` is the
saliency weight of observation ``i`` and ``r_i`` its reprojection residual.
Huber is applied to the *squared* error, so the robust kernel enters the
normal equations as an IRLS factor ``huber'(e_i)``.  Levenberg-Marquardt steps
eliminate the landmark block with a Schur complement.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import SingularHessian, SingularReducedSystem, TooFewObservations
from .geometry import (
    MIN_DEPTH,
    CameraIntrinsics,
    Landmark,
    Observation,
    SE3Pose,
    project_camera_points,
    residual_jacobians,
    retract,
)

log = logging.getLogger(__name__)

DEFAULT_HUBER_DELTA = math.sqrt(5.991)
INITIAL_LAMBDA_SCALE = 1e-4
LAMBDA_UP = 10.0
LAMBDA_DOWN = 0.5
MAX_REJECTIONS = 12


def huber_rho(e, delta):
    """Huber kernel on a squared residual ``e``: ``e`` up to ``delta**2``, then ``2 delta sqrt(e) - delta**2``."""
    e = np.asarray(e, dtype=float)
    d2 = delta * delta
    out = np.where(e <= d2, e, 2.0 * delta * np.sqrt(np.maximum(e, d2)) - d2)
    return float(out) if out.ndim == 0 else out


def huber_weight(e, delta):
    """Derivative of :func:`huber_rho` w.r.t. ``e``; the IRLS factor."""
    e = np.asarray(e, dtype=float)
    return np.where(e <= delta * delta, 1.0, delta / np.sqrt(np.maximum(e, delta * delta)))


@dataclass(frozen=True, eq=False)
class BAProblem:
    """Poses, landmarks and observations for one bundle adjustment.

    ``Observation.frame_id`` indexes ``poses`` and ``Observation.landmark_id``
    indexes ``landmarks``.  When no flags are given the first pose is fixed.
    """

    poses: Sequence[SE3Pose]
    landmarks: Sequence[Landmark]
    observations: Sequence[Observation]
    intrinsics: CameraIntrinsics
    pose_fixed: Sequence[bool] | None = None
    landmark_fixed: Sequence[bool] | None = None
    huber_delta: float = DEFAULT_HUBER_DELTA
    max_iterations: int = 20
    convergence_tol: float = 1e-10

    def __post_init__(self):
        poses = tuple(self.poses)
        lms = tuple(l if isinstance(l, Landmark) else Landmark(l) for l in self.landmarks)
        pf = tuple(bool(f) for f in self.pose_fixed) if self.pose_fixed is not None else \
            tuple(i == 0 for i in range(len(poses)))
        lf = tuple(bool(f) for f in self.landmark_fixed) if self.landmark_fixed is not None else \
            (False,) * len(lms)
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "landmarks", lms)
        object.__setattr__(self, "observations", tuple(self.observations))
        object.__setattr__(self, "pose_fixed", pf)
        object.__setattr__(self, "landmark_fixed", lf)
        if len(pf) != len(poses) or len(lf) != len(lms):
            raise ValueError("fixed-flag lists must match the number of poses / landmarks")
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")
        for o in self.observations:
            if not (0 <= o.frame_id < len(poses) and 0 <= o.landmark_id < len(lms)):
                raise ValueError(f"observation references missing pose {o.frame_id} "
                                 f"or landmark {o.landmark_id}")
        n_free = pf.count(False)
        if n_free >= 2 and n_free == len(pf):
            raise ValueError("gauge: at least one pose must be fixed when two or more are free")

    @property
    def landmark_array(self):
        if not self.landmarks:
            return np.zeros((0, 3))
        return np.array([l.position for l in self.landmarks])

    def with_weights(self, weights):
        obs = [replace(o, weight=float(w)) for o, w in zip(self.observations, weights)]
        return replace(self, observations=obs)


@dataclass
class SolveReport:
    final_cost: float
    iterations: int
    converged: bool
    cost_trace: list = field(default_factory=list)
    degenerate_observations: int = 0


@dataclass(frozen=True, eq=False)
class MotionEstimate:
    pose: SE3Pose
    covariance: np.ndarray
    inliers: int
    cost: float = 0.0
    iterations: int = 0


class _ObsArrays:
    """Observation data as flat arrays; zero-weight rows are dropped up front."""

    def __init__(self, observations, keep_zero_weight=False):
        obs = [o for o in observations if keep_zero_weight or o.weight > 0]
        n = len(obs)
        self.n = n
        self.pose_idx = np.fromiter((o.frame_id for o in obs), dtype=np.intp, count=n)
        self.lm_idx = np.fromiter((o.landmark_id for o in obs), dtype=np.intp, count=n)
        self.pixels = np.array([o.pixel for o in obs]).reshape(n, 2)
        self.info = np.fromiter((o.info_scalar for o in obs), dtype=float, count=n)
        self.weight = np.fromiter((o.weight for o in obs), dtype=float, count=n)


def _camera_points(Rs, ts, points, arr):
    # (R X + t) for each observation
    R = Rs[arr.pose_idx]
    X = points[arr.lm_idx]
    return np.einsum("nij,nj->ni", R, X) + ts[arr.pose_idx]


def _terms(K, Rs, ts, points, arr, delta):
    """Residuals, squared errors, per-observation cost terms and validity mask."""
    Xc = _camera_points(Rs, ts, points, arr)
    valid = Xc[:, 2] > MIN_DEPTH
    safe = np.where(valid[:, None], Xc, np.array([0.0, 0.0, 1.0]))
    r = arr.pixels - project_camera_points(K, safe)
    r[~valid] = 0.0
    e = arr.info * np.einsum("ni,ni->n", r, r)
    terms = np.where(valid, arr.weight * huber_rho(e, delta), 0.0)
    return Xc, r, e, terms, valid


def _pose_arrays(poses):
    Rs = np.array([p.R for p in poses]).reshape(-1, 3, 3)
    ts = np.array([p.translation for p in poses]).reshape(-1, 3)
    return Rs, ts


def observation_terms(problem: BAProblem):
    """Per-observation weighted robust cost and a flag for non-positive depth."""
    arr = _ObsArrays(problem.observations, keep_zero_weight=True)
    Rs, ts = _pose_arrays(problem.poses)
    _, _, _, terms, valid = _terms(problem.intrinsics, Rs, ts, problem.landmark_array, arr,
                                   problem.huber_delta)
    return terms, ~valid


def evaluate_cost(problem: BAProblem) -> float:
    terms, behind = observation_terms(problem)
    if np.any(behind):
        log.debug("%d observation(s) behind the camera contribute zero cost", int(behind.sum()))
    return float(np.sum(terms))


def cost_gradient(problem: BAProblem):
    """Analytic gradient of :func:`evaluate_cost`.

    Returns ``(pose_grad (P, 6), landmark_grad (L, 3))`` for every variable,
    fixed ones included, with poses perturbed on the left.
    """
    arr = _ObsArrays(problem.observations)
    Rs, ts = _pose_arrays(problem.poses)
    K = problem.intrinsics
    Xc, r, e, _, valid = _terms(K, Rs, ts, problem.landmark_array, arr, problem.huber_delta)
    Jp, Jl = residual_jacobians(K, Rs[arr.pose_idx], np.where(valid[:, None], Xc, 1.0))
    w = np.where(valid, arr.weight * huber_weight(e, problem.huber_delta) * arr.info, 0.0)
    gp = 2.0 * np.einsum("n,nij,ni->nj", w, Jp, r)
    gl = 2.0 * np.einsum("n,nij,ni->nj", w, Jl, r)
    pose_grad = np.zeros((len(problem.poses), 6))
    lm_grad = np.zeros((len(problem.landmarks), 3))
    np.add.at(pose_grad, arr.pose_idx, gp)
    np.add.at(lm_grad, arr.lm_idx, gl)
    return pose_grad, lm_grad


@dataclass
class NormalEquations:
    """Gauss-Newton system ``H dx = b`` split into pose (p) and landmark (l) blocks."""

    Hpp: np.ndarray  # (P, P, 6, 6)
    Hll: np.ndarray  # (L, 3, 3)
    Hpl: np.ndarray  # (P, L, 6, 3)
    bp: np.ndarray  # (P, 6)
    bl: np.ndarray  # (L, 3)

    @property
    def n_poses(self):
        return self.bp.shape[0]

    @property
    def n_landmarks(self):
        return self.bl.shape[0]

    def max_diagonal(self):
        d = [0.0]
        if self.n_poses:
            d.append(np.max(np.einsum("ppii->pi", self.Hpp)))
        if self.n_landmarks:
            d.append(np.max(np.einsum("lii->li", self.Hll)))
        return float(max(d))

    def dense(self):
        P, L = self.n_poses, self.n_landmarks
        n = 6 * P + 3 * L
        H = np.zeros((n, n))
        H[:6 * P, :6 * P] = self.Hpp.transpose(0, 2, 1, 3).reshape(6 * P, 6 * P)
        Hpl = self.Hpl.transpose(0, 2, 1, 3).reshape(6 * P, 3 * L)
        H[:6 * P, 6 * P:] = Hpl
        H[6 * P:, :6 * P] = Hpl.T
        for l in range(L):
            H[6 * P + 3 * l:6 * P + 3 * l + 3, 6 * P + 3 * l:6 * P + 3 * l + 3] = self.Hll[l]
        return H, np.concatenate((self.bp.ravel(), self.bl.ravel()))


def _build_normal_equations(K, Rs, ts, points, arr, delta, pose_map, lm_map):
    """Accumulate the weighted normal equations.

    ``pose_map`` / ``lm_map`` send problem indices to free-variable indices (-1
    for fixed).  Returns the system and the current cost.
    """
    Xc, r, e, terms, valid = _terms(K, Rs, ts, points, arr, delta)
    Jp, Jl = residual_jacobians(K, Rs[arr.pose_idx], np.where(valid[:, None], Xc, 1.0))
    # saliency weight, robust IRLS factor and pixel information in one scalar
    w = np.where(valid, arr.weight * huber_weight(e, delta) * arr.info, 0.0)

    P = int(pose_map.max(initial=-1)) + 1
    L = int(lm_map.max(initial=-1)) + 1
    fp = pose_map[arr.pose_idx]
    fl = lm_map[arr.lm_idx]
    Hpp = np.zeros((P, P, 6, 6))
    Hll = np.zeros((L, 3, 3))
    Hpl = np.zeros((P, L, 6, 3))
    bp = np.zeros((P, 6))
    bl = np.zeros((L, 3))

    mp = fp >= 0
    ml = fl >= 0
    if mp.any():
        np.add.at(Hpp, (fp[mp], fp[mp]),
                  np.einsum("n,nki,nkj->nij", w[mp], Jp[mp], Jp[mp]))
        np.add.at(bp, fp[mp], -np.einsum("n,nki,nk->ni", w[mp], Jp[mp], r[mp]))
    if ml.any():
        np.add.at(Hll, fl[ml], np.einsum("n,nki,nkj->nij", w[ml], Jl[ml], Jl[ml]))
        np.add.at(bl, fl[ml], -np.einsum("n,nki,nk->ni", w[ml], Jl[ml], r[ml]))
    both = mp & ml
    if both.any():
        np.add.at(Hpl, (fp[both], fl[both]),
                  np.einsum("n,nki,nkj->nij", w[both], Jp[both], Jl[both]))
    return NormalEquations(Hpp, Hll, Hpl, bp, bl), float(np.sum(terms)), int((~valid).sum())


def schur_step(ne: NormalEquations, mu: float):
    """Solve ``(H + mu I) dx = b`` eliminating the block-diagonal landmark part."""
    P, L = ne.n_poses, ne.n_landmarks
    eye3 = np.eye(3)
    if L:
        Hll_inv = np.linalg.inv(ne.Hll + mu * eye3)
    if P == 0:
        return np.zeros((0, 6)), np.einsum("lij,lj->li", Hll_inv, ne.bl)

    S = ne.Hpp.transpose(0, 2, 1, 3).reshape(6 * P, 6 * P) + mu * np.eye(6 * P)
    rhs = ne.bp.ravel().copy()
    if L:
        Y = np.einsum("plab,lbc->plac", ne.Hpl, Hll_inv)
        S -= np.einsum("plac,qldc->paqd", Y, ne.Hpl).reshape(6 * P, 6 * P)
        rhs -= np.einsum("plac,lc->pa", Y, ne.bl).ravel()
    S = 0.5 * (S + S.T)
    try:
        dp = cho_solve(cho_factor(S), rhs)
    except LinAlgError as exc:
        raise SingularReducedSystem("reduced camera system is not positive definite") from exc
    if not np.all(np.isfinite(dp)):
        raise SingularReducedSystem("reduced camera system produced a non-finite step")
    dp = dp.reshape(P, 6)
    if not L:
        return dp, np.zeros((0, 3))
    dl = np.einsum("lij,lj->li", Hll_inv, ne.bl - np.einsum("plai,pa->li", ne.Hpl, dp))
    return dp, dl


def dense_step(ne: NormalEquations, mu: float):
    """Reference solve of the full damped system; used to cross-check :func:`schur_step`."""
    H, b = ne.dense()
    dx = np.linalg.solve(H + mu * np.eye(len(b)), b)
    P = ne.n_poses
    return dx[:6 * P].reshape(P, 6), dx[6 * P:].reshape(-1, 3)


class _BAState:
    """Mutable solver state for one solve; never escapes :func:`solve_local_ba`."""

    def __init__(self, problem: BAProblem):
        self.problem = problem
        self.poses = list(problem.poses)
        self.points = problem.landmark_array.copy()
        self.arr = _ObsArrays(problem.observations)
        self.free_poses = [i for i, f in enumerate(problem.pose_fixed) if not f]
        self.free_lms = [i for i, f in enumerate(problem.landmark_fixed) if not f]
        self.pose_map = np.full(len(self.poses), -1, dtype=np.intp)
        self.pose_map[self.free_poses] = np.arange(len(self.free_poses))
        self.lm_map = np.full(len(self.points), -1, dtype=np.intp)
        self.lm_map[self.free_lms] = np.arange(len(self.free_lms))

    def arrays(self, poses=None):
        return _pose_arrays(self.poses if poses is None else poses)

    def cost(self, poses, points):
        Rs, ts = _pose_arrays(poses)
        _, _, _, terms, _ = _terms(self.problem.intrinsics, Rs, ts, points, self.arr,
                                   self.problem.huber_delta)
        return float(np.sum(terms))

    def linearize(self):
        Rs, ts = self.arrays()
        return _build_normal_equations(self.problem.intrinsics, Rs, ts, self.points, self.arr,
                                       self.problem.huber_delta, self.pose_map, self.lm_map)

    def candidate(self, dp, dl):
        poses = list(self.poses)
        for k, i in enumerate(self.free_poses):
            poses[i] = retract(poses[i], dp[k])
        points = self.points.copy()
        if self.free_lms:
            points[self.free_lms] += dl
        return poses, points


def normal_equations(problem: BAProblem) -> NormalEquations:
    return _BAState(problem).linearize()[0]


def compute_step(problem: BAProblem, mu: float, method: str = "schur"):
    """One damped Gauss-Newton step for the free variables of ``problem``."""
    ne = normal_equations(problem)
    if method == "schur":
        return schur_step(ne, mu)
    if method == "dense":
        return dense_step(ne, mu)
    raise ValueError(f"unknown step method {method!r}")


def solve_local_ba(problem: BAProblem):
    """Levenberg-Marquardt over the free poses and landmarks.

    Returns ``(updated_problem, SolveReport)``.  Fixed variables are passed
    through untouched; accepted steps strictly decrease the cost.
    """
    st = _BAState(problem)
    cost = st.cost(st.poses, st.points)
    report = SolveReport(final_cost=cost, iterations=0, converged=False, cost_trace=[cost])
    if not st.free_poses and not st.free_lms:
        report.converged = True
        return problem, report

    mu = None
    for _ in range(problem.max_iterations):
        if cost == 0.0:
            report.converged = True
            break
        ne, _, n_bad = st.linearize()
        report.degenerate_observations = n_bad
        if mu is None:
            mu = INITIAL_LAMBDA_SCALE * ne.max_diagonal()
            if mu == 0.0:
                raise SingularReducedSystem("normal equations carry no information")
        accepted = False
        for _ in range(MAX_REJECTIONS):
            try:
                dp, dl = schur_step(ne, mu)
            except SingularReducedSystem:
                # too little damping for the reduced system: treat as a rejected step
                mu *= LAMBDA_UP
                continue
            poses, points = st.candidate(dp, dl)
            new_cost = st.cost(poses, points)
            if new_cost < cost:
                accepted = True
                mu *= LAMBDA_DOWN
                break
            mu *= LAMBDA_UP
        report.iterations += 1
        if not accepted:
            # no descent direction left at this damping range: numerically converged
            report.converged = True
            break
        st.poses, st.points = poses, points
        decrease = cost - new_cost
        cost = new_cost
        report.cost_trace.append(cost)
        if decrease <= problem.convergence_tol * (cost + decrease):
            report.converged = True
            break

    report.final_cost = cost
    updated = replace(problem, poses=st.poses,
                      landmarks=[Landmark(p) if not f else l
                                 for p, f, l in zip(st.points, problem.landmark_fixed,
                                                    problem.landmarks)])
    return updated, report


# --- motion-only estimation ---------------------------------------------------------

def _landmark_positions(observations, landmarks):
    # works for both sequences and id -> position mappings
    pts = [landmarks[o.landmark_id] for o in observations]
    pts = [p.position if isinstance(p, Landmark) else p for p in pts]
    return np.array(pts, dtype=float).reshape(-1, 3)


def _motion_system(K, pose, X, arr, delta):
    Xc = X @ pose.R.T + pose.translation
    valid = Xc[:, 2] > MIN_DEPTH
    safe = np.where(valid[:, None], Xc, np.array([0.0, 0.0, 1.0]))
    r = arr.pixels - project_camera_points(K, safe)
    r[~valid] = 0.0
    e = arr.info * np.einsum("ni,ni->n", r, r)
    cost = float(np.sum(np.where(valid, arr.weight * huber_rho(e, delta), 0.0)))
    Jp, _ = residual_jacobians(K, pose.R, safe)
    w = np.where(valid, arr.weight * huber_weight(e, delta) * arr.info, 0.0)
    H = np.einsum("n,nki,nkj->ij", w, Jp, Jp)
    b = -np.einsum("n,nki,nk->i", w, Jp, r)
    return H, b, cost, e, valid


def _motion_cost(K, pose, X, arr, delta):
    Xc = X @ pose.R.T + pose.translation
    valid = Xc[:, 2] > MIN_DEPTH
    safe = np.where(valid[:, None], Xc, np.array([0.0, 0.0, 1.0]))
    r = arr.pixels - project_camera_points(K, safe)
    e = arr.info * np.einsum("ni,ni->n", r, r)
    return float(np.sum(np.where(valid, arr.weight * huber_rho(e, delta), 0.0)))


def motion_only_ba(observations: Sequence[Observation], landmarks, initial_pose: SE3Pose,
                   intrinsics: CameraIntrinsics, huber_delta: float = DEFAULT_HUBER_DELTA,
                   max_iterations: int = 20, convergence_tol: float = 1e-10,
                   min_observations: int = 6) -> MotionEstimate:
    """Refine one camera pose against fixed landmarks and report its covariance.

    ``landmarks`` is indexed by ``Observation.landmark_id`` (sequence or mapping).
    The covariance is the inverse of the undamped Gauss-Newton matrix
    ``J^T W J`` at the final iterate, in left-twist coordinates.
    """
    arr = _ObsArrays(observations)
    kept = [o for o in observations if o.weight > 0]
    X = _landmark_positions(kept, landmarks)
    if arr.n:
        in_front = (X @ initial_pose.R.T + initial_pose.translation)[:, 2] > MIN_DEPTH
        usable = int(in_front.sum())
    else:
        usable = 0
    if usable < min_observations:
        raise TooFewObservations(f"{usable} usable observations, need {min_observations}")

    K = intrinsics
    pose = initial_pose
    H, b, cost, e, valid = _motion_system(K, pose, X, arr, huber_delta)
    mu = INITIAL_LAMBDA_SCALE * float(np.max(np.diag(H))) if H.any() else 0.0
    iterations = 0
    for _ in range(max_iterations):
        if cost == 0.0 or mu == 0.0:
            break
        accepted = False
        for _ in range(MAX_REJECTIONS):
            try:
                dx = np.linalg.solve(H + mu * np.eye(6), b)
            except np.linalg.LinAlgError:
                mu *= LAMBDA_UP
                continue
            cand = retract(pose, dx)
            new_cost = _motion_cost(K, cand, X, arr, huber_delta)
            if new_cost < cost:
                accepted = True
                mu *= LAMBDA_DOWN
                break
            mu *= LAMBDA_UP
        iterations += 1
        if not accepted:
            break
        pose = cand
        decrease = cost - new_cost
        H, b, cost, e, valid = _motion_system(K, pose, X, arr, huber_delta)
        if decrease <= convergence_tol * (cost + decrease):
            break

    if int(valid.sum()) < min_observations:
        raise TooFewObservations(f"only {int(valid.sum())} observations in front of the camera")
    evals = np.linalg.eigvalsh(0.5 * (H + H.T))
    if not (evals[0] > 1e-12 * max(evals[-1], 0.0) and evals[-1] > 0):
        raise SingularHessian(f"pose Hessian is rank deficient (eigenvalues {evals[0]:.3g} .. "
                              f"{evals[-1]:.3g})")
    cov = np.linalg.inv(H)
    cov = 0.5 * (cov + cov.T)
    inliers = int(np.sum(valid & (e <= huber_delta * huber_delta)))
    return MotionEstimate(pose, cov, inliers, cost, iterations)
