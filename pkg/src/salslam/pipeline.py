"""Synthetic scenarios and the sequential odometry loop.

A scenario is a static landmark field watched by a moving pinhole camera.
Salient landmarks are measured with low pixel noise and carry a saliency blob
in every frame that sees them; plain landmarks are noisier.  The odometry
loop tracks each frame against the current map with motion-only BA, gates
keyframes on the entropy ratio of the motion covariance and refines a window
of keyframes with weighted local BA.

Everything random comes from a counter-based generator keyed by
``(seed, stream)`` so a frame can be rendered on its own and the result does
not depend on call order.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .entropy import (
    EntropyGateConfig,
    KeyframeRecord,
    average_entropy,
    differential_entropy,
    entropy_ratio,
    keyframe_decision,
)
from .errors import (
    InputError,
    NonPositiveDeterminant,
    SingularHessian,
    TooFewKeyframes,
    TooFewObservations,
    TrackingLost,
    ZeroDenominator,
)
from .evaluation import Trajectory
from .geometry import CameraIntrinsics, Landmark, Observation, SE3Pose
from .optimizer import DEFAULT_HUBER_DELTA, BAProblem, motion_only_ba, solve_local_ba
from .saliency import DEFAULT_B, SaliencyBlobSpec, SaliencyMap, synthesize_map, weights_at

log = logging.getLogger(__name__)

FRAME_RATE_HZ = 20.0
SALIENCY_BACKGROUND = 20
MIN_VISIBLE_DEPTH = 0.1
MIN_TRACKED = 6
TRACKED_RATIO_THRESHOLD = 0.8
MAX_FRAMES_BETWEEN_KEYFRAMES = 10
# residuals beyond three Huber widths are treated as gross outliers and erased
REJECT_PIXELS = 3.0 * DEFAULT_HUBER_DELTA
LOCAL_BA_ITERATIONS = (5, 10)
MIN_VIEWS_FREE = 3
TRAJECTORY_KINDS = ("circle", "lissajous", "line")
WEIGHTINGS = ("uniform", "saliency")

# generator streams
_STREAM_LANDMARKS = 1
_STREAM_SALIENT = 2
_STREAM_TRIANGULATION = 3
_STREAM_FRAME = 1 << 32


def _rng(seed: int, stream: int) -> np.random.Generator:
    # Philox key is 128 bits: low word seed, high word stream
    return np.random.Generator(np.random.Philox(key=(int(stream) << 64) | int(seed)))


# --- configuration ------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySpec:
    """``extent`` is the circle radius, or the half-extent of line / lissajous paths (m)."""

    kind: str = "circle"
    extent: float = 2.0
    n_frames: int = 100

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise InputError(f"trajectory kind must be one of {TRAJECTORY_KINDS}, got {self.kind!r}")
        if not self.extent > 0:
            raise InputError("trajectory extent must be positive")
        if int(self.n_frames) != self.n_frames or self.n_frames < 2:
            raise InputError("n_frames must be an integer >= 2")


DEFAULT_INTRINSICS = CameraIntrinsics(300.0, 300.0, 160.0, 120.0, 320, 240)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    n_landmarks: int = 600
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    salient_fraction: float = 0.3
    sigma_salient: float = 0.5
    sigma_plain: float = 2.0
    outlier_rate: float = 0.0
    saliency_blob_sigma: float = 6.0
    b: float = DEFAULT_B
    window: int = 5

    def __post_init__(self):
        if isinstance(self.trajectory, dict):
            object.__setattr__(self, "trajectory", TrajectorySpec(**self.trajectory))
        if isinstance(self.intrinsics, dict):
            try:
                object.__setattr__(self, "intrinsics", CameraIntrinsics(**self.intrinsics))
            except ValueError as exc:
                raise InputError(f"intrinsics: {exc}") from None
        if int(self.seed) != self.seed or not 0 <= self.seed < 2 ** 64:
            raise InputError("seed must be an unsigned 64-bit integer")
        if int(self.n_landmarks) != self.n_landmarks or self.n_landmarks < 1:
            raise InputError("n_landmarks must be a positive integer")
        if not 0 <= self.salient_fraction <= 1:
            raise InputError("salient_fraction must lie in [0, 1]")
        if not (self.sigma_salient >= 0 and self.sigma_plain >= 0):
            raise InputError("pixel noise sigmas must be non-negative")
        if not 0 <= self.outlier_rate < 1:
            raise InputError("outlier_rate must lie in [0, 1)")
        if not self.saliency_blob_sigma > 0:
            raise InputError("saliency_blob_sigma must be positive")
        if not self.b >= 0:
            raise InputError("b must be non-negative")
        if int(self.window) != self.window or self.window < 1:
            raise InputError("window must be a positive integer")

    @property
    def n_frames(self) -> int:
        return int(self.trajectory.n_frames)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        if not isinstance(doc, dict):
            raise InputError("scenario config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown scenario config fields: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise InputError(f"bad scenario config: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"scenario config is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            return cls.from_json(Path(path).read_text())
        except InputError as exc:
            raise InputError(f"{path}: {exc}") from None


# --- world -------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class World:
    """Ground truth for one scenario, expressed in the first camera's frame."""

    config: ScenarioConfig
    landmarks: np.ndarray          # (N, 3)
    salient: np.ndarray            # (N,) bool
    true_poses: tuple              # world-to-camera SE3Pose per frame
    timestamps: np.ndarray         # seconds
    saliency_maps: list            # SaliencyMap per frame
    triangulation_noise: np.ndarray  # (N, 3) unit normal draws

    @property
    def n_frames(self) -> int:
        return len(self.true_poses)

    def ground_truth(self) -> Trajectory:
        return Trajectory(self.timestamps, [p.inverse() for p in self.true_poses])

    def pixel_sigma(self) -> np.ndarray:
        c = self.config
        return np.where(self.salient, c.sigma_salient, c.sigma_plain)


@dataclass(frozen=True, eq=False)
class FrameBundle:
    frame_id: int
    timestamp: float
    true_pose: SE3Pose
    observations: list
    saliency_map: SaliencyMap
    outlier: np.ndarray = None     # (n_obs,) bool, diagnostic only


def _look_pose(center, forward, down=(0.0, 1.0, 0.0)) -> SE3Pose:
    z = np.asarray(forward, dtype=float)
    z = z / np.linalg.norm(z)
    y = np.asarray(down, dtype=float)
    y = y - z * (y @ z)
    y = y / np.linalg.norm(y)
    x = np.cross(y, z)
    R_wc = np.column_stack([x, y, z])
    R = R_wc.T
    return SE3Pose.from_matrix(R, -R @ np.asarray(center, dtype=float))


def _trajectory(spec: TrajectorySpec):
    n, a = int(spec.n_frames), float(spec.extent)
    s = np.arange(n) / n
    poses = []
    if spec.kind == "circle":
        # one loop, camera looking radially outward
        for th in 2 * np.pi * s:
            c, d = np.array([a * math.cos(th), 0.0, a * math.sin(th)]), [math.cos(th), 0.0, math.sin(th)]
            poses.append(_look_pose(c, d))
    elif spec.kind == "line":
        # straight sweep along x with a small vertical bob so alignment stays well posed
        for u in np.linspace(-1, 1, n):
            c = np.array([a * u, 0.1 * a * math.sin(math.pi * u), 0.0])
            poses.append(_look_pose(c, [0.0, 0.0, 1.0]))
    else:
        for u in 2 * np.pi * s:
            c = np.array([a * math.sin(u), 0.5 * a * math.sin(2 * u), 0.0])
            yaw = 0.15 * math.sin(u)
            poses.append(_look_pose(c, [math.sin(yaw), 0.0, math.cos(yaw)]))
    return poses


def _sample_landmarks(config: ScenarioConfig, rng) -> np.ndarray:
    spec, n = config.trajectory, config.n_landmarks
    a = float(spec.extent)
    if spec.kind == "circle":
        # box around the loop, keeping a shell outside it
        r_in, r_out = a + 2.0, a + 6.0
        out = np.empty((0, 3))
        while len(out) < n:
            P = rng.uniform([-r_out, -1.5, -r_out], [r_out, 1.5, r_out], size=(2 * n, 3))
            r = np.hypot(P[:, 0], P[:, 2])
            out = np.vstack([out, P[(r >= r_in) & (r <= r_out)]])
        return out[:n]
    lo = np.array([-a - 3.0, -1.5 - 0.5 * a, 3.0])
    hi = np.array([a + 3.0, 1.5 + 0.5 * a, 8.0])
    return rng.uniform(lo, hi, size=(n, 3))


def _visible(pose: SE3Pose, K: CameraIntrinsics, points):
    """Indices of points in front of the camera that project inside the image, plus pixels."""
    Xc = pose.apply(points)
    front = Xc[:, 2] > MIN_VISIBLE_DEPTH
    z = np.where(front, Xc[:, 2], 1.0)
    u = K.fx * Xc[:, 0] / z + K.cx
    v = K.fy * Xc[:, 1] / z + K.cy
    inside = front & (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    idx = np.flatnonzero(inside)
    return idx, np.column_stack([u[idx], v[idx]]), Xc[idx, 2]


def render_saliency(config: ScenarioConfig, pose: SE3Pose, landmarks, salient) -> SaliencyMap:
    K = config.intrinsics
    idx, px, _ = _visible(pose, K, landmarks)
    blobs = [SaliencyBlobSpec((u, v), config.saliency_blob_sigma, 255.0)
             for (u, v), j in zip(px, idx) if salient[j]]
    return synthesize_map(K.width, K.height, blobs, SALIENCY_BACKGROUND)


def generate_world(config: ScenarioConfig) -> World:
    """Landmarks, salient flags, true poses and per-frame saliency maps; deterministic in the seed."""
    raw_poses = _trajectory(config.trajectory)
    raw_points = _sample_landmarks(config, _rng(config.seed, _STREAM_LANDMARKS))
    # re-express so that the first camera sits at the origin
    anchor = raw_poses[0]
    points = anchor.apply(raw_points)
    inv = anchor.inverse()
    poses = tuple(p.compose(inv) for p in raw_poses)
    poses = (SE3Pose.identity(),) + poses[1:]

    n = config.n_landmarks
    n_salient = int(math.floor(config.salient_fraction * n + 0.5))
    salient = np.zeros(n, dtype=bool)
    salient[_rng(config.seed, _STREAM_SALIENT).permutation(n)[:n_salient]] = True
    tri = _rng(config.seed, _STREAM_TRIANGULATION).standard_normal((n, 3))

    maps = [render_saliency(config, p, points, salient) for p in poses]
    ts = np.arange(len(poses)) / FRAME_RATE_HZ
    points.flags.writeable = False
    return World(config, points, salient, poses, ts, maps, tri)


def outlier_count(n_observations: int, rate: float) -> int:
    """Number of observations replaced by outliers; halves round up."""
    return int(math.floor(rate * n_observations + 0.5))


def render_frame(world: World, frame_id: int, config: ScenarioConfig | None = None,
                 saliency_map: SaliencyMap | None = None) -> FrameBundle:
    """Noisy observations of every landmark visible at the true pose of ``frame_id``.

    ``saliency_map`` overrides the world's map for the weights only.
    """
    config = world.config if config is None else config
    if not 0 <= frame_id < world.n_frames:
        raise IndexError(f"frame {frame_id} outside 0..{world.n_frames - 1}")
    K = config.intrinsics
    pose = world.true_poses[frame_id]
    smap = world.saliency_maps[frame_id] if saliency_map is None else saliency_map
    rng = _rng(config.seed, _STREAM_FRAME + frame_id)

    idx, px, _ = _visible(pose, K, world.landmarks)
    # draw a fixed number of variates per visible landmark before any filtering
    noise = rng.standard_normal((len(idx), 2))
    sigma = np.where(world.salient[idx], config.sigma_salient, config.sigma_plain)
    obs_px = px + sigma[:, None] * noise
    keep = ((obs_px[:, 0] >= 0) & (obs_px[:, 0] < K.width)
            & (obs_px[:, 1] >= 0) & (obs_px[:, 1] < K.height))
    idx, obs_px = idx[keep], obs_px[keep]

    n = len(idx)
    n_out = outlier_count(n, config.outlier_rate)
    outlier = np.zeros(n, dtype=bool)
    if n_out:
        which = rng.choice(n, size=n_out, replace=False)
        outlier[which] = True
        obs_px[which] = rng.uniform([0.0, 0.0], [K.width, K.height], size=(n_out, 2))
    w = weights_at(smap, obs_px, config.b)
    observations = [Observation(frame_id, int(j), p, 1.0, float(wi))
                    for j, p, wi in zip(idx, obs_px, w)]
    return FrameBundle(frame_id, float(world.timestamps[frame_id]), pose, observations, smap,
                       outlier)


# --- odometry ---------------------------------------------------------------------------

@dataclass
class FrameLog:
    """Per-frame decision state; enough to replay the keyframe predicate."""

    frame_id: int
    n_tracked: int
    tracked_ratio: float | None
    frames_since_keyframe: int
    entropy: float | None
    alpha: float | None
    gate: bool
    heuristic: bool
    keyframe: bool
    track_time_s: float


@dataclass(eq=False)
class RunResult:
    config: ScenarioConfig
    weighting: str
    gate: EntropyGateConfig
    heuristics: bool
    timestamps: np.ndarray
    poses: list                    # estimated world-to-camera poses
    keyframes: list                # KeyframeRecord, strictly increasing ids
    frame_times: list              # tracking time per frame (frame 0 is 0)
    frame_log: list
    complete: bool = True

    @property
    def total_tracking_time(self) -> float:
        return float(sum(self.frame_times))

    @property
    def mean_tracking_time(self) -> float:
        n = max(len(self.frame_times) - 1, 1)
        return self.total_tracking_time / n

    @property
    def keyframe_ids(self):
        return [k.frame_id for k in self.keyframes]

    def trajectory(self) -> Trajectory:
        return Trajectory(self.timestamps[:len(self.poses)], [p.inverse() for p in self.poses])

    def beta(self):
        try:
            return average_entropy(self.keyframes)
        except TooFewKeyframes:
            return None


@dataclass
class _Keyframe:
    frame_id: int
    pose: SE3Pose
    landmark_ids: np.ndarray
    pixels: np.ndarray
    weights: np.ndarray   # zeroed once an observation is rejected


class _Map:
    def __init__(self, n):
        self.points = np.full((n, 3), np.nan)
        self.mapped = np.zeros(n, dtype=bool)


def _effective_weights(observations, weighting):
    if weighting == "uniform":
        return np.ones(len(observations))
    return np.array([o.weight for o in observations], dtype=float)


def _add_landmarks(world: World, mp: _Map, pose_true: SE3Pose, ids):
    """Stand-in for triangulation: true position plus noise scaled by depth / focal."""
    ids = np.asarray([j for j in ids if not mp.mapped[j]], dtype=np.intp)
    if not len(ids):
        return
    X = world.landmarks[ids]
    depth = pose_true.apply(X)[:, 2]
    s = world.pixel_sigma()[ids] * depth / world.config.intrinsics.fx
    mp.points[ids] = X + s[:, None] * world.triangulation_noise[ids]
    mp.mapped[ids] = True


def _local_ba(world: World, mp: _Map, keyframes: list, window: int, huber_delta: float):
    """Refine the last ``window`` keyframes and the landmarks they see.

    Keyframe 0 and up to two keyframes before the window are held fixed.
    """
    local = keyframes[-window:]
    first = len(keyframes) - len(local)
    fixed_before = keyframes[max(0, first - 2):first]
    members = fixed_before + local
    fixed = [True] * len(fixed_before) + [kf.frame_id == keyframes[0].frame_id for kf in local]
    if all(fixed):
        return
    free_ids = np.unique(np.concatenate([kf.landmark_ids for kf, f in zip(members, fixed)
                                         if not f]))
    free_ids = free_ids[mp.mapped[free_ids]]
    lm_index = {int(j): i for i, j in enumerate(free_ids)}

    refs = []   # (member index, row in that keyframe)
    for pi, kf in enumerate(members):
        for row, j in enumerate(kf.landmark_ids):
            if kf.weights[row] > 0 and int(j) in lm_index:
                refs.append((pi, row))
    if not refs:
        return
    poses = [kf.pose for kf in members]
    points = mp.points[free_ids].copy()
    for stage, iters in enumerate(LOCAL_BA_ITERATIONS):
        obs = [Observation(pi, lm_index[int(members[pi].landmark_ids[row])],
                           members[pi].pixels[row], 1.0, float(members[pi].weights[row]))
               for pi, row in refs]
        counts = np.bincount([o.landmark_id for o in obs], minlength=len(free_ids))
        problem = BAProblem(
            poses=poses, landmarks=[Landmark(X) for X in points], observations=obs,
            intrinsics=world.config.intrinsics, pose_fixed=fixed,
            # a landmark seen once here is unconstrained along its ray
            landmark_fixed=counts < MIN_VIEWS_FREE, huber_delta=huber_delta, max_iterations=iters)
        solved, report = solve_local_ba(problem)
        poses, points = list(solved.poses), solved.landmark_array
        log.debug("local BA stage %d over %d keyframes: cost %.4g -> %.4g in %d iterations",
                  stage, len(members), report.cost_trace[0], report.final_cost, report.iterations)
        bad = _gross_outliers(world.config.intrinsics, poses, points, obs)
        if not bad.any():
            if stage == 0:
                continue
            break
        for (pi, row), drop in zip(refs, bad):
            if drop:
                members[pi].weights[row] = 0.0
        refs = [r for r, drop in zip(refs, bad) if not drop]
        if not refs:
            break
    for kf, p in zip(members, poses):
        kf.pose = p
    mp.points[free_ids] = points


def _gross_outliers(K, poses, points, observations):
    """Observations behind their camera or with residual norm above :data:`REJECT_PIXELS`."""
    Rs = np.array([poses[o.frame_id].R for o in observations])
    ts = np.array([poses[o.frame_id].translation for o in observations])
    X = np.array([points[o.landmark_id] for o in observations])
    px = np.array([o.pixel for o in observations])
    Xc = np.einsum("nij,nj->ni", Rs, X) + ts
    front = Xc[:, 2] > MIN_VISIBLE_DEPTH
    z = np.where(front, Xc[:, 2], 1.0)
    r = px - np.column_stack([K.fx * Xc[:, 0] / z + K.cx, K.fy * Xc[:, 1] / z + K.cy])
    return ~front | (np.einsum("ni,ni->n", r, r) > REJECT_PIXELS ** 2)


def _track(tracked, points, guess, K, huber_delta):
    """Motion-only BA, then again without gross outliers if any were found."""
    est = motion_only_ba(tracked, points, guess, K, huber_delta, min_observations=MIN_TRACKED)
    bad = _gross_outliers(K, [est.pose], points,
                          [Observation(0, o.landmark_id, o.pixel) for o in tracked])
    if bad.any():
        kept = [o for o, b in zip(tracked, bad) if not b]
        if sum(1 for o in kept if o.weight > 0) >= MIN_TRACKED:
            est = motion_only_ba(kept, points, est.pose, K, huber_delta,
                                 min_observations=MIN_TRACKED)
    return est


def run_odometry(world: World, config: ScenarioConfig | None = None,
                 gate: EntropyGateConfig = EntropyGateConfig(), weighting: str = "saliency",
                 heuristics: bool = True, huber_delta: float = DEFAULT_HUBER_DELTA,
                 saliency_maps: Sequence[SaliencyMap] | None = None) -> RunResult:
    """Track every frame, select keyframes and refine them with local BA.

    With ``heuristics`` off the entropy gate alone decides (every frame when
    the gate is also off).  ``saliency_maps`` replaces the world's maps when
    computing observation weights.  Raises :class:`TrackingLost` carrying the
    partial result when a frame has fewer than six usable observations.
    """
    config = world.config if config is None else config
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    if saliency_maps is not None and len(saliency_maps) != world.n_frames:
        raise ValueError("need one saliency map per frame")
    K = config.intrinsics
    n_frames = world.n_frames
    mp = _Map(len(world.landmarks))

    def bundle(k):
        smap = None if saliency_maps is None else saliency_maps[k]
        return render_frame(world, k, config, smap)

    result = RunResult(config, weighting, gate, heuristics, world.timestamps, [], [], [], [])

    # frame 0: anchor keyframe at the true (identity) pose
    b0 = bundle(0)
    ids0 = np.array([o.landmark_id for o in b0.observations], dtype=np.intp)
    _add_landmarks(world, mp, b0.true_pose, ids0)
    pose0 = world.true_poses[0]
    keyframes = [_Keyframe(0, pose0, ids0, np.array([o.pixel for o in b0.observations]).reshape(-1, 2),
                           _effective_weights(b0.observations, weighting))]
    result.keyframes.append(KeyframeRecord(0, pose0))
    result.poses.append(pose0)
    result.frame_times.append(0.0)
    result.frame_log.append(FrameLog(0, len(ids0), None, 0, None, None, True, True, True, 0.0))

    ref_ids = set(ids0.tolist())
    h_first = None
    since_kf = 0
    for k in range(1, n_frames):
        fb = bundle(k)
        t0 = time.perf_counter()
        w_all = _effective_weights(fb.observations, weighting)
        tracked = [Observation(0, o.landmark_id, o.pixel, o.info_scalar, float(w))
                   for o, w in zip(fb.observations, w_all) if mp.mapped[o.landmark_id]]
        usable = sum(1 for o in tracked if o.weight > 0)
        if usable < MIN_TRACKED:
            result.complete = False
            raise TrackingLost(f"frame {k}: {usable} usable observations", frame_id=k,
                               partial=result)
        prev = result.poses[-1]
        guess = prev if k < 2 else prev.compose(result.poses[-2].inverse()).compose(prev)
        try:
            est = _track(tracked, mp.points, guess, K, huber_delta)
        except (TooFewObservations, SingularHessian) as exc:
            result.complete = False
            raise TrackingLost(f"frame {k}: {exc}", frame_id=k, partial=result) from exc
        since_kf += 1

        try:
            h = differential_entropy(est.covariance)
        except NonPositiveDeterminant:
            h = None
        if since_kf == 1:
            h_first = h
        alpha = None
        if h is not None and h_first is not None:
            try:
                alpha = entropy_ratio(h, h_first)
            except ZeroDenominator:
                alpha = None
        # an undefined ratio defers to the heuristic
        gate_ok = keyframe_decision(alpha, gate) if alpha is not None else True
        ids = {o.landmark_id for o in tracked}
        ratio = len(ids & ref_ids) / len(ref_ids) if ref_ids else 0.0
        heur_ok = (ratio < TRACKED_RATIO_THRESHOLD or since_kf >= MAX_FRAMES_BETWEEN_KEYFRAMES) \
            if heuristics else True
        accept = gate_ok and heur_ok
        dt = time.perf_counter() - t0

        since_used = since_kf
        pose = est.pose
        if accept:
            ids_k = np.array([o.landmark_id for o in fb.observations], dtype=np.intp)
            _add_landmarks(world, mp, fb.true_pose, ids_k)
            kf = _Keyframe(k, pose, ids_k,
                           np.array([o.pixel for o in fb.observations]).reshape(-1, 2), w_all)
            keyframes.append(kf)
            _local_ba(world, mp, keyframes, config.window, huber_delta)
            pose = kf.pose
            result.keyframes.append(KeyframeRecord.from_covariance(k, pose, est.covariance, alpha))
            ref_ids = set(ids_k.tolist())
            since_kf = 0
        result.poses.append(pose)
        result.frame_times.append(dt)
        result.frame_log.append(FrameLog(
            k, len(tracked), float(ratio), since_used, None if h is None else float(h),
            None if alpha is None else float(alpha), bool(gate_ok), bool(heur_ok), bool(accept), dt))
    return result
