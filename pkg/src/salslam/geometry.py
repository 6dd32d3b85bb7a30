"""Pose and pinhole-camera primitives.

Poses map world points into the camera frame, ``X_c = R @ X + t``.  Twists are
ordered ``(omega, v)``: rotation vector first, translation second.  Pose
updates are left-multiplicative, ``P <- exp(delta) * P``, and every Jacobian in
the package is taken with respect to that perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NonPositiveDepth

MIN_DEPTH = 1e-9
_SMALL_ANGLE = 1e-5


def hat(w):
    """Skew-symmetric matrix such that ``hat(w) @ x == cross(w, x)``."""
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def _quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def _quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _canonical(q):
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    return -q if q[0] < 0 else q


def so3_exp_quat(omega):
    """Unit quaternion (w, x, y, z) for the rotation vector ``omega``."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    half = 0.5 * theta
    if theta < _SMALL_ANGLE:
        # sin(x)/x series, accurate to machine precision at this threshold
        k = 0.5 - theta * theta / 48.0
    else:
        k = np.sin(half) / theta
    return np.concatenate(([np.cos(half)], k * omega))


def so3_log_quat(q):
    q = _canonical(q)
    vec = q[1:]
    s = np.linalg.norm(vec)
    if s < _SMALL_ANGLE:
        # atan series: theta / s ~ 2/w * (1 - s^2 / (3 w^2)) for small s
        return (2.0 / q[0]) * (1.0 - s * s / (3.0 * q[0] * q[0])) * vec
    theta = 2.0 * np.arctan2(s, q[0])
    return theta / s * vec


def _left_jacobian(omega):
    """SO(3) left Jacobian ``V`` with ``t = V @ v`` in the SE(3) exponential."""
    theta = np.linalg.norm(omega)
    W = hat(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + W @ W / 6.0
    t2 = theta * theta
    return (np.eye(3) + (1 - np.cos(theta)) / t2 * W
            + (theta - np.sin(theta)) / (t2 * theta) * W @ W)


def _left_jacobian_inv(omega):
    theta = np.linalg.norm(omega)
    W = hat(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + W @ W / 12.0
    coef = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / (theta * theta)
    return np.eye(3) - 0.5 * W + coef * W @ W


@dataclass(frozen=True, eq=False)
class SE3Pose:
    """Rigid transform stored as a unit quaternion (w, x, y, z) plus translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("rotation quaternion must be finite and non-zero")
        t = np.asarray(self.translation, dtype=float).reshape(3).copy()
        object.__setattr__(self, "rotation", _canonical(q))
        object.__setattr__(self, "translation", t)
        self.rotation.flags.writeable = False
        self.translation.flags.writeable = False

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_translation(cls, t):
        return cls(translation=t)

    @classmethod
    def from_matrix(cls, R, t=None):
        """Build from a 3x3 rotation (or a 4x4 homogeneous matrix when ``t`` is None)."""
        R = np.asarray(R, dtype=float)
        if t is None:
            R, t = R[:3, :3], R[:3, 3]
        x, y, z, w = Rotation.from_matrix(R).as_quat()
        return cls(np.array([w, x, y, z]), t)

    @cached_property
    def R(self):
        return _quat_to_matrix(self.rotation)

    @property
    def t(self):
        return self.translation

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        """``self * other``: apply ``other`` first, then ``self``."""
        return SE3Pose(_quat_mul(self.rotation, other.rotation),
                       self.R @ other.translation + self.translation)

    __mul__ = compose

    def inverse(self) -> "SE3Pose":
        q_inv = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return SE3Pose(q_inv, -(self.R.T @ self.translation))

    def apply(self, X):
        """Transform one point (3,) or many (N, 3)."""
        X = np.asarray(X, dtype=float)
        return X @ self.R.T + self.translation

    def center(self):
        """Camera centre in world coordinates (for a world-to-camera pose)."""
        return -(self.R.T @ self.translation)

    def rotation_angle(self):
        return float(np.linalg.norm(so3_log_quat(self.rotation)))

    def __repr__(self):
        q = np.array2string(self.rotation, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"SE3Pose(q={q}, t={t})"


def se3_exp(twist) -> SE3Pose:
    twist = np.asarray(twist, dtype=float).reshape(6)
    omega, v = twist[:3], twist[3:]
    return SE3Pose(so3_exp_quat(omega), _left_jacobian(omega) @ v)


def se3_log(pose: SE3Pose) -> np.ndarray:
    omega = so3_log_quat(pose.rotation)
    return np.concatenate((omega, _left_jacobian_inv(omega) @ pose.translation))


def retract(pose: SE3Pose, delta) -> SE3Pose:
    """Left-multiplicative update used by all solvers."""
    return se3_exp(delta).compose(pose)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def contains(self, pixel):
        u, v = pixel
        return 0.0 <= u < self.width and 0.0 <= v < self.height

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Landmark:
    position: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3).copy()
        if not np.all(np.isfinite(p)):
            raise ValueError("landmark coordinates must be finite")
        p.flags.writeable = False
        object.__setattr__(self, "position", p)


@dataclass(frozen=True, eq=False)
class Observation:
    """One sighting of a landmark in a frame.

    ``weight`` is the saliency weight and is fixed at creation; ``info_scalar``
    is the isotropic inverse pixel variance.
    """

    frame_id: int
    landmark_id: int
    pixel: np.ndarray
    info_scalar: float = 1.0
    weight: float = 1.0

    def __post_init__(self):
        px = np.asarray(self.pixel, dtype=float).reshape(2).copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixel", px)
        if not self.info_scalar > 0:
            raise ValueError("info_scalar must be positive")
        if not self.weight >= 0:
            raise ValueError("weight must be non-negative")

    def check_bounds(self, K: CameraIntrinsics):
        if not K.contains(self.pixel):
            raise ValueError(f"observation pixel {self.pixel} outside the image")
        return self


def _as_point(X):
    if isinstance(X, Landmark):
        return X.position
    return np.asarray(X, dtype=float)


def project_camera_points(K: CameraIntrinsics, Xc):
    """Pinhole projection of camera-frame points (N, 3) without depth checks."""
    Xc = np.asarray(Xc, dtype=float)
    z = Xc[..., 2]
    u = K.fx * Xc[..., 0] / z + K.cx
    v = K.fy * Xc[..., 1] / z + K.cy
    return np.stack((u, v), axis=-1)


def project(pose: SE3Pose, K: CameraIntrinsics, X) -> np.ndarray:
    Xc = pose.apply(_as_point(X))
    if Xc[2] <= MIN_DEPTH:
        raise NonPositiveDepth(f"camera-frame depth {Xc[2]:.3g} is not positive")
    return project_camera_points(K, Xc)


def reprojection_error(pose: SE3Pose, K: CameraIntrinsics, X, obs: Observation) -> np.ndarray:
    return obs.pixel - project(pose, K, X)


def residual_jacobians(K: CameraIntrinsics, R, Xc):
    """Residual Jacobians for camera-frame points ``Xc`` (N, 3).

    ``R`` is one world-to-camera rotation or one per point, (N, 3, 3).

    Returns ``(J_pose, J_point)`` of shapes (N, 2, 6) and (N, 2, 3).  The
    residual is ``measured - projected`` so both blocks carry a minus sign.
    """
    Xc = np.atleast_2d(Xc)
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    iz = 1.0 / z
    n = len(Xc)
    Jproj = np.zeros((n, 2, 3))
    Jproj[:, 0, 0] = K.fx * iz
    Jproj[:, 0, 2] = -K.fx * x * iz * iz
    Jproj[:, 1, 1] = K.fy * iz
    Jproj[:, 1, 2] = -K.fy * y * iz * iz

    # d(Xc)/d(omega) = -hat(Xc), d(Xc)/d(v) = I
    dXc = np.zeros((n, 3, 6))
    dXc[:, 0, 1], dXc[:, 0, 2] = z, -y
    dXc[:, 1, 0], dXc[:, 1, 2] = -z, x
    dXc[:, 2, 0], dXc[:, 2, 1] = y, -x
    dXc[:, 0, 3] = dXc[:, 1, 4] = dXc[:, 2, 5] = 1.0

    J_pose = -np.einsum("nij,njk->nik", Jproj, dXc)
    R = np.asarray(R)
    J_point = -(np.einsum("nij,jk->nik", Jproj, R) if R.ndim == 2
                else np.einsum("nij,njk->nik", Jproj, R))
    return J_pose, J_point


def reprojection_jacobian(pose: SE3Pose, K: CameraIntrinsics, X):
    """2x6 pose block and 2x3 point block of the residual at one observation."""
    Xc = pose.apply(_as_point(X))
    if Xc[2] <= MIN_DEPTH:
        raise NonPositiveDepth(f"camera-frame depth {Xc[2]:.3g} is not positive")
    J_pose, J_point = residual_jacobians(K, pose.R, Xc[None, :])
    return J_pose[0], J_point[0]
