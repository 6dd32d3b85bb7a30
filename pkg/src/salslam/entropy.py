"""Entropy of motion estimates, the keyframe entropy-ratio gate, and the
average-uncertainty / entropy-reduction summaries."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    NonPositiveBeta,
    NonPositiveDeterminant,
    TooFewKeyframes,
    ZeroDenominator,
)
from .geometry import SE3Pose

log = logging.getLogger(__name__)

DEFAULT_ALPHA_THRESHOLD = 0.9


def differential_entropy(covariance) -> float:
    """Gaussian entropy in nats, ``0.5 m (1 + ln 2pi) + 0.5 ln det(cov)``."""
    S = np.atleast_2d(np.asarray(covariance, dtype=float))
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"covariance must be square, got shape {S.shape}")
    if np.max(np.abs(S - S.T)) > 1e-9 * max(1.0, np.max(np.abs(S))):
        raise ValueError("covariance must be symmetric")
    m = S.shape[0]
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0:
        raise NonPositiveDeterminant(f"covariance determinant is not positive (sign {sign:+.0f})")
    return 0.5 * m * (1.0 + math.log(2.0 * math.pi)) + 0.5 * logdet


def entropy_ratio(h_current: float, h_first: float) -> float:
    """``H(k -> current) / H(k -> k+1)`` for the last keyframe ``k``."""
    if h_first == 0.0:
        raise ZeroDenominator("entropy of the first motion after the keyframe is zero")
    return h_current / h_first


@dataclass(frozen=True)
class EntropyGateConfig:
    threshold: float = DEFAULT_ALPHA_THRESHOLD
    enabled: bool = True

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("entropy-ratio threshold must be positive")
        if self.threshold > 1:
            log.warning("entropy-ratio threshold %.3g > 1 accepts every frame", self.threshold)


def keyframe_decision(alpha: float, config: EntropyGateConfig = EntropyGateConfig()) -> bool:
    """Gate verdict; frames strictly over the threshold are rejected.

    With the gate disabled this always returns True so that the caller's own
    heuristics decide alone.
    """
    if not math.isfinite(alpha):
        raise ValueError("alpha must be finite")
    if not config.enabled:
        return True
    return alpha <= config.threshold


@dataclass(frozen=True, eq=False)
class KeyframeRecord:
    """Accepted keyframe plus the covariance of its motion from the previous keyframe.

    The first keyframe has no incoming motion; its covariance fields are None.
    """

    frame_id: int
    pose: SE3Pose
    motion_covariance: np.ndarray | None = None
    covariance_det: float | None = None
    entropy: float | None = None
    alpha: float | None = None

    @classmethod
    def from_covariance(cls, frame_id, pose, covariance, alpha=None):
        cov = np.asarray(covariance, dtype=float)
        det = float(np.linalg.det(cov))
        try:
            h = differential_entropy(cov)
        except NonPositiveDeterminant:
            h = None
        return cls(frame_id, pose, cov, det, h, alpha)


def average_entropy(records: Sequence[KeyframeRecord]) -> float:
    """Sum of the n-1 inter-keyframe covariance determinants divided by n.

    Records whose determinant is non-positive are skipped with a warning; the
    divisor stays the keyframe count.
    """
    n = len(records)
    if n < 2:
        raise TooFewKeyframes(f"need at least 2 keyframes, got {n}")
    dets = [r.covariance_det for r in records[1:]]
    bad = sum(1 for d in dets if d is None or not d > 0)
    if bad:
        log.warning("%d keyframe(s) with non-positive covariance determinant excluded", bad)
    # all-zero determinants are a valid degenerate input and give beta = 0
    total = math.fsum(d for d in dets if d is not None and d > 0)
    return total / n


def entropy_reduction(beta_baseline: float, beta_method: float, log_base: float = 2.0) -> float:
    """``log(beta_baseline / beta_method)`` in the requested base (2 by default)."""
    if not (beta_baseline > 0 and beta_method > 0):
        raise NonPositiveBeta(f"average entropies must be positive: {beta_baseline}, {beta_method}")
    return math.log(beta_baseline / beta_method) / math.log(log_base)
