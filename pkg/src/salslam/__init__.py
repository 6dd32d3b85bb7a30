"""Saliency-weighted bundle adjustment, entropy-gated keyframe selection and
trajectory evaluation for monocular visual odometry back-ends."""

from .entropy import (
    EntropyGateConfig,
    KeyframeRecord,
    average_entropy,
    differential_entropy,
    entropy_ratio,
    entropy_reduction,
    keyframe_decision,
)
from .evaluation import AteResult, Trajectory, associate, compute_ate, umeyama_align
from .geometry import CameraIntrinsics, Landmark, Observation, SE3Pose, project, retract
from .optimizer import BAProblem, motion_only_ba, solve_local_ba
from .pipeline import ScenarioConfig, generate_world, render_frame, run_odometry
from .saliency import SaliencyMap, adaptive_ema, weight_at

__all__ = [
    "AteResult", "BAProblem", "CameraIntrinsics", "EntropyGateConfig", "KeyframeRecord",
    "Landmark", "Observation", "SE3Pose", "SaliencyMap", "ScenarioConfig", "Trajectory",
    "adaptive_ema", "associate", "average_entropy", "compute_ate", "differential_entropy",
    "entropy_ratio", "entropy_reduction", "generate_world", "keyframe_decision",
    "motion_only_ba", "project", "render_frame", "retract", "run_odometry", "solve_local_ba",
    "umeyama_align", "weight_at",
]
