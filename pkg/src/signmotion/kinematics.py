"""Analytic two-bone IK plus first-order smoothing for the render stream."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LimbSpec:
    base: np.ndarray          # shoulder/hip anchor, meters
    l1: float                 # upper bone length
    l2: float                 # lower bone length
    bend_axis: np.ndarray     # unit vector the elbow bends toward
    target_indices: tuple[int, int, int]  # pose body-subrange indices of the effector target

    def __post_init__(self) -> None:
        if self.l1 <= 0 or self.l2 <= 0:
            raise ValueError("bone lengths must be positive")
        axis = np.asarray(self.bend_axis, dtype=np.float64)
        n = np.linalg.norm(axis)
        if not np.isclose(n, 1.0, atol=1e-6):
            raise ValueError("bend_axis must be normalized")


@dataclass(frozen=True)
class SkeletonFrame:
    joints: dict[str, tuple[np.ndarray, np.ndarray]]  # limb -> (joint, effector)
    timestamp: int


def _normalize(v: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < 1e-12:
        return fallback
    return v / n


def two_bone_ik(limb: LimbSpec, target: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Closed-form two-bone solve; unreachable targets clamp to the nearest
    reachable point on the base-target ray and report reached=False."""
    base = np.asarray(limb.base, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (3,) or not np.all(np.isfinite(target)):
        raise ValueError("target must be a finite 3-vector")

    dvec = target - base
    d = float(np.linalg.norm(dvec))
    lo, hi = abs(limb.l1 - limb.l2), limb.l1 + limb.l2
    reached = lo - 1e-9 <= d <= hi + 1e-9
    d_c = min(max(d, lo), hi)
    if d_c < 1e-12:
        # l1 == l2 and target at the base: limb folds flat along the bend axis.
        joint = base + limb.l1 * limb.bend_axis
        return joint, base.copy(), True

    # Degenerate direction (target at base but l1 != l2): walk along bend_axis.
    dhat = _normalize(dvec, limb.bend_axis)
    # In-plane perpendicular pointing toward the bend axis.
    perp = limb.bend_axis - dhat * float(np.dot(dhat, limb.bend_axis))
    n = np.linalg.norm(perp)
    if n < 1e-9:
        # bend_axis collinear with the reach direction: any plane works.
        aux = np.array([1.0, 0.0, 0.0]) if abs(dhat[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        perp = aux - dhat * float(np.dot(dhat, aux))
        n = np.linalg.norm(perp)
    perp = perp / n

    # Law of cosines at the base: angle between reach direction and bone 1.
    cos_a = (limb.l1**2 + d_c**2 - limb.l2**2) / (2.0 * limb.l1 * d_c)
    cos_a = min(max(cos_a, -1.0), 1.0)
    sin_a = np.sqrt(max(0.0, 1.0 - cos_a**2))
    joint = base + limb.l1 * (dhat * cos_a + perp * sin_a)
    effector = base + dhat * d_c
    return joint, effector, bool(reached)


def spline_smooth(x_t: np.ndarray, x_prev: np.ndarray | None, alpha: float) -> np.ndarray:
    """First-order recurrence (1-alpha)*x + alpha*x_prev; the first frame
    (no x_prev) passes through unchanged."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_prev is None:
        return x_t.copy()
    x_prev = np.asarray(x_prev, dtype=np.float64)
    if x_prev.shape != x_t.shape:
        raise ValueError(f"shape mismatch {x_t.shape} vs {x_prev.shape}")
    return (1.0 - alpha) * x_t + alpha * x_prev


def solve_frame(
    pose: np.ndarray,
    rig: dict[str, LimbSpec],
    prev: SkeletonFrame | None,
    alpha: float = 0.1,
    timestamp: int = 1,
) -> SkeletonFrame:
    """Solve every limb against its pose-derived target, then blend with the
    previous output frame."""
    joints: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for name, limb in rig.items():
        target = np.asarray([pose[i] for i in limb.target_indices], dtype=np.float64)
        joint, effector, _ = two_bone_ik(limb, target)
        if prev is not None and name in prev.joints:
            pj, pe = prev.joints[name]
            joint = spline_smooth(joint, pj, alpha)
            effector = spline_smooth(effector, pe, alpha)
        joints[name] = (joint, effector)
    return SkeletonFrame(joints=joints, timestamp=timestamp)


def default_rig() -> dict[str, LimbSpec]:
    """Upper-body rig with a documented pose-index map.

    Targets are read from the body subrange: right wrist = pose[0:3],
    left wrist = pose[3:6] (the decoder's dominant-wrist convention puts
    the signing hand first).
    """
    up = np.array([0.0, 0.0, 1.0])
    return {
        "right_arm": LimbSpec(
            base=np.array([0.20, 0.0, 1.40]),
            l1=0.30,
            l2=0.28,
            bend_axis=up,
            target_indices=(0, 1, 2),
        ),
        "left_arm": LimbSpec(
            base=np.array([-0.20, 0.0, 1.40]),
            l1=0.30,
            l2=0.28,
            bend_axis=up,
            target_indices=(3, 4, 5),
        ),
    }


def frame_to_wire(frame: SkeletonFrame, session_id: str) -> dict:
    """Wire encoding: named joints with xyz float32 values, 0-based index."""
    joints = {}
    for limb, (joint, effector) in frame.joints.items():
        joints[f"{limb}.joint"] = [float(np.float32(v)) for v in joint]
        joints[f"{limb}.effector"] = [float(np.float32(v)) for v in effector]
    return {"session": session_id, "frame_index": frame.timestamp - 1, "joints": joints}
