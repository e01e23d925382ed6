from __future__ import annotations

import numpy as np
import pytest

from signmotion.kinematics import (
    LimbSpec,
    SkeletonFrame,
    default_rig,
    frame_to_wire,
    solve_frame,
    spline_smooth,
    two_bone_ik,
)

UP = np.array([0.0, 0.0, 1.0])


def arm(l1=0.3, l2=0.3, base=None, bend=None) -> LimbSpec:
    return LimbSpec(
        base=np.zeros(3) if base is None else base,
        l1=l1,
        l2=l2,
        bend_axis=UP if bend is None else bend,
        target_indices=(0, 1, 2),
    )


def interior_angle(base, joint, effector) -> float:
    v1 = base - joint
    v2 = effector - joint
    c = np.dot(v1, v2) / (np.linalg.norm(v1) * np.linalg.norm(v2))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def law_of_cosines_angle(l1, l2, d) -> float:
    return float(np.arccos(np.clip((l1**2 + l2**2 - d**2) / (2 * l1 * l2), -1.0, 1.0)))


class TestTwoBoneIK:
    def test_straight_limb(self):
        joint, effector, reached = two_bone_ik(arm(), np.array([0.6, 0.0, 0.0]))
        assert reached
        assert interior_angle(np.zeros(3), joint, effector) == pytest.approx(np.pi, abs=1e-6)
        assert np.allclose(effector, [0.6, 0.0, 0.0], atol=1e-6)

    def test_right_angle(self):
        d = 0.3 * np.sqrt(2.0)
        joint, effector, reached = two_bone_ik(arm(), np.array([d, 0.0, 0.0]))
        assert reached
        assert interior_angle(np.zeros(3), joint, effector) == pytest.approx(
            np.pi / 2, abs=1e-6
        )

    def test_unreachable_clamps(self):
        joint, effector, reached = two_bone_ik(arm(), np.array([1.0, 0.0, 0.0]))
        assert not reached
        assert np.allclose(effector, [0.6, 0.0, 0.0], atol=1e-9)

    def test_too_close_clamps(self):
        limb = arm(l1=0.4, l2=0.2)
        joint, effector, reached = two_bone_ik(limb, np.array([0.05, 0.0, 0.0]))
        assert not reached
        assert np.linalg.norm(effector) == pytest.approx(0.2, abs=1e-9)
        assert np.linalg.norm(joint) == pytest.approx(0.4, abs=1e-9)

    def test_target_at_base_never_panics(self):
        joint, effector, _ = two_bone_ik(arm(l1=0.4, l2=0.2), np.zeros(3))
        assert np.all(np.isfinite(joint)) and np.all(np.isfinite(effector))
        joint, effector, reached = two_bone_ik(arm(), np.zeros(3))
        assert reached
        assert np.linalg.norm(joint) == pytest.approx(0.3, abs=1e-9)
        assert np.allclose(effector, 0.0)

    def test_oracle_agreement_random(self):
        rng = np.random.default_rng(0)
        limb = arm(l1=0.32, l2=0.27)
        lo, hi = abs(limb.l1 - limb.l2), limb.l1 + limb.l2
        for _ in range(10_000):
            d = rng.uniform(lo + 1e-6, hi - 1e-6)
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            target = d * direction
            joint, effector, reached = two_bone_ik(limb, target)
            assert reached
            assert np.linalg.norm(effector - target) <= 1e-6
            assert abs(np.linalg.norm(joint) - limb.l1) <= 1e-6
            assert abs(np.linalg.norm(effector - joint) - limb.l2) <= 1e-6
            expect = law_of_cosines_angle(limb.l1, limb.l2, d)
            assert interior_angle(limb.base, joint, effector) == pytest.approx(
                expect, abs=1e-6
            )

    def test_elbow_bends_toward_axis(self):
        joint, _, _ = two_bone_ik(arm(), np.array([0.3, 0.0, 0.0]))
        assert joint[2] > 0  # bend axis is +z

    def test_invalid_target(self):
        with pytest.raises(ValueError):
            two_bone_ik(arm(), np.array([np.nan, 0.0, 0.0]))

    def test_bad_limb(self):
        with pytest.raises(ValueError):
            LimbSpec(np.zeros(3), l1=0.0, l2=0.3, bend_axis=UP, target_indices=(0, 1, 2))
        with pytest.raises(ValueError):
            LimbSpec(np.zeros(3), l1=0.3, l2=0.3, bend_axis=np.array([0.0, 0.0, 2.0]),
                     target_indices=(0, 1, 2))


class TestSplineSmooth:
    def test_alpha_zero_identity(self):
        rng = np.random.default_rng(1)
        prev = None
        for _ in range(10):
            x = rng.normal(size=5)
            y = spline_smooth(x, prev, alpha=0.0)
            assert np.array_equal(y, x)
            prev = y

    def test_constant_fixed_point(self):
        x = np.full(4, 2.5)
        y = x.copy()
        for _ in range(20):
            y = spline_smooth(x, y, alpha=0.1)
        assert np.allclose(y, 2.5, atol=1e-12)

    def test_first_frame_passthrough(self):
        x = np.array([3.0, -1.0])
        assert np.array_equal(spline_smooth(x, None, alpha=0.9), x)

    def test_step_response_closed_form(self):
        y = spline_smooth(np.zeros(1), None, alpha=0.1)
        for n in range(1, 30):
            y = spline_smooth(np.ones(1), y, alpha=0.1)
            assert y[0] == pytest.approx(1.0 - 0.1**n, abs=1e-9)

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            spline_smooth(np.zeros(2), None, alpha=1.0)
        with pytest.raises(ValueError):
            spline_smooth(np.zeros(2), None, alpha=-0.1)

    def test_contraction_convex_hull(self):
        rng = np.random.default_rng(2)
        xs = rng.normal(size=(50, 3))
        y = spline_smooth(xs[0], None, 0.1)
        for x in xs[1:]:
            y = spline_smooth(x, y, 0.1)
            assert np.all(y <= xs.max(axis=0) + 1e-12)
            assert np.all(y >= xs.min(axis=0) - 1e-12)


def make_pose(rng, rig) -> np.ndarray:
    """Random pose whose limb targets are reachable."""
    pose = np.zeros(228)
    for limb in rig.values():
        r = rng.uniform(0.1, limb.l1 + limb.l2 - 0.02)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        target = limb.base + r * direction
        for j, idx in enumerate(limb.target_indices):
            pose[idx] = target[j]
    return pose


class TestSolveFrame:
    def test_identical_poses_identical_frames(self):
        rig = default_rig()
        pose = make_pose(np.random.default_rng(3), rig)
        f1 = solve_frame(pose, rig, None, alpha=0.1, timestamp=1)
        f2 = solve_frame(pose, rig, f1, alpha=0.1, timestamp=2)
        for name in rig:
            assert np.allclose(f1.joints[name][0], f2.joints[name][0], atol=1e-12)
            assert np.allclose(f1.joints[name][1], f2.joints[name][1], atol=1e-12)

    def test_bone_lengths_preserved_unsmoothed(self):
        rig = default_rig()
        rng = np.random.default_rng(4)
        for t in range(200):
            pose = make_pose(rng, rig)
            frame = solve_frame(pose, rig, None, alpha=0.1, timestamp=t + 1)
            for name, limb in rig.items():
                joint, effector = frame.joints[name]
                assert abs(np.linalg.norm(joint - limb.base) - limb.l1) <= 1e-6
                assert abs(np.linalg.norm(effector - joint) - limb.l2) <= 1e-6

    def test_smoothed_bone_drift_bounded(self):
        rig = default_rig()
        rng = np.random.default_rng(5)
        alpha = 0.1
        poses = [make_pose(rng, rig) for _ in range(120)]
        raw = [solve_frame(p, rig, None, alpha=alpha) for p in poses]
        max_disp = 0.0
        for a, b in zip(raw, raw[1:]):
            for name in rig:
                max_disp = max(
                    max_disp,
                    float(np.linalg.norm(a.joints[name][0] - b.joints[name][0])),
                    float(np.linalg.norm(a.joints[name][1] - b.joints[name][1])),
                )
        bound = alpha / (1.0 - alpha) * max_disp + 1e-9
        prev = None
        for t, pose in enumerate(poses):
            prev = solve_frame(pose, rig, prev, alpha=alpha, timestamp=t + 1)
            for name, limb in rig.items():
                joint, effector = prev.joints[name]
                assert abs(np.linalg.norm(joint - limb.base) - limb.l1) <= bound

    def test_jitter_energy_reduced(self):
        rig = default_rig()
        rng = np.random.default_rng(6)
        poses = [make_pose(rng, rig) for _ in range(100)]

        def second_diff_energy(frames: list[SkeletonFrame]) -> float:
            total = 0.0
            for name in rig:
                xs = np.array([f.joints[name][1] for f in frames])
                total += float(np.sum(np.diff(xs, n=2, axis=0) ** 2))
            return total

        raw = [solve_frame(p, rig, None, alpha=0.1) for p in poses]
        smoothed = []
        prev = None
        for t, p in enumerate(poses):
            prev = solve_frame(p, rig, prev, alpha=0.1, timestamp=t + 1)
            smoothed.append(prev)
        assert second_diff_energy(smoothed) < second_diff_energy(raw)

    def test_first_frame_unsmoothed(self):
        rig = default_rig()
        pose = make_pose(np.random.default_rng(7), rig)
        with_prev_none = solve_frame(pose, rig, None, alpha=0.9, timestamp=1)
        with_alpha_zero = solve_frame(pose, rig, None, alpha=0.0, timestamp=1)
        for name in rig:
            assert np.allclose(
                with_prev_none.joints[name][0], with_alpha_zero.joints[name][0]
            )

    def test_wire_encoding(self):
        rig = default_rig()
        pose = make_pose(np.random.default_rng(8), rig)
        frame = solve_frame(pose, rig, None, timestamp=7)
        wire = frame_to_wire(frame, "s1")
        assert wire["frame_index"] == 6  # wire is 0-based
        assert wire["session"] == "s1"
        assert set(wire["joints"]) == {
            "right_arm.joint", "right_arm.effector", "left_arm.joint", "left_arm.effector",
        }
        for xyz in wire["joints"].values():
            assert len(xyz) == 3
