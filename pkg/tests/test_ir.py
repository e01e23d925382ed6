from __future__ import annotations

import json
import warnings

import numpy as np
import pytest

from signmotion import ir

from conftest import make_segment


def valid_doc(**overrides) -> dict:
    doc = {
        "gloss_id": "HELLO",
        "handshape": {
            "type": "B",
            "finger_config": {
                "thumb": 0.5, "index": 0.5, "middle": 0.5, "ring": 0.5, "pinky": 0.5,
            },
        },
        "trajectory": [
            {"x": 0.0, "y": 0.0, "z": 0.2, "t_offset": 0.0},
            {"x": 0.1, "y": 0.0, "z": 0.2, "t_offset": 0.16},
        ],
        "duration": 0.2,
        "non_manual_markers": {
            "facial_expression": "neutral",
            "head_movement": "none",
            "eye_gaze": "straight",
        },
        "emphasis": "none",
    }
    doc.update(overrides)
    return doc


class TestValidate:
    def test_reference_instance(self, thank_you_segment):
        seg = thank_you_segment
        assert seg.gloss_id == "THANK_YOU"
        assert seg.duration == 0.20
        assert len(seg.trajectory) == 4
        assert seg.handshape.type == "C"
        assert seg.emphasis == "mild"

    def test_missing_field(self):
        doc = valid_doc()
        del doc["duration"]
        with pytest.raises(ir.IRValidationError) as e:
            ir.validate_segment(doc)
        assert e.value.path == "duration"

    def test_wrong_type(self):
        with pytest.raises(ir.IRValidationError) as e:
            ir.validate_segment(valid_doc(duration="fast"))
        assert e.value.path == "duration"

    def test_emphasis_enum(self):
        with pytest.raises(ir.IRValidationError) as e:
            ir.validate_segment(valid_doc(emphasis="extreme"))
        assert e.value.path == "emphasis"

    def test_finger_out_of_range(self):
        doc = valid_doc()
        doc["handshape"]["finger_config"]["index"] = 1.3
        with pytest.raises(ir.IRValidationError) as e:
            ir.validate_segment(doc)
        assert e.value.path == "handshape.finger_config.index"

    def test_missing_finger(self):
        doc = valid_doc()
        del doc["handshape"]["finger_config"]["pinky"]
        with pytest.raises(ir.IRValidationError) as e:
            ir.validate_segment(doc)
        assert e.value.path == "handshape.finger_config.pinky"

    def test_non_monotone_offsets(self):
        doc = valid_doc()
        doc["trajectory"] = [
            {"x": 0, "y": 0, "z": 0, "t_offset": 0.12},
            {"x": 0, "y": 0, "z": 0, "t_offset": 0.08},
        ]
        doc["duration"] = 0.2
        with pytest.raises(ir.IRValidationError) as e:
            ir.validate_segment(doc)
        assert "trajectory[1].t_offset" == e.value.path

    def test_offset_past_duration(self):
        doc = valid_doc()
        doc["trajectory"][-1]["t_offset"] = 0.5
        with pytest.raises(ir.IRValidationError):
            ir.validate_segment(doc)

    def test_empty_trajectory(self):
        with pytest.raises(ir.IRValidationError):
            ir.validate_segment(valid_doc(trajectory=[]))

    def test_duration_nonpositive(self):
        with pytest.raises(ir.IRValidationError):
            ir.validate_segment(valid_doc(duration=0.0))

    def test_unknown_marker_warns_not_fails(self):
        doc = valid_doc()
        doc["non_manual_markers"]["facial_expression"] = "quizzical"
        with pytest.warns(ir.IRSchemaWarning):
            seg = ir.validate_segment(doc)
        assert seg.non_manual_markers.facial_expression == "quizzical"

    def test_duration_slack_warns(self):
        doc = valid_doc(duration=0.5)  # 0.34 s past the last point
        with pytest.warns(ir.IRSchemaWarning):
            ir.validate_segment(doc)

    def test_extras_preserved(self):
        seg = ir.validate_segment(valid_doc(camera_tag="front", comment="check hands"))
        assert seg.extra == {"camera_tag": "front", "comment": "check hands"}


class TestSerialize:
    def test_reference_roundtrip(self, thank_you_doc):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ir.IRSchemaWarning)
            seg = ir.validate_segment(thank_you_doc)
            again = ir.parse_segment(ir.serialize_segment(seg))
        assert again == seg
        assert json.loads(ir.serialize_segment(seg)) == json.loads(
            ir.serialize_segment(again)
        )

    def test_extra_key_survives(self):
        seg = make_segment(camera_tag="left")
        again = ir.parse_segment(ir.serialize_segment(seg))
        assert again.extra["camera_tag"] == "left"

    def test_canonical_field_order(self):
        seg = make_segment()
        keys = list(json.loads(ir.serialize_segment(seg)).keys())
        assert keys[:6] == list(ir.CORE_FIELDS)

    def test_serialize_deterministic(self):
        seg = make_segment(zeta="z", alpha="a")
        assert ir.serialize_segment(seg) == ir.serialize_segment(seg)

    def test_document_roundtrip(self):
        segs = [make_segment("A"), make_segment("B", duration=0.4)]
        text = ir.serialize_document(segs)
        assert ir.parse_document(text) == segs

    def test_document_schema_id(self):
        with pytest.raises(ir.IRValidationError):
            ir.parse_document(json.dumps({"schema": "sign-ir/2", "segments": []}))

    def test_random_roundtrip_bulk(self):
        rng = np.random.default_rng(0)
        emphases = list(ir.EMPHASIS_LEVELS)
        for i in range(1000):
            n_pts = int(rng.integers(1, 6))
            duration = float(rng.uniform(0.1, 2.0))
            offs = np.sort(rng.uniform(0, duration, size=n_pts))
            offs[0] = 0.0
            offs = np.unique(offs)
            doc = {
                "gloss_id": f"G{i}",
                "handshape": {
                    "type": rng.choice(list(ir.HANDSHAPE_PROTOTYPES)),
                    "finger_config": {
                        f: float(rng.uniform(0, 1)) for f in ir.FINGERS
                    },
                },
                "trajectory": [
                    {
                        "x": float(rng.normal()),
                        "y": float(rng.normal()),
                        "z": float(rng.normal()),
                        "t_offset": float(t),
                    }
                    for t in offs
                ],
                "duration": duration,
                "non_manual_markers": {
                    "facial_expression": str(rng.choice(ir.FACIAL_EXPRESSIONS)),
                    "head_movement": str(rng.choice(ir.HEAD_MOVEMENTS)),
                    "eye_gaze": str(rng.choice(ir.EYE_GAZES)),
                },
                "emphasis": str(rng.choice(emphases)),
            }
            if rng.random() < 0.3:
                doc["comment"] = f"note {i}"
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ir.IRSchemaWarning)
                seg = ir.validate_segment(doc)
                assert ir.parse_segment(ir.serialize_segment(seg)) == seg


class TestPatch:
    def test_duration_patch_frame_range(self):
        fps = 20.0
        segs = [make_segment("A", duration=0.2), make_segment("B", duration=0.2)]
        _, before = ir.apply_patch(
            segs, ir.Patch(target_segment=1, set={"emphasis": "mild"}), fps
        )
        out, after = ir.apply_patch(
            segs, ir.Patch(target_segment=1, set={"duration": 0.3}), fps
        )
        assert out[1].duration == 0.3
        assert out[0] == segs[0]
        assert (after[1] - after[0]) - (before[1] - before[0]) == int(0.1 * fps)

    def test_single_field_diff(self):
        segs = [make_segment(emphasis="mild")]
        out, _ = ir.apply_patch(segs, ir.Patch(0, {"emphasis": "strong"}), 25.0)
        entries = ir.diff_segments(segs, out)
        assert len(entries) == 1
        assert entries[0].path == "emphasis"
        assert (entries[0].old, entries[0].new) == ("mild", "strong")

    def test_rejected_field_refused(self):
        segs = [make_segment()]
        for name in ir.REJECTED_FIELDS:
            with pytest.raises(ir.IRValidationError):
                ir.apply_patch(segs, ir.Patch(0, {name: 1.0}), 25.0)
            with pytest.raises(ir.IRValidationError):
                ir.patch_from_dict({"target_segment": 0, "set": {name: 1.0}})

    def test_validation_failure_no_mutation(self):
        segs = [make_segment()]
        with pytest.raises(ir.IRValidationError):
            ir.apply_patch(segs, ir.Patch(0, {"emphasis": "extreme"}), 25.0)
        assert segs[0].emphasis == "none"

    def test_nested_paths(self):
        segs = [make_segment()]
        out, _ = ir.apply_patch(
            segs,
            ir.Patch(0, {
                "handshape.finger_config.thumb": 0.9,
                "non_manual_markers.eye_gaze": "down",
                "trajectory[1].x": 0.5,
            }),
            25.0,
        )
        assert out[0].handshape.finger_config["thumb"] == 0.9
        assert out[0].non_manual_markers.eye_gaze == "down"
        assert out[0].trajectory[1].x == 0.5

    def test_patch_locality(self):
        segs = [make_segment()]
        out, _ = ir.apply_patch(segs, ir.Patch(0, {"gloss_id": "BYE"}), 25.0)
        a = ir.segment_to_dict(segs[0])
        b = ir.segment_to_dict(out[0])
        diffs = [k for k in a if a[k] != b[k]]
        assert diffs == ["gloss_id"]

    def test_unknown_core_subfield(self):
        with pytest.raises(ir.IRValidationError):
            ir.patch_from_dict({"target_segment": 0, "set": {"handshape.bogus": 1}})

    def test_ui_only_path_non_semantic(self):
        p = ir.patch_from_dict({"target_segment": 0, "set": {"camera_tag": "x"}})
        assert not p.is_semantic()
        segs = [make_segment()]
        out, _ = ir.apply_patch(segs, p, 25.0)
        assert out[0].extra["camera_tag"] == "x"

    def test_semantic_flag(self):
        p = ir.patch_from_dict({"target_segment": 0, "set": {"duration": 0.5}})
        assert p.is_semantic()

    def test_target_out_of_range(self):
        with pytest.raises(ir.IRValidationError):
            ir.apply_patch([make_segment()], ir.Patch(3, {"duration": 0.5}), 25.0)

    def test_finger_patch_out_of_range_rejected(self):
        segs = [make_segment()]
        with pytest.raises(ir.IRValidationError):
            ir.apply_patch(segs, ir.Patch(0, {"handshape.finger_config.index": 1.3}), 25.0)


class TestDiff:
    def test_identity_empty(self):
        segs = [make_segment("A"), make_segment("B")]
        assert ir.diff_segments(segs, segs) == []

    def test_diff_apply_inverse(self):
        orig = [make_segment("A"), make_segment("B", duration=0.4)]
        edited, _ = ir.apply_patch(orig, ir.Patch(0, {"duration": 0.36}), 25.0)
        edited, _ = ir.apply_patch(edited, ir.Patch(1, {"emphasis": "strong"}), 25.0)
        entries = ir.diff_segments(orig, edited)
        assert ir.apply_diff(orig, entries) == edited

    def test_insert_delete_markers(self):
        a = [make_segment("A")]
        b = [make_segment("A"), make_segment("B")]
        entries = ir.diff_segments(a, b)
        assert [e.op for e in entries] == ["insert"]
        back = ir.diff_segments(b, a)
        assert [e.op for e in back] == ["delete"]
        assert ir.apply_diff(a, entries) == b
        assert ir.apply_diff(b, back) == a


class TestGenerate:
    @staticmethod
    def decode_pose(z: np.ndarray) -> np.ndarray:
        pose = np.zeros(228)
        pose[: len(z)] = z
        pose[75:218] = 0.1 * z[0]
        return pose

    def test_run_lengths(self):
        fps = 25.0
        Z = np.random.default_rng(0).normal(size=(5, 4))
        segs = ir.generate_action_structure(
            Z, ["a", "a", "b", "b", "b"], [0, 0, 1, 1, 1], fps, self.decode_pose
        )
        assert len(segs) == 2
        assert segs[0].duration == pytest.approx(0.08)
        assert segs[1].duration == pytest.approx(0.12)
        assert segs[0].gloss_id == "a"

    def test_constant_gloss_single_segment(self):
        Z = np.zeros((7, 4))
        segs = ir.generate_action_structure(
            Z, ["x"] * 7, [2] * 7, 25.0, self.decode_pose
        )
        assert len(segs) == 1
        assert segs[0].duration == pytest.approx(7 / 25)
        assert segs[0].emphasis == "none"

    def test_generated_segments_validate(self):
        rng = np.random.default_rng(1)
        Z = rng.normal(size=(40, 4))
        glosses = [str(g) for g in rng.integers(0, 4, size=40)]
        aus = [int(a) for a in rng.integers(0, 7, size=40)]
        segs = ir.generate_action_structure(Z, glosses, aus, 25.0, self.decode_pose)
        for seg in segs:
            assert ir.validate_segment(ir.segment_to_dict(seg)) == seg

    def test_au_majority_vote(self):
        Z = np.zeros((5, 4))
        segs = ir.generate_action_structure(
            Z, ["x"] * 5, [1, 1, 1, 2, 3], 25.0, self.decode_pose
        )
        assert segs[0].non_manual_markers.facial_expression == ir.AU_MARKER_TABLE[1][0]

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ir.generate_action_structure(
                np.zeros((3, 4)), ["a"] * 4, [0] * 3, 25.0, self.decode_pose
            )

    def test_emphasis_tertiles(self):
        rng = np.random.default_rng(2)
        # Three segments with increasing latent velocity.
        scale = [0.0, 1.0, 5.0]
        Z = np.concatenate(
            [s * rng.normal(size=(10, 4)) for s in scale]
        )
        glosses = ["a"] * 10 + ["b"] * 10 + ["c"] * 10
        segs = ir.generate_action_structure(Z, glosses, [0] * 30, 25.0, self.decode_pose)
        assert [s.emphasis for s in segs] == ["none", "mild", "strong"]


def test_schema_field_lists():
    assert ir.CORE_FIELDS == (
        "gloss_id", "handshape", "trajectory", "duration",
        "non_manual_markers", "emphasis",
    )
    assert set(ir.REJECTED_FIELDS) == {
        "speed", "intensity", "spatial_relation", "prosody_cue",
        "other_field_1", "other_field_2",
    }


class TestMajorityFilter:
    def test_flicker_removed(self):
        labels = ["a", "a", "b", "a", "a", "a", "c", "c", "c"]
        out = ir.majority_filter(labels, window=3)
        assert out == ["a", "a", "a", "a", "a", "a", "c", "c", "c"]

    def test_identity_when_disabled_width(self):
        labels = ["a", "b", "a"]
        assert ir.majority_filter(labels, window=1) == labels

    def test_reduces_segment_count(self):
        labels = ["a"] * 5 + ["b"] + ["a"] * 5
        filtered = ir.majority_filter(labels, window=5)
        assert len(ir.detect_segments(filtered)) < len(ir.detect_segments(labels))

    def test_window_validation(self):
        with pytest.raises(ValueError):
            ir.majority_filter(["a"], window=2)
        with pytest.raises(ValueError):
            ir.majority_filter(["a"], window=0)
