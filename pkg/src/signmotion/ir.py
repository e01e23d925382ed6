"""Editable action-segment intermediate representation.

Schema id "sign-ir/1": six core fields per segment, unknown keys preserved
verbatim. Validation errors carry the offending field path so editors can
surface them inline.
"""
from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

SCHEMA_ID = "sign-ir/1"

CORE_FIELDS = (
    "gloss_id",
    "handshape",
    "trajectory",
    "duration",
    "non_manual_markers",
    "emphasis",
)
# Candidate fields voted out of the schema; refused as semantic patch paths.
REJECTED_FIELDS = (
    "speed",
    "intensity",
    "spatial_relation",
    "prosody_cue",
    "other_field_1",
    "other_field_2",
)
EMPHASIS_LEVELS = ("none", "mild", "strong")
FINGERS = ("thumb", "index", "middle", "ring", "pinky")

# Open-set marker vocabularies: unknown strings warn, never fail.
FACIAL_EXPRESSIONS = (
    "neutral", "smile", "frown", "raised_brows", "pursed", "puffed", "concerned",
)
HEAD_MOVEMENTS = (
    "none", "nod", "shake", "tilt_forward", "tilt_back", "tilt_side", "turn",
)
EYE_GAZES = ("straight", "up", "down", "left", "right", "closed")


class IRValidationError(ValueError):
    """Schema violation at a specific field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class IRSchemaWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Handshape:
    type: str
    finger_config: dict[str, float]


@dataclass(frozen=True)
class TrajectoryPoint:
    x: float
    y: float
    z: float
    t_offset: float


@dataclass(frozen=True)
class NonManualMarkers:
    facial_expression: str
    head_movement: str
    eye_gaze: str


@dataclass(frozen=True)
class ActionSegment:
    gloss_id: str
    handshape: Handshape
    trajectory: tuple[TrajectoryPoint, ...]
    duration: float
    non_manual_markers: NonManualMarkers
    emphasis: str
    extra: dict[str, Any] = field(default_factory=dict)


def _want_number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise IRValidationError(path, f"expected a number, got {type(value).__name__}")
    v = float(value)
    if not math.isfinite(v):
        raise IRValidationError(path, "value must be finite")
    return v


def _want_str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise IRValidationError(path, f"expected a string, got {type(value).__name__}")
    return value


def _want_obj(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise IRValidationError(path, f"expected an object, got {type(value).__name__}")
    return value


def validate_segment(doc: Any, fps: float = 25.0, index: int | None = None) -> ActionSegment:
    """Validate one parsed segment document against the six-field schema.

    Unknown top-level keys are preserved in `extra`. `fps` only sets the
    one-frame threshold for the duration-slack warning.
    """
    prefix = f"segments[{index}]." if index is not None else ""
    doc = _want_obj(doc, prefix.rstrip(".") or "segment")
    for name in CORE_FIELDS:
        if name not in doc:
            raise IRValidationError(prefix + name, "required field is missing")

    gloss_id = _want_str(doc["gloss_id"], prefix + "gloss_id")
    if not gloss_id:
        raise IRValidationError(prefix + "gloss_id", "must be non-empty")

    hs = _want_obj(doc["handshape"], prefix + "handshape")
    hs_type = _want_str(hs.get("type"), prefix + "handshape.type") if "type" in hs else None
    if hs_type is None:
        raise IRValidationError(prefix + "handshape.type", "required field is missing")
    fc = _want_obj(hs.get("finger_config"), prefix + "handshape.finger_config") \
        if "finger_config" in hs else None
    if fc is None:
        raise IRValidationError(prefix + "handshape.finger_config", "required field is missing")
    fingers: dict[str, float] = {}
    for f in FINGERS:
        p = f"{prefix}handshape.finger_config.{f}"
        if f not in fc:
            raise IRValidationError(p, "required finger is missing")
        v = _want_number(fc[f], p)
        if not 0.0 <= v <= 1.0:
            raise IRValidationError(p, f"finger value {v} outside [0, 1]")
        fingers[f] = v
    for k in fc:
        if k not in FINGERS:
            raise IRValidationError(f"{prefix}handshape.finger_config.{k}", "unknown finger")

    duration = _want_number(doc["duration"], prefix + "duration")
    if duration <= 0.0:
        raise IRValidationError(prefix + "duration", f"duration {duration} must be > 0")

    traj_raw = doc["trajectory"]
    if not isinstance(traj_raw, list):
        raise IRValidationError(prefix + "trajectory", "expected an array")
    if not traj_raw:
        raise IRValidationError(prefix + "trajectory", "must contain at least one point")
    points: list[TrajectoryPoint] = []
    prev_t = -math.inf
    for i, pt in enumerate(traj_raw):
        p = f"{prefix}trajectory[{i}]"
        pt = _want_obj(pt, p)
        vals = {}
        for coord in ("x", "y", "z", "t_offset"):
            if coord not in pt:
                raise IRValidationError(f"{p}.{coord}", "required field is missing")
            vals[coord] = _want_number(pt[coord], f"{p}.{coord}")
        if vals["t_offset"] < 0.0:
            raise IRValidationError(f"{p}.t_offset", "must be >= 0")
        if vals["t_offset"] <= prev_t:
            raise IRValidationError(
                f"{p}.t_offset",
                f"offsets must be strictly increasing ({vals['t_offset']} after {prev_t})",
            )
        prev_t = vals["t_offset"]
        points.append(TrajectoryPoint(**vals))
    if points[-1].t_offset > duration:
        raise IRValidationError(
            f"{prefix}trajectory[{len(points) - 1}].t_offset",
            f"last offset {points[-1].t_offset} exceeds duration {duration}",
        )
    slack = duration - points[-1].t_offset
    if fps > 0 and slack > 1.0 / fps + 1e-9:
        warnings.warn(
            f"{prefix or 'segment '}duration leaves {slack:.3f}s past the last "
            f"trajectory point (more than one frame at {fps} fps)",
            IRSchemaWarning,
            stacklevel=2,
        )

    nm = _want_obj(doc["non_manual_markers"], prefix + "non_manual_markers")
    marker_vals = {}
    for name, known in (
        ("facial_expression", FACIAL_EXPRESSIONS),
        ("head_movement", HEAD_MOVEMENTS),
        ("eye_gaze", EYE_GAZES),
    ):
        p = f"{prefix}non_manual_markers.{name}"
        if name not in nm:
            raise IRValidationError(p, "required field is missing")
        v = _want_str(nm[name], p)
        if v not in known:
            warnings.warn(f"{p}: unrecognized marker {v!r}", IRSchemaWarning, stacklevel=2)
        marker_vals[name] = v

    emphasis = _want_str(doc["emphasis"], prefix + "emphasis")
    if emphasis not in EMPHASIS_LEVELS:
        raise IRValidationError(
            prefix + "emphasis",
            f"{emphasis!r} not one of {list(EMPHASIS_LEVELS)}",
        )

    extra = {k: doc[k] for k in doc if k not in CORE_FIELDS}
    return ActionSegment(
        gloss_id=gloss_id,
        handshape=Handshape(hs_type, fingers),
        trajectory=tuple(points),
        duration=duration,
        non_manual_markers=NonManualMarkers(**marker_vals),
        emphasis=emphasis,
        extra=extra,
    )


def segment_to_dict(seg: ActionSegment) -> dict[str, Any]:
    """Plain-dict form in canonical schema order; extras follow, sorted."""
    out: dict[str, Any] = {
        "gloss_id": seg.gloss_id,
        "handshape": {
            "type": seg.handshape.type,
            "finger_config": {f: seg.handshape.finger_config[f] for f in FINGERS},
        },
        "trajectory": [
            {"x": p.x, "y": p.y, "z": p.z, "t_offset": p.t_offset} for p in seg.trajectory
        ],
        "duration": seg.duration,
        "non_manual_markers": {
            "facial_expression": seg.non_manual_markers.facial_expression,
            "head_movement": seg.non_manual_markers.head_movement,
            "eye_gaze": seg.non_manual_markers.eye_gaze,
        },
        "emphasis": seg.emphasis,
    }
    for k in sorted(seg.extra):
        out[k] = seg.extra[k]
    return out


def serialize_segment(seg: ActionSegment) -> str:
    return json.dumps(segment_to_dict(seg), indent=2, ensure_ascii=False)


def parse_segment(text: str, fps: float = 25.0) -> ActionSegment:
    return validate_segment(json.loads(text), fps=fps)


def serialize_document(segments: Sequence[ActionSegment]) -> str:
    doc = {"schema": SCHEMA_ID, "segments": [segment_to_dict(s) for s in segments]}
    return json.dumps(doc, indent=2, ensure_ascii=False)


def parse_document(text: str, fps: float = 25.0) -> list[ActionSegment]:
    doc = json.loads(text)
    doc = _want_obj(doc, "document")
    if doc.get("schema") != SCHEMA_ID:
        raise IRValidationError("schema", f"expected {SCHEMA_ID!r}, got {doc.get('schema')!r}")
    segs = doc.get("segments")
    if not isinstance(segs, list):
        raise IRValidationError("segments", "expected an array")
    return [validate_segment(s, fps=fps, index=i) for i, s in enumerate(segs)]


# --- patching ---------------------------------------------------------------

_PATH_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)(?:\[(\d+)\])?")


def _parse_path(path: str) -> list[str | int]:
    parts: list[str | int] = []
    for piece in path.split("."):
        m = _PATH_RE.fullmatch(piece)
        if m is None:
            raise IRValidationError(path, f"malformed path component {piece!r}")
        parts.append(m.group(1))
        if m.group(2) is not None:
            parts.append(int(m.group(2)))
    return parts


# Allowed tails under each core root for patch paths; trajectory indices are
# normalized to 0 before lookup.
_SEMANTIC_TAILS: dict[str, set[tuple[str | int, ...]]] = {
    "gloss_id": {()},
    "duration": {()},
    "emphasis": {()},
    "handshape": {(), ("type",), ("finger_config",)}
    | {("finger_config", f) for f in FINGERS},
    "trajectory": {(), (0,)} | {(0, c) for c in ("x", "y", "z", "t_offset")},
    "non_manual_markers": {(), ("facial_expression",), ("head_movement",), ("eye_gaze",)},
}


def _check_path(path: str) -> list[str | int]:
    """Parse and shape-check a patch path; returns the parsed parts."""
    parts = _parse_path(path)
    root = parts[0]
    if root in REJECTED_FIELDS:
        raise IRValidationError(path, "field was voted out of the schema; not patchable")
    if root not in CORE_FIELDS:
        # UI-only key: a single top-level component, stored in `extra`.
        if len(parts) != 1:
            raise IRValidationError(path, "UI-only paths must be a single key")
        return parts
    tail = tuple(0 if isinstance(p, int) else p for p in parts[1:])
    if tail not in _SEMANTIC_TAILS[root]:
        raise IRValidationError(path, f"no such field under {root!r}")
    return parts


@dataclass(frozen=True)
class Patch:
    """Field-path replacements against one segment.

    Paths rooted at one of the six core fields are semantic (they trigger a
    resample); unrecognized roots are UI-only and pass through to `extra`.
    Paths rooted at a voted-out field are refused outright.
    """

    target_segment: int
    set: dict[str, Any]

    def semantic_paths(self) -> list[str]:
        return [p for p in self.set if _parse_path(p)[0] in CORE_FIELDS]

    def is_semantic(self) -> bool:
        return bool(self.semantic_paths())


def patch_from_dict(doc: Any) -> Patch:
    doc = _want_obj(doc, "patch")
    if "target_segment" not in doc:
        raise IRValidationError("patch.target_segment", "required field is missing")
    tgt = doc["target_segment"]
    if isinstance(tgt, bool) or not isinstance(tgt, int):
        raise IRValidationError("patch.target_segment", "expected an integer index")
    fields = _want_obj(doc.get("set"), "patch.set") if "set" in doc else None
    if fields is None:
        raise IRValidationError("patch.set", "required field is missing")
    if not fields:
        raise IRValidationError("patch.set", "must name at least one path")
    for p in fields:
        _want_str(p, "patch.set")
        _check_path(p)
    return Patch(target_segment=tgt, set=dict(fields))


def _set_path(container: Any, parts: list[str | int], value: Any, path: str) -> None:
    head = parts[0]
    if len(parts) == 1:
        if isinstance(container, list):
            if not isinstance(head, int) or head >= len(container):
                raise IRValidationError(path, "index out of range")
            container[head] = value
        else:
            container[head] = value
        return
    if isinstance(head, int):
        if not isinstance(container, list) or head >= len(container):
            raise IRValidationError(path, "index out of range")
        _set_path(container[head], parts[1:], value, path)
    else:
        if not isinstance(container, dict) or head not in container:
            if isinstance(container, dict) and len(parts) > 1:
                raise IRValidationError(path, f"no such field {head!r}")
            raise IRValidationError(path, "path does not resolve")
        _set_path(container[head], parts[1:], value, path)


def segment_frame_range(
    segments: Sequence[ActionSegment], index: int, fps: float
) -> tuple[int, int]:
    """1-based frame span of segment `index` at the given frame rate."""
    start_t = sum(s.duration for s in segments[:index])
    start = int(round(start_t * fps)) + 1
    n = max(1, int(round(segments[index].duration * fps)))
    return start, start + n - 1


def apply_patch(
    segments: Sequence[ActionSegment], patch: Patch, fps: float = 25.0
) -> tuple[list[ActionSegment], tuple[int, int]]:
    """Apply a validated patch; returns new segments and the touched frame range.

    Validation failures leave the input untouched (segments are immutable
    values; the new list is only built on success).
    """
    if not 0 <= patch.target_segment < len(segments):
        raise IRValidationError(
            "patch.target_segment",
            f"index {patch.target_segment} outside [0, {len(segments) - 1}]",
        )
    raw = segment_to_dict(segments[patch.target_segment])
    for p, value in patch.set.items():
        _set_path(raw, _check_path(p), value, p)
    patched = validate_segment(raw, fps=fps)
    out = list(segments)
    out[patch.target_segment] = patched
    return out, segment_frame_range(out, patch.target_segment, fps)


# --- diffing ----------------------------------------------------------------

@dataclass(frozen=True)
class DiffEntry:
    op: str  # "set" | "insert" | "delete"
    segment: int
    path: str | None = None
    old: Any = None
    new: Any = None


def _leaf_diffs(path: str, old: Any, new: Any, out: list[tuple[str, Any, Any]]) -> None:
    if isinstance(old, dict) and isinstance(new, dict) and set(old) == set(new):
        for k in old:
            _leaf_diffs(f"{path}.{k}" if path else k, old[k], new[k], out)
    elif isinstance(old, list) and isinstance(new, list) and len(old) == len(new):
        for i, (a, b) in enumerate(zip(old, new)):
            _leaf_diffs(f"{path}[{i}]", a, b, out)
    elif old != new:
        out.append((path, old, new))


def diff_segments(
    orig: Sequence[ActionSegment], edited: Sequence[ActionSegment]
) -> list[DiffEntry]:
    """Minimal field-level diff; unequal counts produce tail insert/delete markers."""
    entries: list[DiffEntry] = []
    n = min(len(orig), len(edited))
    for i in range(n):
        leaves: list[tuple[str, Any, Any]] = []
        _leaf_diffs("", segment_to_dict(orig[i]), segment_to_dict(edited[i]), leaves)
        entries.extend(DiffEntry("set", i, p, o, v) for p, o, v in leaves)
    for i in range(n, len(orig)):
        entries.append(DiffEntry("delete", i, None, segment_to_dict(orig[i]), None))
    for i in range(n, len(edited)):
        entries.append(DiffEntry("insert", i, None, None, segment_to_dict(edited[i])))
    return entries


def apply_diff(
    orig: Sequence[ActionSegment], entries: Iterable[DiffEntry], fps: float = 25.0
) -> list[ActionSegment]:
    """Replay a diff log; inverse of diff_segments."""
    docs = [segment_to_dict(s) for s in orig]
    for e in sorted(entries, key=lambda d: (d.op != "set", d.segment)):
        if e.op == "set":
            _set_path(docs[e.segment], _parse_path(e.path), e.new, e.path)
        elif e.op == "delete":
            docs = docs[: e.segment]
        elif e.op == "insert":
            docs.append(e.new)
        else:
            raise ValueError(f"unknown diff op {e.op!r}")
    return [validate_segment(d, fps=fps) for d in docs]


# --- action-structure generation --------------------------------------------

# Curl prototypes for naming a decoded handshape (artifact convention).
HANDSHAPE_PROTOTYPES: dict[str, tuple[float, ...]] = {
    "A": (0.90, 0.90, 0.90, 0.90, 0.90),  # closed fist
    "B": (0.10, 0.10, 0.10, 0.10, 0.10),  # flat hand
    "C": (0.50, 0.50, 0.50, 0.50, 0.50),  # curved
    "O": (0.75, 0.75, 0.75, 0.75, 0.75),  # rounded closure
    "1": (0.80, 0.05, 0.90, 0.90, 0.90),  # index extended
    "V": (0.80, 0.05, 0.05, 0.90, 0.90),  # index+middle extended
}

# AU class -> (facial_expression, head_movement, eye_gaze); artifact convention.
AU_MARKER_TABLE: tuple[tuple[str, str, str], ...] = (
    ("neutral", "none", "straight"),
    ("smile", "none", "straight"),
    ("frown", "tilt_forward", "down"),
    ("raised_brows", "tilt_back", "up"),
    ("pursed", "shake", "straight"),
    ("puffed", "nod", "straight"),
    ("concerned", "tilt_side", "left"),
)

# Five averaging groups over the 143-dim hand subrange (thumb..pinky).
_HAND_GROUP_SIZES = (29, 29, 29, 28, 28)


def _logistic(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def decode_handshape(mean_pose: np.ndarray) -> Handshape:
    """Map the hand subrange of a decoded pose to named curls and a type label."""
    hand = mean_pose[75:218]
    curls: dict[str, float] = {}
    off = 0
    for finger, size in zip(FINGERS, _HAND_GROUP_SIZES):
        curls[finger] = _logistic(float(np.mean(hand[off : off + size])))
        off += size
    vec = np.array([curls[f] for f in FINGERS])
    best = min(
        HANDSHAPE_PROTOTYPES,
        key=lambda name: float(np.sum((vec - np.array(HANDSHAPE_PROTOTYPES[name])) ** 2)),
    )
    return Handshape(best, curls)


def detect_segments(glosses: Sequence[str]) -> list[tuple[int, int]]:
    """Maximal runs of equal gloss as (start, end) 0-based inclusive index pairs."""
    runs: list[tuple[int, int]] = []
    start = 0
    for i in range(1, len(glosses)):
        if glosses[i] != glosses[start]:
            runs.append((start, i - 1))
            start = i
    if glosses:
        runs.append((start, len(glosses) - 1))
    return runs


def majority_filter(labels: Sequence[str], window: int = 5) -> list[str]:
    """Sliding-window majority vote against per-frame label flicker.

    Available for callers that want fewer, longer segments; the pipeline
    does not apply it by default. Ties keep the center label.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd number")
    if window == 1 or len(labels) <= 2:
        return list(labels)
    half = window // 2
    out = []
    for i in range(len(labels)):
        lo = max(0, i - half)
        hi = min(len(labels), i + half + 1)
        counts: dict[str, int] = {}
        for lab in labels[lo:hi]:
            counts[lab] = counts.get(lab, 0) + 1
        best = max(counts.values())
        out.append(labels[i] if counts[labels[i]] == best
                   else max(counts, key=lambda k: counts[k]))
    return out


def generate_action_structure(
    latents: np.ndarray,
    glosses: Sequence[str],
    au_classes: Sequence[int],
    fps: float,
    decode_pose: Callable[[np.ndarray], np.ndarray],
) -> list[ActionSegment]:
    """Convert per-frame decoder outputs into validated action segments.

    `decode_pose` maps one latent to a 228-dim pose; the first three body
    coordinates are read as the dominant-wrist position.
    """
    T = len(glosses)
    if not (len(latents) == T == len(au_classes)):
        raise ValueError(
            f"length mismatch: latents {len(latents)}, glosses {T}, AUs {len(au_classes)}"
        )
    if T < 1:
        raise ValueError("need at least one frame")
    runs = detect_segments(glosses)

    # Per-segment mean latent velocity, ranked into tertiles for emphasis.
    velocities = []
    for t_s, t_e in runs:
        if t_e > t_s:
            d = np.diff(latents[t_s : t_e + 1], axis=0)
            velocities.append(float(np.mean(np.linalg.norm(d, axis=1))))
        else:
            velocities.append(0.0)
    q1, q2 = np.quantile(velocities, [1 / 3, 2 / 3]) if velocities else (0.0, 0.0)

    segments: list[ActionSegment] = []
    for (t_s, t_e), vel in zip(runs, velocities):
        span = latents[t_s : t_e + 1]
        duration = (t_e - t_s + 1) / fps
        traj = []
        for i, z in enumerate(span):
            pose = decode_pose(z)
            traj.append(
                {
                    "x": float(pose[0]),
                    "y": float(pose[1]),
                    "z": float(pose[2]),
                    "t_offset": i / fps,
                }
            )
        handshape = decode_handshape(decode_pose(span.mean(axis=0)))
        counts = np.bincount(np.asarray(au_classes[t_s : t_e + 1], dtype=int),
                             minlength=len(AU_MARKER_TABLE))
        expr, head, gaze = AU_MARKER_TABLE[int(np.argmax(counts))]
        emphasis = "none" if vel <= q1 else ("mild" if vel <= q2 else "strong")
        segments.append(
            validate_segment(
                {
                    "gloss_id": glosses[t_s],
                    "handshape": {"type": handshape.type, "finger_config": handshape.finger_config},
                    "trajectory": traj,
                    "duration": duration,
                    "non_manual_markers": {
                        "facial_expression": expr,
                        "head_movement": head,
                        "eye_gaze": gaze,
                    },
                    "emphasis": emphasis,
                },
                fps=fps,
            )
        )
    return segments
