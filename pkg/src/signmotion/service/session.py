"""Session orchestration: audio in, frames out, edits in between.

A session owns its stage states and buffers; control calls are serialized
by the caller (the TCP server holds one lock per session). All stream
messages ever emitted stay in an ordered log so late subscribers can catch
up without gaps.
"""
from __future__ import annotations

import json
import logging
import time
import uuid
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .. import ir
from ..decoder import decode_step, uncertainty_alpha
from ..hitl import Triplet, append_triplet_log
from ..kinematics import SkeletonFrame, default_rig, frame_to_wire, solve_frame
from ..motion import EditEvent, SeqBuffer, WindowParams
from ..resample import ResampleContext, ResampleRequest, apply_edit, edit_seed
from ..encoder import MelStreamer
from .config import ModelSet, PipelineConfig, build_models
from .fixtures import gloss_name
from .metrics import StageMetrics

log = logging.getLogger("signmotion.service")

LIFECYCLE = ("created", "generating", "editable", "closed")


class SessionError(Exception):
    """Structured service-boundary error with a machine-readable code."""

    def __init__(self, code: str, message: str, path: str | None = None):
        self.code = code
        self.path = path
        super().__init__(message)

    def to_wire(self) -> dict:
        out = {"type": "error", "code": self.code, "message": str(self)}
        if self.path is not None:
            out["path"] = self.path
        return out


class Session:
    def __init__(self, sid: str, config: PipelineConfig, models: ModelSet,
                 data_dir: Path | None = None):
        self.id = sid
        self.config = config
        self.models = models
        self.state = "created"
        self.buf = SeqBuffer(config.max_frames)
        self.latents = np.zeros((config.max_frames, config.latent_dim))
        self.alphas = np.zeros(config.max_frames)
        self.gloss_idx: list[int] = []
        self.au_idx: list[int] = []
        self.feature_rows: list[torch.Tensor] = []
        self._features_cache: torch.Tensor | None = None
        self.segments: list[ir.ActionSegment] = []
        self.orig_segments: list[ir.ActionSegment] = []
        self.metrics = StageMetrics(budget_ms=config.budget_ms)
        self.mel = MelStreamer(config.sample_rate)
        self.enc_state = models.encoder.init_state()
        self.dec_state = models.decoder.init_state()
        self.prev_z: torch.Tensor | None = None
        self.prev_skel: SkeletonFrame | None = None
        self.rig = default_rig()
        self.generator = torch.Generator().manual_seed(config.seed)
        self.seq_no = 0
        self._msg_no = 0
        self.stream_log: list[dict] = []
        self.subscribers: list[Callable[[dict], None]] = []
        self.data_dir = data_dir
        self.edit_log_path = (data_dir / f"{sid}_edits.jsonl") if data_dir else None
        self.metrics_log_path = (data_dir / f"{sid}_metrics.log") if data_dir else None

    # --- streaming ------------------------------------------------------------

    def _emit(self, msg: dict) -> None:
        msg = dict(msg)
        msg["msg_id"] = self._msg_no
        self._msg_no += 1
        self.stream_log.append(msg)
        for cb in self.subscribers:
            cb(msg)

    def subscribe(self, callback: Callable[[dict], None], from_frame: int = 0) -> None:
        """Replay history (frame messages at wire index >= from_frame plus all
        control messages), then attach for live delivery."""
        for msg in self.stream_log:
            if msg["type"] == "frame" and msg["frame_index"] < from_frame:
                continue
            callback(msg)
        if self.state != "closed":
            self.subscribers.append(callback)

    def features(self) -> torch.Tensor:
        if self._features_cache is None or self._features_cache.shape[0] != len(self.feature_rows):
            self._features_cache = torch.stack(self.feature_rows)
        return self._features_cache

    # --- generation -----------------------------------------------------------

    def push_audio(self, pcm: np.ndarray) -> dict:
        if self.state not in ("created", "generating"):
            raise SessionError("bad_state", f"cannot push audio in state {self.state}")
        if len(pcm) == 0:
            return {"frames": len(self.buf), "gloss": self._current_gloss()}
        self.state = "generating"
        wall_start = time.perf_counter()
        stage_total = 0.0

        t0 = time.perf_counter()
        mels = self.mel.push(pcm)
        dt = time.perf_counter() - t0
        stage_total += dt
        self.metrics.record("frontend", dt, units=len(mels))

        new_frames = 0
        for row in mels:
            t0 = time.perf_counter()
            feat, self.enc_state = self.models.encoder.encode_step(row, self.enc_state)
            dt = time.perf_counter() - t0
            stage_total += dt
            self.metrics.record("encode", dt)
            if feat is None:
                continue
            self.feature_rows.append(feat.h)
            stage_total += self._decode_one_frame()
            new_frames += 1
        wall = time.perf_counter() - wall_start
        self.metrics.record_chunk(stage_total, wall, new_frames)
        progress = {"frames": len(self.buf), "gloss": self._current_gloss()}
        self._emit({"type": "progress", "session": self.id, **progress})
        return progress

    def _decode_one_frame(self) -> float:
        """One decode+ik+serialize step; returns the stage time consumed."""
        total = 0.0
        t0 = time.perf_counter()
        with torch.no_grad():
            out, z, self.dec_state = decode_step(
                self.models.decoder,
                self.dec_state,
                self.features(),
                self.prev_z,
                mode="sample",
                temperature=self.config.temperature,
                generator=self.generator,
            )
        self.prev_z = z
        z_np = z.numpy().astype(np.float64)
        pose = self.models.vae.decode_numpy(z_np)
        t = self.buf.append(pose)
        self.latents[t - 1] = z_np
        self.alphas[t - 1] = uncertainty_alpha(out.mdn, z)
        self.gloss_idx.append(int(out.gloss_logits.argmax()))
        self.au_idx.append(int(out.au_logits.argmax()))
        dt = time.perf_counter() - t0
        total += dt
        self.metrics.record("decode", dt)

        t0 = time.perf_counter()
        self.prev_skel = solve_frame(pose, self.rig, self.prev_skel, timestamp=t)
        dt = time.perf_counter() - t0
        total += dt
        self.metrics.record("ik", dt)

        t0 = time.perf_counter()
        msg = frame_to_wire(self.prev_skel, self.id)
        msg.update({"type": "frame", "supersede": False, "alpha": float(self.alphas[t - 1])})
        self._emit(msg)
        dt = time.perf_counter() - t0
        total += dt
        self.metrics.record("serialize", dt)
        return total

    def _current_gloss(self) -> str | None:
        return gloss_name(self.gloss_idx[-1]) if self.gloss_idx else None

    def end_audio(self) -> dict:
        if self.state != "generating":
            raise SessionError("bad_state", f"cannot end audio in state {self.state}")
        T = len(self.buf)
        if T == 0:
            raise SessionError("no_frames", "no frames were generated")
        glosses = [gloss_name(i) for i in self.gloss_idx]
        self.segments = ir.generate_action_structure(
            self.latents[:T], glosses, self.au_idx, self.config.fps,
            self.models.vae.decode_numpy,
        )
        self.orig_segments = list(self.segments)
        self.state = "editable"
        payload = self._segments_payload()
        self._emit({"type": "segments", "session": self.id, **payload})
        return payload

    def _segments_payload(self) -> dict:
        T = len(self.buf)
        alphas = []
        for i in range(len(self.segments)):
            a, b = ir.segment_frame_range(self.segments, i, self.config.fps)
            a, b = max(1, a), min(T, b)
            alphas.append(float(np.mean(self.alphas[a - 1 : b])) if b >= a else 0.5)
        return {
            "schema": ir.SCHEMA_ID,
            "segments": [ir.segment_to_dict(s) for s in self.segments],
            "alphas": alphas,
        }

    # --- editing --------------------------------------------------------------

    def submit_edit(self, patch_doc: dict) -> dict:
        if self.state != "editable":
            raise SessionError("bad_state", f"cannot edit in state {self.state}")
        try:
            patch = ir.patch_from_dict(patch_doc)
        except ir.IRValidationError as exc:
            raise SessionError("invalid_patch", str(exc), path=exc.path) from exc
        self.seq_no += 1
        if not patch.is_semantic():
            try:
                self.segments, _ = ir.apply_patch(self.segments, patch, self.config.fps)
            except ir.IRValidationError as exc:
                raise SessionError("invalid_patch", str(exc), path=exc.path) from exc
            payload = self._segments_payload()
            self._emit({"type": "segments", "session": self.id, **payload})
            return {"report": None, **payload}

        T = len(self.buf)
        try:
            _, (fa, fb) = ir.apply_patch(self.segments, patch, self.config.fps)
        except ir.IRValidationError as exc:
            raise SessionError("invalid_patch", str(exc), path=exc.path) from exc
        t_edit = min(max(1, (fa + fb) // 2), T)
        event = EditEvent(t_edit=t_edit, patch=patch, seq_no=self.seq_no)
        req = ResampleRequest(
            event=event,
            window=WindowParams(self.config.window_delta, self.config.window_k),
            seed=edit_seed(self.config.seed, self.seq_no),
        )
        ctx = ResampleContext(
            segments=self.segments,
            features=self.features(),
            fps=self.config.fps,
            session_seed=self.config.seed,
            alphas=self.alphas,
        )
        before = list(self.segments)
        try:
            report = apply_edit(
                self.buf, self.latents, req, self.models.decoder, self.models.vae, ctx
            )
        except ir.IRValidationError as exc:
            raise SessionError("invalid_patch", str(exc), path=exc.path) from exc
        self.segments = ctx.segments
        self._log_edit(before, self.segments, report)
        self._retransmit_window(report.t_min, report.t_max)
        self._emit({
            "type": "resample", "session": self.id,
            "t_min": report.t_min - 1, "t_max": report.t_max - 1,
            "frames_regenerated": report.frames_regenerated,
            "elapsed_ms": report.elapsed * 1e3,
            "context_len": report.context_len,
        })
        payload = self._segments_payload()
        self._emit({"type": "segments", "session": self.id, **payload})
        return {
            "report": {
                "t_min": report.t_min - 1,
                "t_max": report.t_max - 1,
                "frames_regenerated": report.frames_regenerated,
                "elapsed_ms": report.elapsed * 1e3,
                "context_len": report.context_len,
            },
            **payload,
        }

    def _retransmit_window(self, t_min: int, t_max: int) -> None:
        """Re-run IK over the regenerated window and stream superseding frames."""
        prev = None
        if t_min > 1:
            prev_pose = self.buf.get(t_min - 1).pose
            prev = solve_frame(prev_pose, self.rig, None, timestamp=t_min - 1)
        for f in self.buf.slice(t_min, t_max):
            prev = solve_frame(f.pose, self.rig, prev, timestamp=f.timestamp)
            msg = frame_to_wire(prev, self.id)
            msg.update({
                "type": "frame", "supersede": True,
                "alpha": float(self.alphas[f.timestamp - 1]),
            })
            self._emit(msg)
        if t_max == len(self.buf):
            # Future live frames blend against the regenerated tail.
            self.prev_skel = prev

    def _log_edit(self, before, after, report) -> None:
        if self.edit_log_path is not None:
            entry = {
                "session": self.id,
                "seq_no": self.seq_no,
                "diff": [
                    {"op": d.op, "segment": d.segment, "path": d.path,
                     "old": d.old, "new": d.new}
                    for d in ir.diff_segments(before, after)
                ],
                "ts": time.time(),
            }
            with open(self.edit_log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry) + "\n")
        if self.metrics_log_path is not None:
            with open(self.metrics_log_path, "a", encoding="utf-8") as fh:
                fh.write(report.to_log_line() + "\n")

    # --- rating ---------------------------------------------------------------

    def submit_rating(self, r_u: int, triplet_log: Path | None = None) -> Triplet:
        if self.state != "editable":
            raise SessionError("bad_state", f"cannot rate in state {self.state}")
        if not isinstance(r_u, int) or isinstance(r_u, bool) or not 1 <= r_u <= 5:
            raise SessionError("bad_rating", f"rating {r_u!r} outside 1..5")
        triplet = Triplet(
            ir_orig=tuple(self.orig_segments),
            ir_edit=tuple(self.segments),
            r_u=r_u,
            created_at=time.time(),
        )
        if triplet_log is not None:
            append_triplet_log(triplet_log, triplet)
        return triplet

    def close(self) -> None:
        if self.state != "closed":
            self.state = "closed"
            self._emit({"type": "end_of_stream", "session": self.id})

    def snapshot_metrics(self) -> dict:
        snap = self.metrics.snapshot()
        snap["chunk_checks"] = [
            {"stage_sum_ms": a * 1e3, "wall_ms": b * 1e3} for a, b in self.metrics.chunk_checks
        ]
        return snap


class SessionManager:
    """In-process service boundary; the TCP server and CLI both drive this."""

    def __init__(self, base_config: PipelineConfig | None = None,
                 data_dir: str | Path | None = None):
        self.base_config = base_config or PipelineConfig()
        self.sessions: dict[str, Session] = {}
        self._model_cache: dict[tuple, ModelSet] = {}
        self.data_dir = Path(data_dir) if data_dir else None
        if self.data_dir:
            self.data_dir.mkdir(parents=True, exist_ok=True)
        self.triplet_log = (self.data_dir / "triplets.jsonl") if self.data_dir else None

    def models_for(self, config: PipelineConfig) -> ModelSet:
        key = config.model_key()
        if key not in self._model_cache:
            self._model_cache[key] = build_models(config)
        return self._model_cache[key]

    def create_session(self, overrides: dict | None = None) -> Session:
        doc = self.base_config.to_dict()
        doc.update(overrides or {})
        try:
            config = PipelineConfig.from_dict(doc)
        except (ValueError, TypeError) as exc:
            raise SessionError("bad_config", str(exc)) from exc
        sid = uuid.uuid4().hex[:12]
        session = Session(sid, config, self.models_for(config), data_dir=self.data_dir)
        self.sessions[sid] = session
        log.info("created session %s", sid)
        return session

    def get(self, sid: str) -> Session:
        if sid not in self.sessions:
            raise SessionError("no_session", f"unknown session {sid!r}")
        return self.sessions[sid]

    def submit_rating(self, sid: str, r_u: int) -> Triplet:
        return self.get(sid).submit_rating(r_u, triplet_log=self.triplet_log)
