"""Windowed local re-synthesis of edited subsequences.

An edit regenerates at most `delta` frames around the edit point with a
forward-only decoder pass conditioned on the preceding context latents and
the patched segments; everything outside the window stays bit-identical
and no parameters are touched.
"""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import ir
from .decoder import MDNDecoder, decode_step, uncertainty_alpha
from .motion import EditEvent, SeqBuffer, WindowParams, compute_window
from .vae import PoseVAE


@dataclass(frozen=True)
class ResampleRequest:
    event: EditEvent
    window: WindowParams
    seed: int


@dataclass(frozen=True)
class ResampleReport:
    t_min: int
    t_max: int
    frames_regenerated: int
    elapsed: float
    context_len: int

    def to_log_line(self) -> str:
        return (
            f"t_min={self.t_min} t_max={self.t_max} "
            f"elapsed_us={int(self.elapsed * 1e6)} context_len={self.context_len}"
        )


@dataclass
class ResampleContext:
    """Per-session generation context the hook conditions on and updates."""

    segments: list[ir.ActionSegment]
    features: torch.Tensor          # encoder output H, (N, d)
    fps: float = 25.0
    session_seed: int = 0
    alphas: np.ndarray | None = None  # per-frame uncertainty, updated in the window


def edit_seed(session_seed: int, seq_no: int) -> int:
    """Stable per-edit seed so replays of the same queue reproduce exactly."""
    digest = hashlib.blake2b(
        f"{session_seed}:{seq_no}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def gloss_embedding(gloss_id: str, dim: int) -> np.ndarray:
    """Deterministic pseudo-embedding of a gloss label in [-1, 1]^dim."""
    digest = hashlib.blake2b(gloss_id.encode("utf-8"), digest_size=4).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.uniform(-1.0, 1.0, size=dim)


_EMPHASIS_SCALAR = {"none": 0.0, "mild": 0.5, "strong": 1.0}


def ir_conditioning(
    segments: list[ir.ActionSegment],
    frame_range: tuple[int, int],
    fps: float,
    cond_dim: int,
) -> torch.Tensor:
    """Per-frame conditioning vectors for frames [a, b] (1-based inclusive):
    a hashed gloss embedding, a duration scale against the segment's frame
    span, and the emphasis scalar."""
    a, b = frame_range
    out = np.zeros((b - a + 1, cond_dim), dtype=np.float64)
    emb_dim = max(1, cond_dim - 3)
    for i, seg in enumerate(segments):
        s, e = ir.segment_frame_range(segments, i, fps)
        lo, hi = max(a, s), min(b, e)
        if lo > hi:
            continue
        span_duration = (e - s + 1) / fps
        vec = np.zeros(cond_dim)
        vec[:emb_dim] = gloss_embedding(seg.gloss_id, emb_dim)[:emb_dim]
        if cond_dim > emb_dim:
            vec[emb_dim] = seg.duration / span_duration
        if cond_dim > emb_dim + 1:
            vec[emb_dim + 1] = _EMPHASIS_SCALAR[seg.emphasis]
        if cond_dim > emb_dim + 2:
            vec[emb_dim + 2] = 1.0
        out[lo - a : hi - a + 1] = vec
    return torch.from_numpy(out)


def apply_edit(
    buf: SeqBuffer,
    latents: np.ndarray,
    req: ResampleRequest,
    decoder: MDNDecoder,
    vae: PoseVAE,
    ctx: ResampleContext,
) -> ResampleReport:
    """Apply one edit: patch the IR, regenerate the window, write back.

    Mutates buf, latents, ctx.segments and ctx.alphas on success only;
    a validation failure leaves everything untouched.
    """
    started = time.perf_counter()
    event = req.event
    T = len(buf)
    if not 1 <= event.t_edit <= T:
        raise IndexError(f"t_edit {event.t_edit} outside [1, {T}]")
    new_segments, _ = ir.apply_patch(ctx.segments, event.patch, ctx.fps)

    t_min, t_max = compute_window(event.t_edit, req.window.delta, T)
    c_start = max(1, t_min - req.window.k)
    context = latents[c_start - 1 : t_min - 1]  # may be empty at the left edge
    cond = ir_conditioning(new_segments, (t_min, t_max), ctx.fps, decoder.config.cond_dim)

    gen = torch.Generator().manual_seed(req.seed)
    dtype = decoder.dtype
    n_feat = ctx.features.shape[0]
    with torch.no_grad():
        state = decoder.init_state(start_step=c_start - 1)
        prev = None if c_start == 1 else torch.as_tensor(latents[c_start - 2], dtype=dtype)
        for f, z in zip(range(c_start, t_min), context):
            z_t = torch.as_tensor(z, dtype=dtype)
            prefix = ctx.features[: min(f, n_feat)]
            _, prev, state = decode_step(
                decoder, state, prefix, prev, mode="teacher", z_true=z_t
            )
        new_frames = []
        for i, f in enumerate(range(t_min, t_max + 1)):
            prefix = ctx.features[: min(f, n_feat)]
            out, z, state = decode_step(
                decoder, state, prefix, prev,
                mode="sample", generator=gen, cond=cond[i],
            )
            prev = z
            z_np = z.numpy().astype(np.float64)
            latents[f - 1] = z_np
            new_frames.append(vae.decode_numpy(z_np))
            if ctx.alphas is not None:
                ctx.alphas[f - 1] = uncertainty_alpha(out.mdn, z)
    buf.write_back(t_min, [np.asarray(p) for p in new_frames])
    ctx.segments = new_segments
    return ResampleReport(
        t_min=t_min,
        t_max=t_max,
        frames_regenerated=t_max - t_min + 1,
        elapsed=time.perf_counter() - started,
        context_len=t_min - c_start,
    )


@dataclass
class DrainResult:
    reports: list[ResampleReport]
    remaining: list[EditEvent]
    error: Exception | None = None


def drain_queue(
    buf: SeqBuffer,
    latents: np.ndarray,
    events: list[EditEvent],
    window: WindowParams,
    decoder: MDNDecoder,
    vae: PoseVAE,
    ctx: ResampleContext,
) -> DrainResult:
    """Apply edits in seq_no order; the first invalid event aborts the drain,
    leaving earlier edits applied and the rest of the queue untouched."""
    ordered = sorted(events, key=lambda e: e.seq_no)
    reports: list[ResampleReport] = []
    for i, event in enumerate(ordered):
        req = ResampleRequest(
            event=event, window=window, seed=edit_seed(ctx.session_seed, event.seq_no)
        )
        try:
            reports.append(apply_edit(buf, latents, req, decoder, vae, ctx))
        except (ir.IRValidationError, IndexError, ValueError) as exc:
            return DrainResult(reports=reports, remaining=ordered[i:], error=exc)
    return DrainResult(reports=reports, remaining=[])


def _probe_scene(
    decoder: MDNDecoder, vae: PoseVAE, T: int, fps: float, seed: int
) -> tuple[SeqBuffer, np.ndarray, ResampleContext]:
    rng = np.random.default_rng(seed)
    D = decoder.config.latent_dim
    latents = rng.normal(size=(T, D))
    buf = SeqBuffer(T)
    pose = rng.normal(size=228)
    for _ in range(T):
        buf.append(pose)
    duration = T / fps
    seg = ir.validate_segment(
        {
            "gloss_id": "PROBE",
            "handshape": {
                "type": "B",
                "finger_config": {f: 0.5 for f in ir.FINGERS},
            },
            "trajectory": [
                {"x": 0.0, "y": 0.0, "z": 0.0, "t_offset": 0.0},
                {"x": 0.1, "y": 0.0, "z": 0.0, "t_offset": duration - 1.0 / fps},
            ],
            "duration": duration,
            "non_manual_markers": {
                "facial_expression": "neutral",
                "head_movement": "none",
                "eye_gaze": "straight",
            },
            "emphasis": "none",
        },
        fps=fps,
    )
    feat_dim = decoder.config.feature_dim or decoder.config.model_dim
    features = torch.as_tensor(
        rng.normal(size=(max(1, T // 4), feat_dim)), dtype=decoder.dtype
    )
    ctx = ResampleContext(segments=[seg], features=features, fps=fps, session_seed=seed)
    return buf, latents, ctx


def cost_probe(
    decoder: MDNDecoder,
    vae: PoseVAE,
    T_values: list[int],
    delta: int = 50,
    trials: int = 5,
    k: int = 8,
    fps: float = 25.0,
    seed: int = 0,
) -> list[tuple[int, float]]:
    """Mean wall time of single edits at random interior positions, per T.

    The per-edit cost depends on the window, not the sequence length; this
    table is what the locality acceptance checks regress on.
    """
    if delta < 1:
        raise ValueError(f"delta must be >= 1, got {delta}")
    window = WindowParams(delta=delta, k=k)
    table: list[tuple[int, float]] = []
    rng = np.random.default_rng(seed)
    for T in T_values:
        buf, latents, ctx = _probe_scene(decoder, vae, T, fps, seed)
        patch = ir.Patch(target_segment=0, set={"emphasis": "strong"})
        # Warm-up edit so allocator effects do not skew the first sample.
        warm = ResampleRequest(
            event=EditEvent(t_edit=T // 2, patch=patch, seq_no=0),
            window=window,
            seed=edit_seed(seed, 0),
        )
        apply_edit(buf, latents, warm, decoder, vae, ctx)
        total = 0.0
        for trial in range(trials):
            t_edit = int(rng.integers(delta, max(delta + 1, T - delta)))
            req = ResampleRequest(
                event=EditEvent(t_edit=t_edit, patch=patch, seq_no=trial + 1),
                window=window,
                seed=edit_seed(seed, trial + 1),
            )
            total += apply_edit(buf, latents, req, decoder, vae, ctx).elapsed
        table.append((T, total / trials))
    return table
