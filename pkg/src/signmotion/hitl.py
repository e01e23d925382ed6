"""Closed-loop adaptation from user edits and ratings.

Triplets (original IR, edited IR, ratings) accumulate in an append-only
log; a scheduler fires fine-tuning cycles that imitate the edited IR under
reward weighting, pulled back toward the previous model by a ramped KL
term and an EWC anchor on the most Fisher-stable parameters, with replay
against forgetting.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import ir
from .decoder import MDNDecoder, focal_loss
from .resample import ir_conditioning
from .vae import PoseVAE

REPLAY_CAPACITY = 1500
TRIPLET_THRESHOLD = 450
FINE_TUNE_INTERVAL = 14 * 24 * 3600.0  # two weeks, seconds
CHECKPOINT_PATTERN = "ckpt_cycle{cycle:02d}.ckpt"

# Per-cycle KL weights and encoder freeze depth (cycles past the table reuse
# the last row).
KL_SCHEDULE = (0.10, 0.08, 0.07, 0.06, 0.05, 0.05)
FREEZE_SCHEDULE = (3, 3, 4, 4, 4, 5)


@dataclass(frozen=True)
class Triplet:
    ir_orig: tuple[ir.ActionSegment, ...]
    ir_edit: tuple[ir.ActionSegment, ...]
    r_u: int
    r_e: int | None = None
    created_at: float = 0.0

    def __post_init__(self) -> None:
        if not 1 <= self.r_u <= 5:
            raise ValueError(f"user rating {self.r_u} outside [1, 5]")
        if self.r_e is not None and not 1 <= self.r_e <= 5:
            raise ValueError(f"expert rating {self.r_e} outside [1, 5]")

    def to_record(self) -> dict:
        return {
            "ir_orig": [ir.segment_to_dict(s) for s in self.ir_orig],
            "ir_edit": [ir.segment_to_dict(s) for s in self.ir_edit],
            "r_u": self.r_u,
            "r_e": self.r_e,
            "created_at": self.created_at,
        }

    @staticmethod
    def from_record(rec: dict, fps: float = 25.0) -> "Triplet":
        return Triplet(
            ir_orig=tuple(ir.validate_segment(s, fps=fps) for s in rec["ir_orig"]),
            ir_edit=tuple(ir.validate_segment(s, fps=fps) for s in rec["ir_edit"]),
            r_u=rec["r_u"],
            r_e=rec.get("r_e"),
            created_at=rec.get("created_at", 0.0),
        )


def append_triplet_log(path: str | Path, triplet: Triplet) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(triplet.to_record()) + "\n")


def read_triplet_log(path: str | Path, fps: float = 25.0) -> list[Triplet]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(Triplet.from_record(json.loads(line), fps=fps))
    return out


def reward(r_u: float, r_e: float | None, w_u: float, w_e: float) -> float:
    """Weighted blend of user and expert ratings; a missing expert rating
    renormalizes the remaining weight so the scale is unchanged."""
    if w_u < 0 or w_e < 0:
        raise ValueError("weights must be nonnegative")
    total = w_u + w_e
    if total == 0:
        raise ValueError("at least one rating weight must be positive")
    if r_e is None:
        if w_u == 0:
            raise ValueError("no usable rating: expert absent and w_u == 0")
        return float(r_u * total)  # full weight renormalized onto the user rating
    return float(w_u * r_u + w_e * r_e)


class ReplayBuffer:
    """Uniform reservoir over an unbounded triplet stream."""

    def __init__(self, capacity: int = REPLAY_CAPACITY, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.items: list[Triplet] = []
        self.seen = 0
        self._rng = random.Random(seed)

    def insert(self, t: Triplet) -> None:
        self.seen += 1
        if len(self.items) < self.capacity:
            self.items.append(t)
        else:
            u = self._rng.randrange(self.seen)
            if u < self.capacity:
                self.items[u] = t

    def sample(self, n: int) -> list[Triplet]:
        if not self.items:
            return []
        return [self.items[self._rng.randrange(len(self.items))] for _ in range(n)]


def reservoir_insert(buf: ReplayBuffer, t: Triplet) -> None:
    buf.insert(t)


@dataclass(frozen=True)
class SchedulerConfig:
    triplet_thr: int = TRIPLET_THRESHOLD
    time_int: float = FINE_TUNE_INTERVAL
    replay_fraction: float = 0.25
    w_u: float = 0.5
    w_e: float = 0.5
    kl_weight: float = 0.07
    ewc_lambda: float = 310.0
    anchor_fraction: float = 0.20
    ramp_steps: int = 200
    frozen_layers: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in ("replay_fraction", "anchor_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} {v} outside [0, 1]")

    @staticmethod
    def for_cycle(cycle: int, **overrides) -> "SchedulerConfig":
        """Per-cycle defaults: ramped-down KL and deepening encoder freeze."""
        i = min(max(cycle, 1), len(KL_SCHEDULE)) - 1
        depth = FREEZE_SCHEDULE[i]
        frozen = tuple(f"layers.{j}" for j in range(depth))
        base = SchedulerConfig(kl_weight=KL_SCHEDULE[i], frozen_layers=frozen)
        return replace(base, **overrides)


@dataclass
class SchedulerState:
    t_last: float
    cycle: int = 0


def schedule_tick(state: SchedulerState, now: float, new_triplets: int) -> str:
    """Returns "fine_tune" when the triplet threshold or wall-clock interval
    is reached, resetting the interval clock; otherwise "wait"."""
    cfg_thr = TRIPLET_THRESHOLD
    return _schedule_tick(state, now, new_triplets, cfg_thr, FINE_TUNE_INTERVAL)


def schedule_tick_cfg(
    state: SchedulerState, now: float, new_triplets: int, cfg: SchedulerConfig
) -> str:
    return _schedule_tick(state, now, new_triplets, cfg.triplet_thr, cfg.time_int)


def _schedule_tick(
    state: SchedulerState, now: float, new_triplets: int, thr: int, interval: float
) -> str:
    if new_triplets >= thr or now - state.t_last >= interval:
        state.t_last = now
        state.cycle += 1
        return "fine_tune"
    return "wait"


def compose_batch(
    fresh: Sequence[Triplet],
    buffer: ReplayBuffer,
    batch_size: int,
    replay_fraction: float,
    rng: random.Random,
) -> list[Triplet]:
    """(1 - replay_fraction) fresh + replay_fraction buffer samples."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n_replay = int(round(batch_size * replay_fraction)) if buffer.items else 0
    n_fresh = batch_size - n_replay
    if not fresh:
        return buffer.sample(batch_size)
    batch = [fresh[rng.randrange(len(fresh))] for _ in range(n_fresh)]
    batch += buffer.sample(n_replay)
    return batch


# --- Fisher information and EWC ----------------------------------------------

@dataclass
class FisherDiag:
    values: dict[str, torch.Tensor]        # nonnegative curvature per parameter
    anchor_mask: dict[str, torch.Tensor]   # bool, top anchor_fraction by value
    reference: dict[str, torch.Tensor]     # parameter snapshot at anchoring time
    anchor_fraction: float

    def anchored_count(self) -> int:
        return int(sum(m.sum().item() for m in self.anchor_mask.values()))


def estimate_fisher(
    model: torch.nn.Module,
    stability_set: Sequence,
    loss_fn: Callable[[torch.nn.Module, object], torch.Tensor],
    anchor_fraction: float = 0.20,
) -> FisherDiag:
    """Diagonal Fisher as the mean squared loss gradient over the stability
    set; the anchor mask keeps the top fraction by value, never anchoring
    zero-curvature (frozen or unused) parameters."""
    if not stability_set:
        raise ValueError("stability set must be nonempty")
    acc = {
        name: torch.zeros_like(p, requires_grad=False)
        for name, p in model.named_parameters()
    }
    for example in stability_set:
        model.zero_grad()
        loss = loss_fn(model, example)
        loss.backward()
        for name, p in model.named_parameters():
            if p.grad is not None:
                acc[name] += p.grad.detach() ** 2
    n = len(stability_set)
    values = {name: v / n for name, v in acc.items()}

    flat = torch.cat([v.reshape(-1) for v in values.values()])
    total = flat.numel()
    k = int(round(anchor_fraction * total))
    mask_flat = torch.zeros(total, dtype=torch.bool)
    if k > 0:
        order = torch.argsort(flat, descending=True, stable=True)
        chosen = order[:k]
        mask_flat[chosen] = True
    mask_flat &= flat > 0  # zero-Fisher parameters are never anchored
    masks = {}
    offset = 0
    for name, v in values.items():
        n_el = v.numel()
        masks[name] = mask_flat[offset : offset + n_el].reshape(v.shape)
        offset += n_el
    reference = {
        name: p.detach().clone() for name, p in model.named_parameters()
    }
    model.zero_grad()
    return FisherDiag(values, masks, reference, anchor_fraction)


def ewc_penalty(model: torch.nn.Module, fisher: FisherDiag) -> torch.Tensor:
    """Sum over anchored coordinates of F_i (theta_i - theta*_i)^2."""
    penalty = None
    for name, p in model.named_parameters():
        mask = fisher.anchor_mask[name]
        if not bool(mask.any()):
            continue
        term = (fisher.values[name] * (p - fisher.reference[name]) ** 2)[mask].sum()
        penalty = term if penalty is None else penalty + term
    if penalty is None:
        penalty = torch.zeros((), dtype=next(model.parameters()).dtype)
    return penalty


# --- IR imitation targets and loss --------------------------------------------

_AU_BY_EXPRESSION = {row[0]: i for i, row in enumerate(ir.AU_MARKER_TABLE)}


def segments_to_targets(
    segments: Sequence[ir.ActionSegment], fps: float, vocab: dict[str, int]
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Per-frame supervision from an IR: gloss indices, wrist xyz (linearly
    interpolated from the trajectory), and AU classes from the facial marker."""
    gloss_ids: list[int] = []
    au_ids: list[int] = []
    xyz: list[np.ndarray] = []
    for i, seg in enumerate(segments):
        a, b = ir.segment_frame_range(segments, i, fps)
        n = b - a + 1
        g = vocab.get(seg.gloss_id, 0)
        au = _AU_BY_EXPRESSION.get(seg.non_manual_markers.facial_expression, 0)
        ts = np.array([p.t_offset for p in seg.trajectory])
        px = np.array([p.x for p in seg.trajectory])
        py = np.array([p.y for p in seg.trajectory])
        pz = np.array([p.z for p in seg.trajectory])
        frame_times = np.arange(n) / fps
        xyz.append(
            np.stack(
                [
                    np.interp(frame_times, ts, px),
                    np.interp(frame_times, ts, py),
                    np.interp(frame_times, ts, pz),
                ],
                axis=1,
            )
        )
        gloss_ids.extend([g] * n)
        au_ids.extend([au] * n)
    return (
        torch.tensor(gloss_ids, dtype=torch.long),
        torch.from_numpy(np.concatenate(xyz)),
        torch.tensor(au_ids, dtype=torch.long),
    )


def imitation_loss(
    model: MDNDecoder,
    vae: PoseVAE,
    triplet: Triplet,
    vocab: dict[str, int],
    fps: float = 25.0,
    focal_gamma: float = 2.0,
    return_steps: bool = False,
):
    """Differentiable mixture-mean rollout conditioned on the original IR,
    scored against per-frame targets derived from the edited IR."""
    gloss_t, xyz_t, au_t = segments_to_targets(triplet.ir_edit, fps, vocab)
    T = gloss_t.shape[0]
    cond = ir_conditioning(
        list(triplet.ir_orig), (1, T), fps, model.config.cond_dim
    ).to(model.dtype)
    feat_dim = model.config.feature_dim or model.config.model_dim
    features = torch.zeros((T, feat_dim), dtype=model.dtype)

    state = model.init_state()
    prev: torch.Tensor | None = None
    step_params = []
    gloss_logits = []
    au_logits = []
    zbars = []
    for t in range(T):
        out, state = model.step(state, features[: t + 1], prev, cond[t])
        zbar = torch.sum(out.mdn.pi[:, None] * out.mdn.mu, dim=0)
        prev = zbar
        zbars.append(zbar)
        step_params.append(out.mdn)
        gloss_logits.append(out.gloss_logits)
        au_logits.append(out.au_logits)
    z_seq = torch.stack(zbars)
    xyz_hat = vae.decode(z_seq)[:, :3]
    l_xyz = torch.sum((xyz_hat - xyz_t.to(model.dtype)) ** 2, dim=-1).mean()
    l_gloss = torch.nn.functional.cross_entropy(torch.stack(gloss_logits), gloss_t)
    l_au = focal_loss(torch.stack(au_logits), au_t, gamma=focal_gamma)
    loss = l_xyz + 0.6 * l_gloss + 0.4 * l_au
    if return_steps:
        return loss, step_params, z_seq, cond, features
    return loss


def _mixture_kl(p, q) -> torch.Tensor:
    """Matched-component surrogate KL between two equal-K mixtures:
    KL(pi_p || pi_q) + sum_k pi_p[k] KL(N_p,k || N_q,k)."""
    eps = 1e-12
    cat = torch.sum(p.pi * (torch.log(p.pi + eps) - torch.log(q.pi + eps)))
    d = p.mu.shape[1]
    var_p = p.sigma**2
    var_q = q.sigma**2
    comp = d * (torch.log(q.sigma) - torch.log(p.sigma)) + (
        d * var_p + torch.sum((p.mu - q.mu) ** 2, dim=-1)
    ) / (2 * var_q) - d / 2
    return cat + torch.sum(p.pi * comp)


def fine_tune_step(
    model: MDNDecoder,
    batch: Sequence[Triplet],
    ref_model: MDNDecoder | None,
    fisher: FisherDiag | None,
    cfg: SchedulerConfig,
    optimizer: torch.optim.Optimizer,
    vae: PoseVAE,
    vocab: dict[str, int],
    step_idx: int = 0,
    fps: float = 25.0,
) -> dict[str, float]:
    """One reward-weighted imitation step with ramped KL-to-reference and EWC
    regularization; parameters under frozen prefixes receive zero updates."""
    if not batch:
        raise ValueError("batch must be nonempty")
    optimizer.zero_grad()
    dtype = next(model.parameters()).dtype

    imitation = torch.zeros((), dtype=dtype)
    kl = torch.zeros((), dtype=dtype)
    total_reward = 0.0
    for triplet in batch:
        r = reward(triplet.r_u, triplet.r_e, cfg.w_u, cfg.w_e)
        total_reward += r
        out = imitation_loss(model, vae, triplet, vocab, fps=fps, return_steps=True)
        loss_i, params, z_seq, cond, features = out
        imitation = imitation + r * loss_i
        if ref_model is not None and cfg.kl_weight > 0:
            with torch.no_grad():
                ref_state = ref_model.init_state()
                ref_params = []
                prev = None
                for t in range(z_seq.shape[0]):
                    ro, ref_state = ref_model.step(
                        ref_state, features[: t + 1], prev, cond[t]
                    )
                    prev = z_seq[t]
                    ref_params.append(ro.mdn)
            for p, q in zip(params, ref_params):
                kl = kl + _mixture_kl(p, q)
    imitation = imitation / max(total_reward, 1e-9)
    kl = kl / len(batch)
    ramp = min(1.0, (step_idx + 1) / max(1, cfg.ramp_steps))
    penalty = (
        ewc_penalty(model, fisher) if fisher is not None else torch.zeros((), dtype=dtype)
    )
    total = imitation + cfg.kl_weight * ramp * kl + cfg.ewc_lambda * penalty
    total.backward()
    for name, p in model.named_parameters():
        if p.grad is not None and any(name.startswith(f) for f in cfg.frozen_layers):
            p.grad.zero_()
    optimizer.step()
    return {
        "total": float(total.detach()),
        "imitation": float(imitation.detach()),
        "kl": float(kl.detach()),
        "ewc": float(penalty.detach()),
        "ramp": ramp,
    }


def checkpoint_name(cycle: int) -> str:
    return CHECKPOINT_PATTERN.format(cycle=cycle)


def run_cycle(
    model: MDNDecoder,
    vae: PoseVAE,
    new_triplets: Sequence[Triplet],
    buffer: ReplayBuffer,
    cycle: int,
    ckpt_dir: str | Path,
    vocab: dict[str, int],
    steps: int = 20,
    batch_size: int = 8,
    lr: float = 1e-3,
    fps: float = 25.0,
    seed: int = 0,
    stability_set: Sequence[Triplet] | None = None,
    cfg: SchedulerConfig | None = None,
) -> dict[str, float]:
    """One scheduled fine-tuning cycle: anchor against the stability set,
    snapshot the reference model, train on 75/25 fresh/replay batches, fold
    the fresh triplets into the buffer, and save ckpt_cycleNN.

    The caller publishes the updated parameters atomically (sessions in
    flight keep the old reference)."""
    from .checkpoint import save_checkpoint

    cfg = cfg or SchedulerConfig.for_cycle(cycle)
    ref = MDNDecoder(model.config, dtype=next(model.parameters()).dtype)
    ref.load_state_dict(model.state_dict())
    fisher = None
    if stability_set:
        fisher = estimate_fisher(
            model, stability_set,
            lambda m, e: imitation_loss(m, vae, e, vocab, fps=fps),
            anchor_fraction=cfg.anchor_fraction,
        )
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    rng = random.Random(seed)
    report: dict[str, float] = {}
    for step in range(steps):
        batch = compose_batch(new_triplets, buffer, batch_size, cfg.replay_fraction, rng)
        report = fine_tune_step(
            model, batch, ref, fisher, cfg, opt, vae, vocab, step_idx=step, fps=fps
        )
    for t in new_triplets:
        buffer.insert(t)
    path = Path(ckpt_dir)
    path.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        model.state_dict(), path / checkpoint_name(cycle),
        extra={"cycle": cycle, "steps": steps, "kl_weight": cfg.kl_weight},
    )
    return report
