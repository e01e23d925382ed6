"""Autoregressive mixture-density decoder over pose latents.

Each step consumes the previous latent plus an optional conditioning vector,
attends causally over its own past and over the encoder features, and emits
mixture parameters, gloss logits, and facial action-unit logits. The step
API drives live generation and resampling; the vectorized teacher-forced
forward drives training.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .motion import BODY_SLICE, HAND_SLICE


@dataclass(frozen=True)
class DecoderConfig:
    latent_dim: int = 128       # D
    n_components: int = 5       # K
    model_dim: int = 64
    n_blocks: int = 2
    ffn_dim: int = 128
    gloss_vocab: int = 3000     # V
    au_classes: int = 7
    cond_dim: int = 8
    feature_dim: int = 0        # encoder feature width; 0 means model_dim
    max_context: int = 64
    sigma_floor: float = 1e-4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_components < 1 or self.latent_dim < 1:
            raise ValueError("n_components and latent_dim must be >= 1")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be > 0")


@dataclass(frozen=True)
class MDNParams:
    """Mixture weights, component means, and isotropic scales for one step."""

    pi: torch.Tensor      # (K,)
    mu: torch.Tensor      # (K, D)
    sigma: torch.Tensor   # (K,)

    def __post_init__(self) -> None:
        if self.pi.ndim != 1 or self.mu.ndim != 2 or self.sigma.ndim != 1:
            raise ValueError("bad MDN parameter shapes")
        k = self.pi.shape[0]
        if self.mu.shape[0] != k or self.sigma.shape[0] != k:
            raise ValueError("component count mismatch")
        pi = self.pi.detach()
        if torch.any(pi < -1e-12):
            raise ValueError("mixture weights must be nonnegative")
        total = float(pi.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"mixture weights sum to {total}, not 1")
        if torch.any(self.sigma.detach() <= 0):
            raise ValueError("sigma must be positive")

    @staticmethod
    def from_weights(weights, mu, sigma) -> "MDNParams":
        """Build from unnormalized nonnegative weights."""
        w = torch.as_tensor(weights, dtype=torch.float64)
        total = float(w.sum())
        if total <= 0 or torch.any(w < 0):
            raise ValueError("weights must be nonnegative with positive sum")
        return MDNParams(
            pi=w / total,
            mu=torch.as_tensor(mu, dtype=torch.float64),
            sigma=torch.as_tensor(sigma, dtype=torch.float64),
        )


@dataclass(frozen=True)
class DecoderStepOutput:
    mdn: MDNParams
    gloss_logits: torch.Tensor
    au_logits: torch.Tensor


@dataclass
class DecoderState:
    """Per-block self-attention caches plus the absolute step counter."""

    keys: list[list[torch.Tensor]]
    values: list[list[torch.Tensor]]
    step: int

    @property
    def context_len(self) -> int:
        return len(self.keys[0]) if self.keys else 0


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.6
    lambda3: float = 0.4
    hand_multiplier: float = 3.0

    def __post_init__(self) -> None:
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be nonnegative")


def _positional(step: int, dim: int, dtype: torch.dtype) -> torch.Tensor:
    half = (dim + 1) // 2
    freq = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=dtype) / max(1, half)
    )
    ang = step * freq
    enc = torch.zeros(dim, dtype=dtype)
    enc[0::2] = torch.sin(ang)
    enc[1::2] = torch.cos(ang)[: dim // 2]
    return enc


class _Block(nn.Module):
    def __init__(self, dim: int, ffn_dim: int, dtype: torch.dtype):
        super().__init__()
        self.wq = nn.Linear(dim, dim, dtype=dtype)
        self.wk = nn.Linear(dim, dim, dtype=dtype)
        self.wv = nn.Linear(dim, dim, dtype=dtype)
        self.wo = nn.Linear(dim, dim, dtype=dtype)
        self.cq = nn.Linear(dim, dim, dtype=dtype)
        self.ck = nn.Linear(dim, dim, dtype=dtype)
        self.cv = nn.Linear(dim, dim, dtype=dtype)
        self.co = nn.Linear(dim, dim, dtype=dtype)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_dim, dtype=dtype),
            nn.SiLU(),
            nn.Linear(ffn_dim, dim, dtype=dtype),
        )
        self.ln1 = nn.LayerNorm(dim, dtype=dtype)
        self.ln2 = nn.LayerNorm(dim, dtype=dtype)
        self.ln3 = nn.LayerNorm(dim, dtype=dtype)
        self.scale = 1.0 / math.sqrt(dim)


class MDNDecoder(nn.Module):
    def __init__(self, config: DecoderConfig, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.config = config
        self.dtype = dtype
        c = config
        self.w_in = nn.Linear(c.latent_dim, c.model_dim, dtype=dtype)
        self.w_cond = nn.Linear(c.cond_dim, c.model_dim, dtype=dtype)
        self.w_feat = nn.Linear(c.feature_dim or c.model_dim, c.model_dim, dtype=dtype)
        self.start_token = nn.Parameter(torch.zeros(c.latent_dim, dtype=dtype))
        self.blocks = nn.ModuleList(
            _Block(c.model_dim, c.ffn_dim, dtype) for _ in range(c.n_blocks)
        )
        self.head_pi = nn.Linear(c.model_dim, c.n_components, dtype=dtype)
        self.head_mu = nn.Linear(c.model_dim, c.n_components * c.latent_dim, dtype=dtype)
        self.head_sigma = nn.Linear(c.model_dim, c.n_components, dtype=dtype)
        self.head_gloss = nn.Linear(c.model_dim, c.gloss_vocab, dtype=dtype)
        self.head_au = nn.Linear(c.model_dim, c.au_classes, dtype=dtype)
        gen = torch.Generator().manual_seed(c.seed)
        for m in self.modules():
            if isinstance(m, nn.Linear):
                fan_in = m.weight.shape[1]
                bound = 1.0 / math.sqrt(fan_in)
                with torch.no_grad():
                    m.weight.uniform_(-bound, bound, generator=gen)
                    m.bias.uniform_(-bound, bound, generator=gen)

    def init_state(self, start_step: int = 0) -> DecoderState:
        n = self.config.n_blocks
        return DecoderState(keys=[[] for _ in range(n)], values=[[] for _ in range(n)],
                            step=start_step)

    def _heads(self, u: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor,
                                               torch.Tensor, torch.Tensor]:
        c = self.config
        pi_logits = self.head_pi(u)
        mu = self.head_mu(u).reshape(u.shape[:-1] + (c.n_components, c.latent_dim))
        sigma = F.softplus(self.head_sigma(u)) + c.sigma_floor
        return pi_logits, mu, sigma, self.head_gloss(u), self.head_au(u)

    def step(
        self,
        state: DecoderState,
        features: torch.Tensor,
        prev_z: torch.Tensor | None,
        cond: torch.Tensor | None = None,
    ) -> tuple[DecoderStepOutput, DecoderState]:
        """One causal decoding step. `features` is the available prefix of H;
        prev_z None means the learned start token."""
        c = self.config
        if features.ndim != 2 or features.shape[0] == 0:
            raise ValueError("features must be a nonempty (N, d) tensor")
        z = self.start_token if prev_z is None else prev_z
        if z.shape != (c.latent_dim,):
            raise ValueError(f"prev_z must have shape ({c.latent_dim},)")
        if cond is None:
            cond = torch.zeros(c.cond_dim, dtype=self.dtype)
        # Cross-attention window: the trailing max_context rows of the prefix,
        # so per-step cost stays constant in utterance length.
        feats = self.w_feat(features[-c.max_context:])
        x = self.w_in(z) + self.w_cond(cond) + _positional(state.step, c.model_dim, self.dtype)
        for i, blk in enumerate(self.blocks):
            k = blk.wk(x)
            v = blk.wv(x)
            state.keys[i].append(k)
            state.values[i].append(v)
            if len(state.keys[i]) > c.max_context:
                state.keys[i] = state.keys[i][-c.max_context:]
                state.values[i] = state.values[i][-c.max_context:]
            ks = torch.stack(state.keys[i])
            vs = torch.stack(state.values[i])
            att = torch.softmax(ks @ blk.wq(x) * blk.scale, dim=0)
            x = blk.ln1(x + blk.wo(att @ vs))
            fk = blk.ck(feats)
            fv = blk.cv(feats)
            catt = torch.softmax(fk @ blk.cq(x) * blk.scale, dim=0)
            x = blk.ln2(x + blk.co(catt @ fv))
            x = blk.ln3(x + blk.ffn(x))
        pi_logits, mu, sigma, gloss, au = self._heads(x)
        out = DecoderStepOutput(
            mdn=MDNParams(pi=torch.softmax(pi_logits, dim=-1), mu=mu, sigma=sigma),
            gloss_logits=gloss,
            au_logits=au,
        )
        state.step += 1
        return out, state

    def forward_teacher(
        self,
        features: torch.Tensor,
        z_prev_seq: torch.Tensor,
        cond_seq: torch.Tensor | None = None,
        start_step: int = 0,
    ) -> dict[str, torch.Tensor]:
        """Vectorized causal forward over a whole sequence: step t self-attends
        to the band [t - max_context + 1, t] and cross-attends to the trailing
        max_context features at or before t. z_prev_seq[t] is the latent fed
        at step t (start token or ground truth)."""
        c = self.config
        T = z_prev_seq.shape[0]
        if features.ndim != 2 or features.shape[0] == 0:
            raise ValueError("features must be a nonempty (N, d) tensor")
        if cond_seq is None:
            cond_seq = torch.zeros((T, c.cond_dim), dtype=self.dtype)
        pos = torch.stack(
            [_positional(start_step + t, c.model_dim, self.dtype) for t in range(T)]
        )
        feats = self.w_feat(features)
        x = self.w_in(z_prev_seq) + self.w_cond(cond_seq) + pos

        t_idx = torch.arange(T)
        band = (t_idx[:, None] >= t_idx[None, :]) & (
            t_idx[None, :] > t_idx[:, None] - c.max_context
        )
        n_feat = features.shape[0]
        f_idx = torch.arange(n_feat)
        hi = torch.clamp(t_idx[:, None] + start_step, max=n_feat - 1)
        cross_ok = (f_idx[None, :] <= hi) & (f_idx[None, :] > hi - c.max_context)

        neg = torch.finfo(self.dtype).min
        for blk in self.blocks:
            q = blk.wq(x)
            k = blk.wk(x)
            v = blk.wv(x)
            scores = q @ k.T * blk.scale
            scores = scores.masked_fill(~band, neg)
            x = blk.ln1(x + blk.wo(torch.softmax(scores, dim=-1) @ v))
            cq = blk.cq(x)
            cs = cq @ blk.ck(feats).T * blk.scale
            cs = cs.masked_fill(~cross_ok, neg)
            x = blk.ln2(x + blk.co(torch.softmax(cs, dim=-1) @ blk.cv(feats)))
            x = blk.ln3(x + blk.ffn(x))
        pi_logits, mu, sigma, gloss, au = self._heads(x)
        return {
            "pi": torch.softmax(pi_logits, dim=-1),
            "log_pi": torch.log_softmax(pi_logits, dim=-1),
            "mu": mu,
            "sigma": sigma,
            "gloss_logits": gloss,
            "au_logits": au,
        }


def decode_step(
    decoder: MDNDecoder,
    state: DecoderState,
    features: torch.Tensor,
    prev_z: torch.Tensor | None,
    mode: str = "sample",
    temperature: float = 1.0,
    generator: torch.Generator | None = None,
    z_true: torch.Tensor | None = None,
    cond: torch.Tensor | None = None,
) -> tuple[DecoderStepOutput, torch.Tensor, DecoderState]:
    """Run one step and resolve the emitted latent: ground truth under
    teacher forcing, a mixture draw otherwise."""
    out, state = decoder.step(state, features, prev_z, cond)
    if mode == "teacher":
        if z_true is None:
            raise ValueError("teacher mode requires z_true")
        return out, z_true, state
    if mode != "sample":
        raise ValueError(f"unknown mode {mode!r}")
    z = mdn_sample(out.mdn, temperature, generator=generator)
    return out, z, state


def mdn_sample(
    params: MDNParams,
    temperature: float = 1.0,
    generator: torch.Generator | None = None,
    seed: int | None = None,
) -> torch.Tensor:
    """Pick a component from temperature-scaled weight logits, then draw from
    its Gaussian. Temperature never rescales the Gaussian itself."""
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if generator is None:
        generator = torch.Generator()
        generator.manual_seed(0 if seed is None else seed)
    logits = torch.log(params.pi.clamp_min(0)) / temperature
    probs = torch.softmax(logits, dim=0)
    k = int(torch.multinomial(probs, 1, generator=generator).item())
    eps = torch.randn(params.mu.shape[1], generator=generator, dtype=params.mu.dtype)
    return params.mu[k] + params.sigma[k] * eps


def mdn_nll(params: MDNParams, z: torch.Tensor) -> float:
    """Negative log density of z under the mixture, via log-sum-exp."""
    return float(
        _mixture_nll(
            torch.log(params.pi.clamp_min(1e-300))[None, :],
            params.mu[None],
            params.sigma[None, :],
            z[None],
        )
    )


def _mixture_nll(
    log_pi: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor, z: torch.Tensor
) -> torch.Tensor:
    """Mean NLL over steps. Shapes: log_pi (T,K), mu (T,K,D), sigma (T,K), z (T,D)."""
    d = z.shape[-1]
    sq = torch.sum((z[:, None, :] - mu) ** 2, dim=-1)
    log_comp = -0.5 * d * torch.log(2 * math.pi * sigma**2) - sq / (2 * sigma**2)
    return -torch.logsumexp(log_pi + log_comp, dim=-1).mean()


def sequence_nll(outputs: dict[str, torch.Tensor], z_targets: torch.Tensor) -> torch.Tensor:
    """Mean mixture NLL of a teacher-forced forward against target latents."""
    return _mixture_nll(outputs["log_pi"], outputs["mu"], outputs["sigma"], z_targets)


def focal_loss(logits: torch.Tensor, targets: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    """Mean focal loss; gamma=0 reduces to cross-entropy."""
    logp = torch.log_softmax(logits, dim=-1)
    lp_t = logp.gather(-1, targets[..., None]).squeeze(-1)
    return (-((1.0 - lp_t.exp()) ** gamma) * lp_t).mean()


def training_loss(
    pose_hat: torch.Tensor,
    gloss_logits: torch.Tensor,
    au_logits: torch.Tensor,
    pose_target: torch.Tensor,
    gloss_target: torch.Tensor,
    au_target: torch.Tensor,
    weights: LossWeights = LossWeights(),
    focal_gamma: float = 2.0,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Multi-task loss over aligned (T, ...) predictions and targets.

    Body and hand terms are per-step sums of squared error over their pose
    subranges, averaged over steps; hand errors carry the extra multiplier.
    """
    body = torch.sum((pose_hat[:, BODY_SLICE] - pose_target[:, BODY_SLICE]) ** 2, dim=-1).mean()
    hand = torch.sum((pose_hat[:, HAND_SLICE] - pose_target[:, HAND_SLICE]) ** 2, dim=-1).mean()
    gloss = F.cross_entropy(gloss_logits, gloss_target)
    au = focal_loss(au_logits, au_target, gamma=focal_gamma)
    total = (
        weights.lambda1 * (body + weights.hand_multiplier * hand)
        + weights.lambda2 * gloss
        + weights.lambda3 * au
    )
    return total, {"l_body": body, "l_hand": hand, "l_gloss": gloss, "l_au": au}


def uncertainty_alpha(params: MDNParams, z_hat: torch.Tensor) -> float:
    """Heatmap opacity: mixture-weighted logistic of component-mean distances."""
    dist = torch.linalg.norm(params.mu - z_hat[None, :], dim=-1)
    return float(torch.sum(params.pi * torch.sigmoid(dist)))


def free_run(
    decoder: MDNDecoder,
    features: torch.Tensor,
    n_frames: int,
    generator: torch.Generator,
    cond_seq: torch.Tensor | None = None,
    temperature: float = 1.0,
) -> tuple[torch.Tensor, list[DecoderStepOutput]]:
    """Sample n_frames latents autoregressively, exposing at step t only the
    feature prefix [: t + 1]. Returns the latents and per-step outputs."""
    c = decoder.config
    state = decoder.init_state()
    zs: list[torch.Tensor] = []
    outs: list[DecoderStepOutput] = []
    prev: torch.Tensor | None = None
    with torch.no_grad():
        for t in range(n_frames):
            cond = None if cond_seq is None else cond_seq[t]
            prefix = features[: min(t + 1, features.shape[0])]
            out, z, state = decode_step(
                decoder, state, prefix, prev,
                mode="sample", temperature=temperature, generator=generator, cond=cond,
            )
            zs.append(z)
            outs.append(out)
            prev = z
    return torch.stack(zs), outs
