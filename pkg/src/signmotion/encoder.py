"""Causal, state-cached encoder from log-Mel frames to downsampled features.

The streaming path (`encode_step`) and the batch path (`encode_batch`) are
independent implementations of the same causal network; the batch path is
the reference the streaming path is tested against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

MEL_BINS = 80
MEL_WINDOW_MS = 25.0
MEL_HOP_MS = 10.0
MEL_POWER_FLOOR = 1e-10


def _hz_to_mel(f: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int = MEL_BINS) -> np.ndarray:
    """Triangular filters (n_mels, n_fft//2 + 1) between 0 Hz and Nyquist."""
    n_bins = n_fft // 2 + 1
    freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    mel_pts = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    bank = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, mid, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (freqs - lo) / max(mid - lo, 1e-12)
        down = (hi - freqs) / max(hi - mid, 1e-12)
        bank[i] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def mel_frontend(pcm: np.ndarray, sample_rate: int) -> np.ndarray:
    """Log-Mel frames (T, 80) from mono PCM, 25 ms window / 10 ms hop."""
    pcm = np.asarray(pcm, dtype=np.float64)
    if sample_rate < 8000:
        raise ValueError(f"sample_rate {sample_rate} below 8 kHz")
    window = int(round(sample_rate * MEL_WINDOW_MS / 1000.0))
    hop = int(round(sample_rate * MEL_HOP_MS / 1000.0))
    if pcm.ndim != 1 or len(pcm) < window:
        raise ValueError(f"need at least one {window}-sample window of audio")
    n_frames = (len(pcm) - window) // hop + 1
    hann = np.hanning(window)
    bank = mel_filterbank(sample_rate, window)
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = pcm[idx] * hann
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    mel = power @ bank.T
    return np.log(np.maximum(mel, MEL_POWER_FLOOR))


class MelStreamer:
    """Incremental wrapper over mel_frontend keeping the inter-chunk residual."""

    def __init__(self, sample_rate: int):
        if sample_rate < 8000:
            raise ValueError(f"sample_rate {sample_rate} below 8 kHz")
        self.sample_rate = sample_rate
        self.window = int(round(sample_rate * MEL_WINDOW_MS / 1000.0))
        self.hop = int(round(sample_rate * MEL_HOP_MS / 1000.0))
        self._residual = np.zeros(0, dtype=np.float64)

    def push(self, pcm: np.ndarray) -> np.ndarray:
        """Consume a chunk; returns zero or more complete Mel frames."""
        self._residual = np.concatenate([self._residual, np.asarray(pcm, dtype=np.float64)])
        if len(self._residual) < self.window:
            return np.zeros((0, MEL_BINS))
        frames = mel_frontend(self._residual, self.sample_rate)
        consumed = len(frames) * self.hop
        self._residual = self._residual[consumed:]
        return frames


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 6
    dim: int = 256
    downsample_factor: int = 4
    conv_kernel: int = 3
    ffn_dim: int = 0          # 0 means 2 * dim
    max_context: int = 64
    mel_bins: int = MEL_BINS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.layers < 1 or self.dim < 8 or self.downsample_factor < 1:
            raise ValueError("invalid encoder config")
        if self.conv_kernel < 1:
            raise ValueError("conv_kernel must be >= 1")

    @property
    def ffn_width(self) -> int:
        return self.ffn_dim or 2 * self.dim


@dataclass(frozen=True)
class FeatureFrame:
    h: torch.Tensor
    source_range: tuple[int, int]  # 1-based input frame indices summarized


@dataclass
class EncoderState:
    conv_hist: list[list[torch.Tensor]]
    attn_k: list[list[torch.Tensor]]
    attn_v: list[list[torch.Tensor]]
    frames_seen: int = 0

    def cache_sizes(self) -> dict[str, int]:
        return {
            "conv": max((len(h) for h in self.conv_hist), default=0),
            "attn": max((len(h) for h in self.attn_k), default=0),
        }


class _EncoderLayer(nn.Module):
    def __init__(self, dim: int, kernel: int, ffn_dim: int, dtype: torch.dtype):
        super().__init__()
        self.kernel = kernel
        self.conv_dw = nn.Conv1d(dim, dim, kernel, groups=dim, dtype=dtype)
        self.conv_pw = nn.Linear(dim, dim, dtype=dtype)
        self.wq = nn.Linear(dim, dim, dtype=dtype)
        self.wk = nn.Linear(dim, dim, dtype=dtype)
        self.wv = nn.Linear(dim, dim, dtype=dtype)
        self.wo = nn.Linear(dim, dim, dtype=dtype)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_dim, dtype=dtype),
            nn.SiLU(),
            nn.Linear(ffn_dim, dim, dtype=dtype),
        )
        self.ln1 = nn.LayerNorm(dim, dtype=dtype)
        self.ln2 = nn.LayerNorm(dim, dtype=dtype)
        self.scale = 1.0 / math.sqrt(dim)


class ConformerEncoder(nn.Module):
    """Causal conv + causal single-head attention per layer, residual into a
    layer norm, then a feed-forward with its own norm."""

    def __init__(self, config: EncoderConfig, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.config = config
        self.dtype = dtype
        self.proj = nn.Linear(config.mel_bins, config.dim, dtype=dtype)
        self.layers = nn.ModuleList(
            _EncoderLayer(config.dim, config.conv_kernel, config.ffn_width, dtype)
            for _ in range(config.layers)
        )
        gen = torch.Generator().manual_seed(config.seed)
        for m in self.modules():
            if isinstance(m, (nn.Linear, nn.Conv1d)):
                fan_in = m.weight.shape[1] * (m.weight.shape[2] if m.weight.ndim == 3 else 1)
                bound = 1.0 / math.sqrt(fan_in)
                with torch.no_grad():
                    m.weight.uniform_(-bound, bound, generator=gen)
                    m.bias.uniform_(-bound, bound, generator=gen)

    def init_state(self) -> EncoderState:
        n = self.config.layers
        return EncoderState(
            conv_hist=[[] for _ in range(n)],
            attn_k=[[] for _ in range(n)],
            attn_v=[[] for _ in range(n)],
        )

    def encode_step(
        self, mel: np.ndarray | torch.Tensor, state: EncoderState
    ) -> tuple[FeatureFrame | None, EncoderState]:
        """Process one Mel frame; emits a feature every downsample_factor inputs."""
        c = self.config
        x = torch.as_tensor(np.asarray(mel), dtype=self.dtype)
        if x.shape != (c.mel_bins,):
            raise ValueError(f"mel frame must have {c.mel_bins} bins, got {tuple(x.shape)}")
        if len(state.conv_hist) != c.layers:
            raise ValueError("state does not match this encoder config")
        with torch.no_grad():
            u = self.proj(x)
            for i, layer in enumerate(self.layers):
                hist = state.conv_hist[i]
                window = [torch.zeros(c.dim, dtype=self.dtype)] * (c.conv_kernel - 1 - len(hist))
                window += hist + [u]
                stacked = torch.stack(window[-c.conv_kernel:])  # oldest -> newest
                conv = torch.sum(layer.conv_dw.weight[:, 0, :].T * stacked, dim=0)
                conv = conv + layer.conv_dw.bias
                conv = layer.conv_pw(F.silu(conv))
                if c.conv_kernel > 1:
                    hist.append(u.clone())
                    if len(hist) > c.conv_kernel - 1:
                        del hist[0]
                k = layer.wk(u)
                v = layer.wv(u)
                state.attn_k[i].append(k)
                state.attn_v[i].append(v)
                if len(state.attn_k[i]) > c.max_context:
                    del state.attn_k[i][0]
                    del state.attn_v[i][0]
                ks = torch.stack(state.attn_k[i])
                vs = torch.stack(state.attn_v[i])
                att = torch.softmax(ks @ layer.wq(u) * layer.scale, dim=0)
                a = layer.wo(att @ vs)
                u = layer.ln1(u + conv + a)
                u = layer.ln2(u + layer.ffn(u))
        state.frames_seen += 1
        if state.frames_seen % c.downsample_factor == 0:
            rng = (state.frames_seen - c.downsample_factor + 1, state.frames_seen)
            return FeatureFrame(h=u, source_range=rng), state
        return None, state

    def encode_chunk(
        self, mels: np.ndarray, state: EncoderState
    ) -> tuple[list[FeatureFrame], EncoderState]:
        out = []
        for row in np.asarray(mels):
            feat, state = self.encode_step(row, state)
            if feat is not None:
                out.append(feat)
        return out, state

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        """Grad-enabled causal forward over (T, mel_bins); used by toy fitting."""
        c = self.config
        T = x.shape[0]
        t_idx = torch.arange(T)
        band = (t_idx[:, None] >= t_idx[None, :]) & (
            t_idx[None, :] > t_idx[:, None] - c.max_context
        )
        neg = torch.finfo(self.dtype).min
        u = self.proj(x)
        for layer in self.layers:
            padded = F.pad(u.T[None], (c.conv_kernel - 1, 0))
            conv = layer.conv_dw(padded)[0].T
            conv = layer.conv_pw(F.silu(conv))
            q = layer.wq(u)
            k = layer.wk(u)
            v = layer.wv(u)
            scores = (q @ k.T * layer.scale).masked_fill(~band, neg)
            a = layer.wo(torch.softmax(scores, dim=-1) @ v)
            u = layer.ln1(u + conv + a)
            u = layer.ln2(u + layer.ffn(u))
        return u

    def encode_batch(self, mels: np.ndarray | torch.Tensor) -> list[FeatureFrame]:
        """Causal reference implementation over a whole utterance."""
        c = self.config
        x = torch.as_tensor(np.asarray(mels), dtype=self.dtype)
        if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] != c.mel_bins:
            raise ValueError(f"expected a nonempty (T, {c.mel_bins}) input")
        with torch.no_grad():
            u = self.forward_features(x)
        out = []
        for n in range(x.shape[0] // c.downsample_factor):
            t = (n + 1) * c.downsample_factor - 1
            out.append(FeatureFrame(h=u[t], source_range=(t + 2 - c.downsample_factor, t + 1)))
        return out


def features_to_tensor(features: list[FeatureFrame]) -> torch.Tensor:
    if not features:
        raise ValueError("no features")
    return torch.stack([f.h for f in features])
