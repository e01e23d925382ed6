"""Latent compression of 228-dim poses: encoder to (mu, log-variance),
reparameterized sampling, decoder, and the reconstruction/KL losses."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .motion import POSE_DIM


def _init_linear(lin: nn.Linear, gen: torch.Generator) -> None:
    fan_in = lin.weight.shape[1]
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        lin.weight.uniform_(-bound, bound, generator=gen)
        lin.bias.uniform_(-bound, bound, generator=gen)


class PoseVAE(nn.Module):
    """Two hidden layers each way; both directions share the latent width."""

    def __init__(
        self,
        pose_dim: int = POSE_DIM,
        latent_dim: int = 128,
        hidden: Sequence[int] = (256, 192),
        seed: int = 0,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.pose_dim = pose_dim
        self.latent_dim = latent_dim
        h1, h2 = hidden
        self.enc = nn.Sequential(
            nn.Linear(pose_dim, h1, dtype=dtype),
            nn.SiLU(),
            nn.Linear(h1, h2, dtype=dtype),
            nn.SiLU(),
            nn.Linear(h2, 2 * latent_dim, dtype=dtype),
        )
        self.dec = nn.Sequential(
            nn.Linear(latent_dim, h2, dtype=dtype),
            nn.SiLU(),
            nn.Linear(h2, h1, dtype=dtype),
            nn.SiLU(),
            nn.Linear(h1, pose_dim, dtype=dtype),
        )
        gen = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, nn.Linear):
                _init_linear(m, gen)

    def encode(self, pose: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out = self.enc(pose)
        return out[..., : self.latent_dim], out[..., self.latent_dim :]

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.dec(z)

    def decode_numpy(self, z: np.ndarray) -> np.ndarray:
        """Deterministic pose reconstruction for non-torch callers."""
        dtype = next(self.parameters()).dtype
        with torch.no_grad():
            t = torch.from_numpy(np.asarray(z, dtype=np.float64)).to(dtype)
            return self.decode(t).cpu().numpy().astype(np.float64)

    def encode_numpy(self, pose: np.ndarray) -> np.ndarray:
        dtype = next(self.parameters()).dtype
        with torch.no_grad():
            t = torch.from_numpy(np.asarray(pose, dtype=np.float64)).to(dtype)
            mu, _ = self.encode(t)
            return mu.cpu().numpy().astype(np.float64)


def reparameterize(
    mu: torch.Tensor, log_var: torch.Tensor, generator: torch.Generator | None = None
) -> torch.Tensor:
    """z = mu + exp(log_var / 2) * eps with eps ~ N(0, I)."""
    eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    return mu + torch.exp(0.5 * log_var) * eps


def vae_loss(
    pose: torch.Tensor, pose_hat: torch.Tensor, mu: torch.Tensor, log_var: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Sum-of-squares reconstruction error and the closed-form KL to N(0, I)."""
    l_recon = torch.sum((pose - pose_hat) ** 2)
    l_kl = 0.5 * torch.sum(torch.exp(log_var) + mu**2 - 1.0 - log_var)
    return l_recon, l_kl


def vae_grad_check(model: PoseVAE, pose: torch.Tensor, eps: float = 1e-5) -> float:
    """Max relative error between autograd and central finite differences over
    every parameter, for l_recon + l_kl with the sampling noise held fixed.

    Relative to max(1, |g|) so near-zero gradients compare on an absolute
    scale.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps {eps} outside [1e-6, 1e-4]")
    gen = torch.Generator().manual_seed(1234)
    noise = torch.randn(
        pose.shape[:-1] + (model.latent_dim,), generator=gen, dtype=pose.dtype
    )

    def loss_value() -> torch.Tensor:
        mu, log_var = model.encode(pose)
        z = mu + torch.exp(0.5 * log_var) * noise
        l_recon, l_kl = vae_loss(pose, model.decode(z), mu, log_var)
        return l_recon + l_kl

    model.zero_grad()
    loss_value().backward()
    worst = 0.0
    for p in model.parameters():
        grad = p.grad.detach().clone().reshape(-1)
        flat = p.data.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = loss_value().item()
            flat[i] = orig - eps
            down = loss_value().item()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            a = grad[i].item()
            rel = abs(a - fd) / max(1.0, abs(a), abs(fd))
            worst = max(worst, rel)
    return worst


def train_toy(
    model: PoseVAE,
    poses: torch.Tensor,
    steps: int = 400,
    lr: float = 1e-3,
    kl_weight: float = 1e-3,
    seed: int = 0,
) -> list[float]:
    """Full-batch Adam on mean reconstruction + weighted KL; returns the loss curve."""
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    curve = []
    for _ in range(steps):
        opt.zero_grad()
        mu, log_var = model.encode(poses)
        z = reparameterize(mu, log_var, gen)
        l_recon, l_kl = vae_loss(poses, model.decode(z), mu, log_var)
        loss = (l_recon + kl_weight * l_kl) / poses.shape[0]
        loss.backward()
        opt.step()
        curve.append(loss.item())
    return curve


def variance_retained(model: PoseVAE, poses: torch.Tensor) -> float:
    """Fraction of pose variance surviving an encode(mu)/decode round trip."""
    with torch.no_grad():
        mu, _ = model.encode(poses)
        recon = model.decode(mu)
        resid = torch.sum((poses - recon) ** 2)
        total = torch.sum((poses - poses.mean(dim=0)) ** 2)
    return float(1.0 - resid / total)
