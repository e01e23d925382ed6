"""Versioned pipeline configuration; every tunable default lives here."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import torch

from ..decoder import DecoderConfig, LossWeights, MDNDecoder
from ..encoder import ConformerEncoder, EncoderConfig
from ..vae import PoseVAE

CONFIG_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    version: int = CONFIG_VERSION
    # session
    fps: int = 25
    sample_rate: int = 16000
    max_frames: int = 4000           # buffer capacity, frames
    seed: int = 0
    budget_ms: float = 150.0         # end-to-end alert threshold
    # resample window
    window_delta: int = 50
    window_k: int = 8
    # encoder
    enc_layers: int = 6
    enc_dim: int = 256
    downsample_factor: int = 4
    conv_kernel: int = 3
    enc_max_context: int = 64
    # latent space
    latent_dim: int = 128
    vae_hidden: tuple[int, int] = (256, 192)
    # decoder
    n_components: int = 5
    dec_model_dim: int = 128
    dec_blocks: int = 2
    dec_ffn_dim: int = 256
    dec_max_context: int = 64
    gloss_vocab: int = 3000
    au_classes: int = 7
    cond_dim: int = 8
    sigma_floor: float = 1e-4
    temperature: float = 1.0
    # training loss
    lambda1: float = 1.0
    lambda2: float = 0.6
    lambda3: float = 0.4
    hand_multiplier: float = 3.0
    focal_gamma: float = 2.0
    # hitl
    replay_capacity: int = 1500
    triplet_thr: int = 450
    time_int_s: float = 14 * 24 * 3600.0
    replay_fraction: float = 0.25
    anchor_fraction: float = 0.20
    kl_ramp_steps: int = 200

    def __post_init__(self) -> None:
        if self.fps < 1:
            raise ValueError(f"fps must be >= 1, got {self.fps}")
        if self.max_frames < 1 or self.window_delta < 1 or self.window_k < 0:
            raise ValueError("invalid buffer/window configuration")
        if self.sample_rate < 8000:
            raise ValueError("sample_rate must be >= 8000")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        version = doc.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {version}")
        known = {f.name for f in dataclasses.fields(PipelineConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "vae_hidden" in doc:
            doc["vae_hidden"] = tuple(doc["vae_hidden"])
        return PipelineConfig(**doc)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @staticmethod
    def load(path: str | Path) -> "PipelineConfig":
        return PipelineConfig.from_dict(json.loads(Path(path).read_text()))

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            layers=self.enc_layers,
            dim=self.enc_dim,
            downsample_factor=self.downsample_factor,
            conv_kernel=self.conv_kernel,
            max_context=self.enc_max_context,
            seed=self.seed,
        )

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            latent_dim=self.latent_dim,
            n_components=self.n_components,
            model_dim=self.dec_model_dim,
            n_blocks=self.dec_blocks,
            ffn_dim=self.dec_ffn_dim,
            gloss_vocab=self.gloss_vocab,
            au_classes=self.au_classes,
            cond_dim=self.cond_dim,
            feature_dim=self.enc_dim,
            max_context=self.dec_max_context,
            sigma_floor=self.sigma_floor,
            seed=self.seed,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            lambda3=self.lambda3,
            hand_multiplier=self.hand_multiplier,
        )

    def model_key(self) -> tuple:
        """Fields that determine model architecture and weights."""
        return (
            self.seed, self.enc_layers, self.enc_dim, self.downsample_factor,
            self.conv_kernel, self.enc_max_context, self.latent_dim,
            self.vae_hidden, self.n_components, self.dec_model_dim,
            self.dec_blocks, self.dec_ffn_dim, self.dec_max_context,
            self.gloss_vocab, self.au_classes, self.cond_dim, self.sigma_floor,
        )


@dataclass
class ModelSet:
    encoder: ConformerEncoder
    vae: PoseVAE
    decoder: MDNDecoder


def build_models(config: PipelineConfig, dtype: torch.dtype = torch.float64) -> ModelSet:
    return ModelSet(
        encoder=ConformerEncoder(config.encoder_config(), dtype=dtype),
        vae=PoseVAE(
            latent_dim=config.latent_dim,
            hidden=config.vae_hidden,
            seed=config.seed,
            dtype=dtype,
        ),
        decoder=MDNDecoder(config.decoder_config(), dtype=dtype),
    )
