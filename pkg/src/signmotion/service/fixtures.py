"""Synthetic corpora: labeled audio clips standing in for speech, plus the
pose/latent generators the toy training tests draw from."""
from __future__ import annotations

import json
import wave
from pathlib import Path

import numpy as np

TOY_GLOSSES = (
    "HELLO", "THANK_YOU", "PLEASE", "YES", "NO",
    "HELP", "WHERE", "EAT", "DRINK", "GOODBYE",
)


def gloss_name(index: int) -> str:
    """Stable printable label for a gloss vocabulary index."""
    if 0 <= index < len(TOY_GLOSSES):
        return TOY_GLOSSES[index]
    return f"GLOSS_{index:04d}"


def gloss_vocab(size: int) -> dict[str, int]:
    return {gloss_name(i): i for i in range(size)}


def tone_sweep(duration_s: float, sample_rate: int, f0: float, f1: float,
               amplitude: float = 0.5) -> np.ndarray:
    t = np.arange(int(duration_s * sample_rate)) / sample_rate
    freq = f0 + (f1 - f0) * t / max(duration_s, 1e-9)
    return amplitude * np.sin(2 * np.pi * np.cumsum(freq) / sample_rate)


def noise_burst(duration_s: float, sample_rate: int, seed: int,
                amplitude: float = 0.3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = int(duration_s * sample_rate)
    envelope = np.hanning(n)
    return amplitude * envelope * rng.normal(size=n)


def pure_tone(duration_s: float, sample_rate: int, freq: float,
              amplitude: float = 0.5) -> np.ndarray:
    t = np.arange(int(duration_s * sample_rate)) / sample_rate
    return amplitude * np.sin(2 * np.pi * freq * t)


def to_int16(pcm: np.ndarray) -> np.ndarray:
    return np.clip(pcm * 32767.0, -32768, 32767).astype("<i2")


def from_int16(data: np.ndarray | bytes) -> np.ndarray:
    arr = np.frombuffer(data, dtype="<i2") if isinstance(data, bytes) else data
    return arr.astype(np.float64) / 32767.0


def write_wav(path: str | Path, pcm: np.ndarray, sample_rate: int) -> None:
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(to_int16(pcm).tobytes())


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1 or wf.getsampwidth() != 2:
            raise ValueError("expected 16-bit mono WAV")
        rate = wf.getframerate()
        pcm = from_int16(wf.readframes(wf.getnframes()))
    return pcm, rate


def emit_corpus(out_dir: str | Path, sample_rate: int = 16000, seed: int = 0) -> list[dict]:
    """Write the labeled synthetic clips and a manifest; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest = []
    for i, gloss in enumerate(TOY_GLOSSES):
        kind = ("sweep", "burst", "tone")[i % 3]
        dur = 0.8 + 0.1 * (i % 3)
        if kind == "sweep":
            pcm = tone_sweep(dur, sample_rate, 200 + 40 * i, 600 + 60 * i)
        elif kind == "burst":
            pcm = noise_burst(dur, sample_rate, seed=int(rng.integers(1 << 31)))
        else:
            pcm = pure_tone(dur, sample_rate, 220 + 55 * i)
        name = f"{i:02d}_{gloss.lower()}.wav"
        write_wav(out / name, pcm, sample_rate)
        manifest.append({"file": name, "gloss": gloss, "kind": kind, "duration_s": dur})
    (out / "manifest.jsonl").write_text(
        "".join(json.dumps(m) + "\n" for m in manifest)
    )
    return manifest


# --- synthetic training data --------------------------------------------------

def make_pose_manifold(
    n: int, n_factors: int = 8, seed: int = 0, noise: float = 0.01
) -> np.ndarray:
    """Poses on a smooth low-dimensional manifold: a random linear map of
    sinusoidally-evolving factors, plus small isotropic noise."""
    rng = np.random.default_rng(seed)
    basis = rng.normal(size=(n_factors, 228)) / np.sqrt(n_factors)
    phases = rng.uniform(0, 2 * np.pi, size=n_factors)
    rates = rng.uniform(0.5, 2.0, size=n_factors)
    t = np.linspace(0, 4 * np.pi, n)[:, None]
    factors = np.sin(t * rates[None, :] + phases[None, :])
    offset = rng.normal(size=228) * 0.1
    return factors @ basis + offset + noise * rng.normal(size=(n, 228))


def make_two_cluster_poses(
    n_per_cluster: int, separation: float = 3.0, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Two Gaussian pose clusters; returns (poses, labels)."""
    rng = np.random.default_rng(seed)
    c0 = rng.normal(size=228)
    c0 /= np.linalg.norm(c0)
    centers = np.stack([separation * c0, -separation * c0])
    poses = []
    labels = []
    for k in range(2):
        poses.append(centers[k] + 0.2 * rng.normal(size=(n_per_cluster, 228)))
        labels.extend([k] * n_per_cluster)
    return np.concatenate(poses), np.array(labels)


def make_bimodal_latents(
    n_steps: int, latent_dim: int, separation: float = 1.0, spread: float = 0.05,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """I.i.d. draws from two well-separated latent clusters; returns
    (sequence, centers)."""
    rng = np.random.default_rng(seed)
    c = np.zeros((2, latent_dim))
    c[0, 0] = separation
    c[1, 0] = -separation
    picks = rng.integers(0, 2, size=n_steps)
    z = c[picks] + spread * rng.normal(size=(n_steps, latent_dim))
    return z, c
