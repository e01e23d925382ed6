from __future__ import annotations

import json
from pathlib import Path

import pytest

from signmotion import ir
from signmotion.decoder import DecoderConfig, MDNDecoder
from signmotion.vae import PoseVAE

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def thank_you_doc() -> dict:
    return json.loads((FIXTURES / "thank_you_segment.json").read_text())


@pytest.fixture()
def thank_you_segment(thank_you_doc) -> ir.ActionSegment:
    with pytest.warns(ir.IRSchemaWarning):
        # The reference instance leaves two frames of slack after the last
        # trajectory point, which the validator flags (but accepts).
        return ir.validate_segment(thank_you_doc)


@pytest.fixture(scope="session")
def tiny_decoder() -> MDNDecoder:
    cfg = DecoderConfig(
        latent_dim=8, n_components=3, model_dim=24, n_blocks=1, ffn_dim=32,
        gloss_vocab=10, cond_dim=8, max_context=32, seed=2,
    )
    return MDNDecoder(cfg)


@pytest.fixture(scope="session")
def tiny_vae() -> PoseVAE:
    return PoseVAE(latent_dim=8, hidden=(32, 24), seed=3)


def make_segment(
    gloss="HELLO", duration=0.2, n_points=4, emphasis="none", **extra
) -> ir.ActionSegment:
    traj = [
        {"x": 0.1 * i, "y": 0.0, "z": 0.2,
         "t_offset": round(i * duration / max(1, n_points - 1), 6)}
        for i in range(n_points)
    ]
    doc = {
        "gloss_id": gloss,
        "handshape": {
            "type": "B",
            "finger_config": {f: 0.5 for f in ir.FINGERS},
        },
        "trajectory": traj,
        "duration": duration,
        "non_manual_markers": {
            "facial_expression": "neutral",
            "head_movement": "none",
            "eye_gaze": "straight",
        },
        "emphasis": emphasis,
        **extra,
    }
    return ir.validate_segment(doc)
