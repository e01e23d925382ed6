"""Command-line entry points: serve, gen, edit, validate, bench, fixtures."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .. import ir
from ..checkpoint import load_checkpoint, save_checkpoint
from ..decoder import DecoderConfig, MDNDecoder
from ..motion import EditEvent, SeqBuffer, WindowParams
from ..resample import ResampleContext, ResampleRequest, apply_edit, cost_probe, edit_seed
from ..vae import PoseVAE
from .config import PipelineConfig
from .fixtures import emit_corpus, read_wav
from .server import run_server
from .session import SessionManager


def _setup_logging() -> None:
    level = os.environ.get("SIGNMOTION_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _data_dir(args) -> Path:
    return Path(getattr(args, "data_dir", None) or os.environ.get("SIGNMOTION_DATA", "./data"))


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return PipelineConfig.load(args.config)
    return PipelineConfig()


def cmd_serve(args) -> int:
    manager = SessionManager(_load_config(args), data_dir=_data_dir(args))
    run_server(manager, host=args.host, port=args.port)
    return 0


def cmd_gen(args) -> int:
    config = _load_config(args)
    pcm, rate = read_wav(args.audio)
    if rate != config.sample_rate:
        config = PipelineConfig.from_dict({**config.to_dict(), "sample_rate": rate})
    manager = SessionManager(config, data_dir=None)
    session = manager.create_session()
    session.push_audio(pcm)
    payload = session.end_audio()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "segments.json").write_text(ir.serialize_document(session.segments) + "\n")
    with open(out / "frames.jsonl", "w", encoding="utf-8") as fh:
        for msg in session.stream_log:
            if msg["type"] == "frame":
                fh.write(json.dumps(msg) + "\n")
    (out / "metrics.json").write_text(json.dumps(session.snapshot_metrics(), indent=2) + "\n")
    t = len(session.buf)
    save_checkpoint(
        {
            "latents": torch.from_numpy(session.latents[:t]),
            "alphas": torch.from_numpy(session.alphas[:t]),
            "features": session.features(),
            "gloss_idx": torch.tensor(session.gloss_idx, dtype=torch.float64),
            "au_idx": torch.tensor(session.au_idx, dtype=torch.float64),
        },
        out / "state.bin",
        extra={"config": config.to_dict(), "frames": t},
    )
    print(f"generated {t} frames, {len(payload['segments'])} segments -> {out}")
    return 0


def cmd_edit(args) -> int:
    bundle = Path(args.bundle)
    arrays, extra = load_checkpoint(bundle / "state.bin")
    config = PipelineConfig.from_dict(extra["config"])
    manager = SessionManager(config, data_dir=None)
    models = manager.models_for(config)

    segments = ir.parse_document((bundle / "segments.json").read_text(), fps=config.fps)
    patch = ir.patch_from_dict(json.loads(Path(args.patch).read_text()))

    latents = arrays["latents"].astype(np.float64)
    alphas = arrays["alphas"].astype(np.float64)
    T = latents.shape[0]
    buf = SeqBuffer(max(T, config.max_frames))
    for z in latents:
        buf.append(models.vae.decode_numpy(z))
    ctx = ResampleContext(
        segments=segments,
        features=torch.from_numpy(arrays["features"].astype(np.float64)).to(models.decoder.dtype),
        fps=config.fps,
        session_seed=config.seed,
        alphas=alphas,
    )
    _, (fa, fb) = ir.apply_patch(segments, patch, config.fps)
    t_edit = min(max(1, (fa + fb) // 2), T)
    req = ResampleRequest(
        event=EditEvent(t_edit=t_edit, patch=patch, seq_no=1),
        window=WindowParams(config.window_delta, config.window_k),
        seed=edit_seed(config.seed, 1),
    )
    report = apply_edit(buf, latents, req, models.decoder, models.vae, ctx)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "segments.json").write_text(ir.serialize_document(ctx.segments) + "\n")
    save_checkpoint(
        {
            "latents": torch.from_numpy(latents),
            "alphas": torch.from_numpy(alphas),
            "features": ctx.features,
            "gloss_idx": torch.from_numpy(arrays["gloss_idx"].astype(np.float64)),
            "au_idx": torch.from_numpy(arrays["au_idx"].astype(np.float64)),
        },
        out / "state.bin",
        extra={"config": config.to_dict(), "frames": T},
    )
    (out / "report.json").write_text(json.dumps({
        "t_min": report.t_min, "t_max": report.t_max,
        "frames_regenerated": report.frames_regenerated,
        "elapsed_ms": report.elapsed * 1e3, "context_len": report.context_len,
    }, indent=2) + "\n")
    print(report.to_log_line())
    return 0


def cmd_validate(args) -> int:
    text = Path(args.file).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"INVALID: not JSON: {exc}")
        return 1
    try:
        if isinstance(doc, dict) and "segments" in doc:
            segments = ir.parse_document(text)
            print(f"OK: document with {len(segments)} segments")
        else:
            seg = ir.validate_segment(doc)
            print(f"OK: segment {seg.gloss_id}")
        return 0
    except ir.IRValidationError as exc:
        print(f"INVALID at {exc.path}: {exc}")
        return 1


def cmd_bench(args) -> int:
    dcfg = DecoderConfig(
        latent_dim=16, n_components=3, model_dim=32, n_blocks=2, ffn_dim=64,
        gloss_vocab=32, cond_dim=8, max_context=64, seed=0,
    )
    decoder = MDNDecoder(dcfg)
    vae = PoseVAE(latent_dim=16, hidden=(64, 48), seed=0)
    t_values = [int(v) for v in args.lengths.split(",")]
    table = cost_probe(decoder, vae, t_values, delta=args.delta, trials=args.trials)
    print(f"{'T':>8} {'mean_ms':>10}")
    for T, mean in table:
        print(f"{T:>8} {mean * 1e3:>10.2f}")
    deltas = [int(v) for v in args.deltas.split(",")]
    print(f"{'delta':>8} {'mean_ms':>10}")
    for d in deltas:
        sub = cost_probe(decoder, vae, [t_values[0]], delta=d, trials=args.trials)
        print(f"{d:>8} {sub[0][1] * 1e3:>10.2f}")
    return 0


def cmd_fixtures(args) -> int:
    manifest = emit_corpus(args.out_dir, sample_rate=args.sample_rate)
    print(f"wrote {len(manifest)} clips to {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="signmotion")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run the TCP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=7341)
    s.add_argument("--config")
    s.add_argument("--data-dir")
    s.set_defaults(fn=cmd_serve)

    s = sub.add_parser("gen", help="audio file -> segments + frames bundle")
    s.add_argument("--audio", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--config")
    s.set_defaults(fn=cmd_gen)

    s = sub.add_parser("edit", help="apply a patch file to a generated bundle")
    s.add_argument("--bundle", required=True)
    s.add_argument("--patch", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_edit)

    s = sub.add_parser("validate", help="validate an IR file")
    s.add_argument("--file", required=True)
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("bench", help="resample cost probe")
    s.add_argument("--lengths", default="500,1000,2000,4000")
    s.add_argument("--deltas", default="25,50,100")
    s.add_argument("--delta", type=int, default=50)
    s.add_argument("--trials", type=int, default=5)
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("fixtures", help="emit the synthetic audio corpus")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--sample-rate", type=int, default=16000)
    s.set_defaults(fn=cmd_fixtures)
    return p


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
