/**
 * Drives the real Python service over TCP: generation, windowed edit
 * retransmission, heatmap alpha fidelity, the keyboard-only edit+rating
 * path, and six-field round-trips.
 */
import { type ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { SessionClient } from "../src/client.js";
import { EditController } from "../src/editor.js";
import { FocusRing } from "../src/focus.js";
import { PreviewModel } from "../src/preview.js";
import { RatingWidget } from "../src/rating.js";
import { TimelineModel } from "../src/timeline.js";
import { TcpTransport } from "../src/transport.js";
import type { ResampleMessage, StreamMessage } from "../src/types.js";

const TOY_CONFIG = {
  enc_layers: 2,
  enc_dim: 24,
  enc_max_context: 16,
  latent_dim: 8,
  vae_hidden: [32, 24],
  n_components: 3,
  dec_model_dim: 24,
  dec_blocks: 1,
  dec_ffn_dim: 32,
  dec_max_context: 16,
  gloss_vocab: 10,
  window_delta: 10,
  window_k: 4,
  max_frames: 500,
};

let proc: ChildProcess;
let port: number;

function toneSweep(seconds: number, sampleRate: number, f0: number, f1: number): Int16Array {
  const n = Math.floor(seconds * sampleRate);
  const pcm = new Int16Array(n);
  let phase = 0;
  for (let i = 0; i < n; i++) {
    const f = f0 + ((f1 - f0) * i) / n;
    phase += (2 * Math.PI * f) / sampleRate;
    pcm[i] = Math.round(0.5 * 32767 * Math.sin(phase));
  }
  return pcm;
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "signmotion-ui-"));
  const cfgPath = join(dir, "config.json");
  writeFileSync(cfgPath, JSON.stringify(TOY_CONFIG));
  proc = spawn(
    "python3",
    ["-m", "signmotion.service.cli", "serve", "--port", "0",
     "--config", cfgPath, "--data-dir", join(dir, "data")],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  port = await new Promise<number>((resolve, reject) => {
    let out = "";
    const timer = setTimeout(() => reject(new Error(`service not ready: ${out}`)), 30_000);
    proc.stdout!.on("data", (chunk: Buffer) => {
      out += chunk.toString();
      const m = /READY (\d+)/.exec(out);
      if (m) {
        clearTimeout(timer);
        resolve(Number(m[1]));
      }
    });
    proc.stderr!.on("data", (chunk: Buffer) => {
      out += chunk.toString();
    });
    proc.on("exit", (code) => reject(new Error(`service exited ${code}: ${out}`)));
  });
}, 60_000);

afterAll(() => {
  proc?.kill();
});

interface Bench {
  client: SessionClient;
  session: string;
  timeline: TimelineModel;
  editor: EditController;
  preview: PreviewModel;
  stream: StreamMessage[];
}

async function editableBench(): Promise<Bench> {
  const client = new SessionClient(await TcpTransport.connect("127.0.0.1", port));
  const preview = new PreviewModel();
  const stream: StreamMessage[] = [];
  client.onStream((msg) => {
    stream.push(msg);
    preview.applyMessage(msg);
  });
  const { session } = await client.createSession({});
  await client.subscribeFrames(session, 0);
  await client.pushAudio(session, toneSweep(1.0, 16000, 220, 550));
  const { segments, alphas } = await client.endAudio(session);
  const timeline = new TimelineModel();
  const editor = new EditController(client, session, timeline);
  editor.adopt(segments, alphas);
  return { client, session, timeline, editor, preview, stream };
}

describe("against the live service", () => {
  it("streams frames whose heatmap opacity equals the streamed alpha", async () => {
    const bench = await editableBench();
    const frames = bench.stream.filter((m) => m.type === "frame");
    expect(frames.length).toBe(24); // 1 s -> 98 mel -> 24 features -> 24 poses
    for (const f of frames) {
      if (f.type === "frame") {
        expect(bench.preview.opacityAt(f.frame_index)).toBe(f.alpha);
        expect(f.alpha).toBeGreaterThan(0);
        expect(f.alpha).toBeLessThan(1);
      }
    }
    bench.client.close();
  }, 30_000);

  it("an emphasis edit triggers exactly one windowed retransmission, applied in place", async () => {
    const bench = await editableBench();
    const before = bench.stream.length;
    bench.timeline.select(0);
    const result = await bench.editor.submitField(0, "emphasis", "strong");
    expect(result.applied).toBe(true);
    expect(result.report).not.toBeNull();

    const after = bench.stream.slice(before);
    const resamples = after.filter((m): m is ResampleMessage => m.type === "resample");
    expect(resamples).toHaveLength(1);
    const superseded = after.filter((m) => m.type === "frame" && m.supersede);
    const expected: number[] = [];
    for (let i = result.report!.t_min; i <= result.report!.t_max; i++) expected.push(i);
    expect(
      superseded.map((m) => (m.type === "frame" ? m.frame_index : -1)),
    ).toEqual(expected);
    expect(superseded).toHaveLength(result.report!.frames_regenerated);
    // rendered in place: the preview still holds one frame per index, with
    // the superseding message ids at the window positions
    expect(bench.preview.frameCount()).toBe(24);
    for (const m of superseded) {
      if (m.type === "frame") {
        expect(bench.preview.sourceMessageId(m.frame_index)).toBe(m.msg_id);
        expect(bench.preview.opacityAt(m.frame_index)).toBe(m.alpha);
      }
    }
    bench.client.close();
  }, 30_000);

  it("completes a keyboard-only edit + rating path", async () => {
    const bench = await editableBench();
    const rating = new RatingWidget(bench.client, bench.session);
    let editApplied = false;

    const ring = new FocusRing();
    ring.setItems([
      { id: "segment-0", activate: () => bench.timeline.select(0) },
      {
        id: "field-emphasis",
        activate: async () => {
          const r = await bench.editor.submitField(0, "emphasis", "mild");
          editApplied = r.applied;
        },
      },
      { id: "rating", activate: async () => void (await rating.handleKey("Enter")) },
    ]);

    await ring.handleKey("Enter"); // select the chip
    expect(bench.timeline.selected).toBe(0);
    await ring.handleKey("Tab"); // focus the emphasis editor
    await ring.handleKey("Enter"); // commit the edit
    expect(editApplied).toBe(true);
    await ring.handleKey("Tab"); // focus the rating widget
    await rating.handleKey("4"); // choose the score by key
    await ring.handleKey("Enter"); // submit
    expect(rating.submitted).toBe(true);
    expect(rating.value).toBe(4);
    expect(await rating.submit()).toBe(false); // still one per round
    bench.client.close();
  }, 30_000);

  it("round-trips edits on all six schema fields", async () => {
    const bench = await editableBench();
    const edits: Array<[string, unknown]> = [
      ["gloss_id", "ROUNDTRIP"],
      ["handshape.finger_config.thumb", 0.33],
      ["trajectory[0].x", 0.123],
      ["duration", bench.editor.segments[0]!.duration + 0.04],
      ["non_manual_markers.eye_gaze", "down"],
      ["emphasis", "strong"],
    ];
    for (const [path, value] of edits) {
      const result = await bench.editor.submitField(0, path, value);
      expect(result.applied, `${path} should apply`).toBe(true);
      const echoed = bench.editor.valueAt(0, path);
      if (typeof value === "number") {
        expect(echoed).toBeCloseTo(value, 9);
      } else {
        expect(echoed).toBe(value);
      }
    }
    bench.client.close();
  }, 60_000);

  it("surfaces path-bearing validation errors and leaves frames untouched", async () => {
    const bench = await editableBench();
    const framesBefore = bench.preview.frameCount();
    const msgsBefore = bench.stream.length;
    const result = await bench.editor.submitField(
      0,
      "non_manual_markers.facial_expression",
      42 as unknown as string,
    );
    expect(result.applied).toBe(false);
    expect(result.error?.path).toContain("facial_expression");
    expect(bench.preview.frameCount()).toBe(framesBefore);
    expect(bench.stream.filter((m) => m.type === "frame").length).toBe(
      bench.stream.slice(0, msgsBefore).filter((m) => m.type === "frame").length,
    );
    bench.client.close();
  }, 30_000);

  it("metrics and close round-trip", async () => {
    const bench = await editableBench();
    const metrics = await bench.client.metrics(bench.session);
    const stages = metrics["stages"] as Record<string, { count: number }>;
    expect(stages["frontend"]!.count).toBe(98);
    expect(stages["decode"]!.count).toBe(24);
    await bench.client.closeSession(bench.session);
    const eos = bench.stream.find((m) => m.type === "end_of_stream");
    expect(eos).toBeDefined();
    bench.client.close();
  }, 30_000);
});
