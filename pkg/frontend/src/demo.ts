/**
 * End-to-end demo against a running service: generate from a synthesized
 * tone, edit a segment, rate the result, and write a static HTML preview
 * (timeline strip + per-frame SVG skeletons with heatmap opacity).
 *
 *   signmotion serve --port 7341 &          # in the repo root
 *   npm run demo -- 127.0.0.1 7341 out.html
 */

import { writeFileSync } from "node:fs";

import { SessionClient } from "./client.js";
import { PreviewModel } from "./preview.js";
import { RatingWidget } from "./rating.js";
import { skeletonToSvg } from "./svg.js";
import { TimelineModel } from "./timeline.js";
import { EditController } from "./editor.js";
import { TcpTransport } from "./transport.js";
import type { StreamMessage } from "./types.js";

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

async function main(): Promise<void> {
  const host = process.argv[2] ?? "127.0.0.1";
  const port = Number(process.argv[3] ?? 7341);
  const outPath = process.argv[4] ?? "preview.html";

  const client = new SessionClient(await TcpTransport.connect(host, port));
  const preview = new PreviewModel();
  const timeline = new TimelineModel();
  client.onStream((msg: StreamMessage) => preview.applyMessage(msg));

  const { session } = await client.createSession({});
  await client.subscribeFrames(session, 0);
  const progress = await client.pushAudio(session, toneSweep(1.0, 16000, 220, 550));
  console.log(`generated ${progress.frames} frames (gloss: ${progress.gloss})`);

  const { segments, alphas } = await client.endAudio(session);
  const editor = new EditController(client, session, timeline);
  editor.adopt(segments, alphas);
  console.log("timeline:");
  for (const chip of timeline.chips()) {
    console.log(
      `  [${chip.index}] ${chip.label}  ${chip.start.toFixed(2)}-${chip.end.toFixed(2)}s` +
        `  alpha=${chip.alpha.toFixed(3)}  emphasis=${chip.emphasis}`,
    );
  }

  timeline.select(0);
  const result = await editor.submitField(0, "emphasis", "strong");
  if (result.report) {
    console.log(
      `resampled frames ${result.report.t_min}..${result.report.t_max} ` +
        `in ${result.report.elapsed_ms.toFixed(1)} ms`,
    );
  }

  const rating = new RatingWidget(client, session);
  rating.select(4);
  await rating.submit();
  console.log("rating submitted:", rating.value);

  const chips = timeline
    .chips()
    .map(
      (c) =>
        `<span style="display:inline-block;margin:2px;padding:6px 10px;` +
        `background:rgba(0,96,160,${c.alpha.toFixed(3)});color:#fff;border-radius:4px">` +
        `${c.label} ${c.duration.toFixed(2)}s</span>`,
    )
    .join("");
  const svgs: string[] = [];
  for (let i = 0; i < preview.frameCount(); i++) {
    const frame = preview.frameAt(i);
    if (frame) svgs.push(skeletonToSvg(frame, { width: 160, height: 160, scale: 90 }));
  }
  writeFileSync(
    outPath,
    `<!doctype html><meta charset="utf-8"><title>signmotion preview</title>` +
      `<body style="font-family:sans-serif;background:#111;color:#eee">` +
      `<h2>Timeline</h2><div>${chips}</div>` +
      `<h2>Frames</h2><div>${svgs.join("")}</div>`,
  );
  console.log(`wrote ${outPath}`);
  await client.closeSession(session);
  client.close();
}

main().catch((err) => {
  console.error(err);
  process.exit(1);
});
