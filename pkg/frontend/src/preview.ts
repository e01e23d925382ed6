/**
 * Skeleton preview: keeps the latest frame per index (supersede replaces in
 * place), exposes heatmap opacity exactly as streamed, and renders a 2-D
 * orthographic line view. Every rendered frame carries the msg_id of the
 * stream message it came from; the model never invents frames.
 */

import type { FrameMessage, StreamMessage } from "./types.js";

export interface PreviewStats {
  received: number;
  superseded: number;
  outOfOrder: number;
}

export class PreviewModel {
  private frames = new Map<number, FrameMessage>();
  private lastLiveIndex = -1;
  cursor = 0;
  stats: PreviewStats = { received: 0, superseded: 0, outOfOrder: 0 };

  applyMessage(msg: StreamMessage): void {
    if (msg.type !== "frame") return;
    if (typeof msg.msg_id !== "number") {
      throw new Error("frame without msg_id; refusing to render untracked data");
    }
    this.stats.received += 1;
    if (msg.supersede) {
      this.stats.superseded += 1;
    } else {
      if (msg.frame_index <= this.lastLiveIndex) this.stats.outOfOrder += 1;
      this.lastLiveIndex = Math.max(this.lastLiveIndex, msg.frame_index);
    }
    this.frames.set(msg.frame_index, msg);
  }

  frameCount(): number {
    return this.frames.size;
  }

  frameAt(index: number): FrameMessage | undefined {
    return this.frames.get(index);
  }

  /** Heatmap opacity is the streamed alpha, exactly; no rescaling. */
  opacityAt(index: number): number {
    const frame = this.frames.get(index);
    if (!frame) throw new Error(`no frame at index ${index}`);
    return frame.alpha;
  }

  /** msg_id provenance of the frame that would render at `index`. */
  sourceMessageId(index: number): number {
    const frame = this.frames.get(index);
    if (!frame) throw new Error(`no frame at index ${index}`);
    return frame.msg_id;
  }

  currentFrame(): FrameMessage | undefined {
    return this.frames.get(this.cursor);
  }

  seek(index: number): void {
    this.cursor = index;
  }
}

/** The 2-D context subset the renderer needs; Canvas 2D satisfies it. */
export interface Canvas2DLike {
  globalAlpha: number;
  strokeStyle: string;
  fillStyle: string;
  lineWidth: number;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
  clearRect(x: number, y: number, w: number, h: number): void;
}

export interface RenderOptions {
  width: number;
  height: number;
  /** meters-to-pixels scale */
  scale: number;
  color?: string;
}

/** Orthographic x/z projection of limb line segments plus effector dots. */
export function renderSkeleton(
  ctx: Canvas2DLike,
  frame: FrameMessage,
  opts: RenderOptions,
): void {
  const { width, height, scale } = opts;
  ctx.clearRect(0, 0, width, height);
  ctx.globalAlpha = frame.alpha;
  ctx.strokeStyle = opts.color ?? "#00e0c0";
  ctx.fillStyle = opts.color ?? "#00e0c0";
  ctx.lineWidth = 2;

  const project = (p: [number, number, number]): [number, number] => [
    width / 2 + p[0] * scale,
    height / 2 - p[2] * scale,
  ];

  const limbs = new Set(
    Object.keys(frame.joints).map((k) => k.split(".")[0]!),
  );
  for (const limb of limbs) {
    const joint = frame.joints[`${limb}.joint`];
    const effector = frame.joints[`${limb}.effector`];
    if (!joint || !effector) continue;
    const [jx, jy] = project(joint);
    const [ex, ey] = project(effector);
    ctx.beginPath();
    ctx.moveTo(jx, jy);
    ctx.lineTo(ex, ey);
    ctx.stroke();
    ctx.beginPath();
    ctx.arc(ex, ey, 4, 0, 2 * Math.PI);
    ctx.fill();
  }
}
