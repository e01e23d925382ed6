/**
 * Static SVG rendering of skeleton frames for the lightweight web preview;
 * the same orthographic projection as the canvas renderer, with heatmap
 * opacity taken verbatim from the streamed alpha.
 */

import type { FrameMessage } from "./types.js";

export interface SvgOptions {
  width: number;
  height: number;
  scale: number;
  color?: string;
}

export function skeletonToSvg(frame: FrameMessage, opts: SvgOptions): string {
  const { width, height, scale } = opts;
  const color = opts.color ?? "#00e0c0";
  const project = (p: [number, number, number]): [number, number] => [
    width / 2 + p[0] * scale,
    height / 2 - p[2] * scale,
  ];
  const limbs = new Set(Object.keys(frame.joints).map((k) => k.split(".")[0]!));
  const parts: string[] = [];
  for (const limb of limbs) {
    const joint = frame.joints[`${limb}.joint`];
    const effector = frame.joints[`${limb}.effector`];
    if (!joint || !effector) continue;
    const [jx, jy] = project(joint);
    const [ex, ey] = project(effector);
    parts.push(
      `<line x1="${jx.toFixed(1)}" y1="${jy.toFixed(1)}" x2="${ex.toFixed(1)}" ` +
        `y2="${ey.toFixed(1)}" stroke="${color}" stroke-width="2"/>`,
      `<circle cx="${ex.toFixed(1)}" cy="${ey.toFixed(1)}" r="4" fill="${color}"/>`,
    );
  }
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
    `opacity="${frame.alpha}" data-frame="${frame.frame_index}" ` +
    `data-msg-id="${frame.msg_id}">${parts.join("")}</svg>`
  );
}
