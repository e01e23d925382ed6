/**
 * Edit flow: optimistic field updates reconciled against the server echo,
 * path-specific revert on validation errors, and a retry queue when the
 * connection drops mid-submit.
 */

import { ServerError, SessionClient, TransportClosed } from "./client.js";
import type { TimelineModel } from "./timeline.js";
import type { ActionSegment, ResampleReport } from "./types.js";
import { checkFieldEdit, type FieldError } from "./validation.js";

export interface EditResult {
  applied: boolean;
  report: ResampleReport | null;
  error: FieldError | null;
  queued: boolean;
}

interface QueuedEdit {
  segment: number;
  path: string;
  value: unknown;
}

function getPath(seg: ActionSegment, path: string): unknown {
  let node: unknown = seg;
  for (const piece of path.split(".")) {
    const m = /^([A-Za-z_][A-Za-z0-9_]*)(?:\[(\d+)\])?$/.exec(piece);
    if (!m || node === null || typeof node !== "object") return undefined;
    node = (node as Record<string, unknown>)[m[1]!];
    if (m[2] !== undefined) {
      if (!Array.isArray(node)) return undefined;
      node = node[Number(m[2])];
    }
  }
  return node;
}

function setPath(seg: ActionSegment, path: string, value: unknown): ActionSegment {
  const clone = structuredClone(seg);
  let node: unknown = clone;
  const pieces = path.split(".");
  for (let i = 0; i < pieces.length; i++) {
    const m = /^([A-Za-z_][A-Za-z0-9_]*)(?:\[(\d+)\])?$/.exec(pieces[i]!);
    if (!m) throw new Error(`malformed path ${path}`);
    const last = i === pieces.length - 1;
    const obj = node as Record<string, unknown>;
    if (m[2] !== undefined) {
      const arr = obj[m[1]!] as unknown[];
      if (last) {
        arr[Number(m[2])] = value;
      } else {
        node = arr[Number(m[2])];
      }
    } else if (last) {
      obj[m[1]!] = value;
    } else {
      node = obj[m[1]!];
    }
  }
  return clone;
}

export class EditController {
  /** Local working copies, optimistic until the server echo lands. */
  segments: ActionSegment[] = [];
  alphas: number[] = [];
  lastError: FieldError | null = null;
  retryQueue: QueuedEdit[] = [];
  private seqNo = 0;

  constructor(
    private client: SessionClient,
    private sessionId: string,
    private timeline: TimelineModel,
  ) {}

  adopt(segments: ActionSegment[], alphas: number[]): void {
    this.segments = segments;
    this.alphas = alphas;
    this.timeline.setSegments(segments, alphas);
  }

  valueAt(segment: number, path: string): unknown {
    const seg = this.segments[segment];
    return seg === undefined ? undefined : getPath(seg, path);
  }

  async submitField(segment: number, path: string, value: unknown): Promise<EditResult> {
    this.lastError = null;
    const local = checkFieldEdit(path, value);
    if (local) {
      this.lastError = local;
      return { applied: false, report: null, error: local, queued: false };
    }
    const before = this.segments[segment];
    if (before === undefined) {
      const error = { path, message: `segment ${segment} out of range` };
      this.lastError = error;
      return { applied: false, report: null, error, queued: false };
    }
    // Optimistic: show the new value immediately.
    this.segments = this.segments.slice();
    this.segments[segment] = setPath(before, path, value);
    this.timeline.setSegments(this.segments, this.alphas);
    this.seqNo += 1;

    try {
      const resp = await this.client.submitEdit(this.sessionId, {
        target_segment: segment,
        set: { [path]: value },
      });
      this.adopt(resp.segments, resp.alphas);
      return { applied: true, report: resp.report, error: null, queued: false };
    } catch (err) {
      // Revert the optimistic value.
      this.segments = this.segments.slice();
      this.segments[segment] = before;
      this.timeline.setSegments(this.segments, this.alphas);
      if (err instanceof ServerError) {
        const error = { path: err.path ?? path, message: err.message };
        this.lastError = error;
        return { applied: false, report: null, error, queued: false };
      }
      if (err instanceof TransportClosed) {
        this.retryQueue.push({ segment, path, value });
        return { applied: false, report: null, error: null, queued: true };
      }
      throw err;
    }
  }

  /** Re-submit queued edits after the connection returns. */
  async flushRetries(client?: SessionClient): Promise<number> {
    if (client) this.client = client;
    const queue = this.retryQueue;
    this.retryQueue = [];
    let applied = 0;
    for (const edit of queue) {
      const result = await this.submitField(edit.segment, edit.path, edit.value);
      if (result.applied) applied += 1;
    }
    return applied;
  }
}
