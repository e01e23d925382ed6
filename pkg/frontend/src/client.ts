/**
 * Session client: request/response correlation over a Transport plus the
 * push stream of frame/segment messages.
 */

import type {
  ActionSegment,
  ErrorResponse,
  OkResponse,
  Patch,
  ResampleReport,
  ServerMessage,
  StreamMessage,
} from "./types.js";
import { MessageDecoder, encodeMessage } from "./wire.js";
import type { Transport } from "./transport.js";

export class ServerError extends Error {
  constructor(
    public code: string,
    message: string,
    public path?: string,
  ) {
    super(message);
    this.name = "ServerError";
  }
}

export class TransportClosed extends Error {
  constructor() {
    super("transport closed");
    this.name = "TransportClosed";
  }
}

interface Pending {
  resolve: (value: OkResponse) => void;
  reject: (err: Error) => void;
}

export interface SegmentsPayload {
  segments: ActionSegment[];
  alphas: number[];
}

export class SessionClient {
  private nextReqId = 1;
  private pending = new Map<number, Pending>();
  private streamCbs: Array<(msg: StreamMessage) => void> = [];
  private decoder = new MessageDecoder();
  private closed = false;

  constructor(private transport: Transport) {
    transport.onData((chunk) => {
      for (const doc of this.decoder.push(chunk)) {
        this.handleMessage(doc as ServerMessage);
      }
    });
    transport.onClose(() => {
      this.closed = true;
      for (const p of this.pending.values()) p.reject(new TransportClosed());
      this.pending.clear();
    });
  }

  isClosed(): boolean {
    return this.closed;
  }

  onStream(cb: (msg: StreamMessage) => void): void {
    this.streamCbs.push(cb);
  }

  private handleMessage(msg: ServerMessage): void {
    if (msg.type === "ok" || (msg.type === "error" && msg.req_id !== undefined)) {
      const reqId = (msg as OkResponse | ErrorResponse).req_id as number;
      const entry = this.pending.get(reqId);
      if (!entry) return;
      this.pending.delete(reqId);
      if (msg.type === "ok") {
        entry.resolve(msg as OkResponse);
      } else {
        const err = msg as ErrorResponse;
        entry.reject(new ServerError(err.code, err.message, err.path));
      }
      return;
    }
    for (const cb of this.streamCbs) cb(msg as StreamMessage);
  }

  request(doc: Record<string, unknown>): Promise<OkResponse> {
    if (this.closed) return Promise.reject(new TransportClosed());
    const reqId = this.nextReqId++;
    const promise = new Promise<OkResponse>((resolve, reject) => {
      this.pending.set(reqId, { resolve, reject });
    });
    this.transport.send(encodeMessage({ ...doc, req_id: reqId }));
    return promise;
  }

  async createSession(
    config: Record<string, unknown> = {},
  ): Promise<{ session: string; config: Record<string, unknown> }> {
    const resp = await this.request({ type: "create_session", config });
    return {
      session: resp.session as string,
      config: resp.config as Record<string, unknown>,
    };
  }

  /** PCM is little-endian 16-bit mono. */
  async pushAudio(
    session: string,
    pcm: Int16Array,
  ): Promise<{ frames: number; gloss: string | null }> {
    const bytes = new Uint8Array(pcm.buffer, pcm.byteOffset, pcm.byteLength);
    const resp = await this.request({
      type: "push_audio",
      session,
      pcm_base64: Buffer.from(bytes).toString("base64"),
    });
    return resp.progress as { frames: number; gloss: string | null };
  }

  async endAudio(session: string): Promise<SegmentsPayload> {
    const resp = await this.request({ type: "end_audio", session });
    return {
      segments: resp.segments as ActionSegment[],
      alphas: resp.alphas as number[],
    };
  }

  async submitEdit(
    session: string,
    patch: Patch,
  ): Promise<SegmentsPayload & { report: ResampleReport | null }> {
    const resp = await this.request({ type: "submit_edit", session, patch });
    return {
      report: resp.report as ResampleReport | null,
      segments: resp.segments as ActionSegment[],
      alphas: resp.alphas as number[],
    };
  }

  async submitRating(session: string, rating: number): Promise<void> {
    await this.request({ type: "submit_rating", session, rating });
  }

  async getSegments(session: string): Promise<SegmentsPayload> {
    const resp = await this.request({ type: "get_segments", session });
    return {
      segments: resp.segments as ActionSegment[],
      alphas: resp.alphas as number[],
    };
  }

  async subscribeFrames(session: string, fromFrame = 0): Promise<void> {
    await this.request({ type: "subscribe_frames", session, from_frame: fromFrame });
  }

  async metrics(session: string): Promise<Record<string, unknown>> {
    const resp = await this.request({ type: "metrics", session });
    return resp.metrics as Record<string, unknown>;
  }

  async closeSession(session: string): Promise<void> {
    await this.request({ type: "close_session", session });
  }

  close(): void {
    this.transport.close();
  }
}
