/**
 * Length-prefixed JSON codec: 4-byte big-endian length + UTF-8 payload.
 */

const MAX_MESSAGE = 64 * 1024 * 1024;

export function encodeMessage(doc: unknown): Uint8Array {
  const payload = new TextEncoder().encode(JSON.stringify(doc));
  const out = new Uint8Array(4 + payload.length);
  new DataView(out.buffer).setUint32(0, payload.length, false);
  out.set(payload, 4);
  return out;
}

/** Incremental decoder; feed chunks of any size, get whole documents out. */
export class MessageDecoder {
  private buffer = new Uint8Array(0);

  push(chunk: Uint8Array): unknown[] {
    const joined = new Uint8Array(this.buffer.length + chunk.length);
    joined.set(this.buffer, 0);
    joined.set(chunk, this.buffer.length);
    this.buffer = joined;

    const out: unknown[] = [];
    for (;;) {
      if (this.buffer.length < 4) break;
      const view = new DataView(
        this.buffer.buffer,
        this.buffer.byteOffset,
        this.buffer.byteLength,
      );
      const length = view.getUint32(0, false);
      if (length > MAX_MESSAGE) {
        throw new Error(`message of ${length} bytes exceeds limit`);
      }
      if (this.buffer.length < 4 + length) break;
      const body = this.buffer.subarray(4, 4 + length);
      out.push(JSON.parse(new TextDecoder().decode(body)));
      this.buffer = this.buffer.slice(4 + length);
    }
    return out;
  }

  pendingBytes(): number {
    return this.buffer.length;
  }
}
