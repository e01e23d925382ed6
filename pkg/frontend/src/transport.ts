/**
 * Byte transports under the wire codec. TcpTransport is the production
 * path (Node); LoopbackTransport pairs two endpoints in memory for tests.
 */

export interface Transport {
  send(data: Uint8Array): void;
  onData(cb: (chunk: Uint8Array) => void): void;
  onClose(cb: () => void): void;
  close(): void;
}

export class TcpTransport implements Transport {
  private constructor(private socket: import("node:net").Socket) {}

  static async connect(host: string, port: number): Promise<TcpTransport> {
    const net = await import("node:net");
    const socket = net.connect({ host, port });
    await new Promise<void>((resolve, reject) => {
      socket.once("connect", () => resolve());
      socket.once("error", reject);
    });
    socket.setNoDelay(true);
    return new TcpTransport(socket);
  }

  send(data: Uint8Array): void {
    this.socket.write(data);
  }

  onData(cb: (chunk: Uint8Array) => void): void {
    this.socket.on("data", (buf: Buffer) => cb(new Uint8Array(buf)));
  }

  onClose(cb: () => void): void {
    this.socket.on("close", () => cb());
    this.socket.on("error", () => cb());
  }

  close(): void {
    this.socket.destroy();
  }
}

/** In-memory pair; `peer` receives what this side sends and vice versa. */
export class LoopbackTransport implements Transport {
  peer!: LoopbackTransport;
  private dataCbs: Array<(chunk: Uint8Array) => void> = [];
  private closeCbs: Array<() => void> = [];
  private closed = false;

  static pair(): [LoopbackTransport, LoopbackTransport] {
    const a = new LoopbackTransport();
    const b = new LoopbackTransport();
    a.peer = b;
    b.peer = a;
    return [a, b];
  }

  send(data: Uint8Array): void {
    if (this.closed || this.peer.closed) return;
    for (const cb of this.peer.dataCbs) cb(data.slice());
  }

  onData(cb: (chunk: Uint8Array) => void): void {
    this.dataCbs.push(cb);
  }

  onClose(cb: () => void): void {
    this.closeCbs.push(cb);
  }

  close(): void {
    if (this.closed) return;
    this.closed = true;
    for (const cb of this.closeCbs) cb();
    for (const cb of this.peer.closeCbs) cb();
  }
}
