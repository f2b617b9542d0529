/**
 * Thin session client: owns the socket, the outbound sequence counter,
 * and the short grace buffer for input typed while disconnected.
 *
 * The only configuration is the server address. Messages produced while
 * the socket is down are held for up to one second and flushed on
 * reconnect; anything older is dropped and reported through `onNotice`.
 */

import { type ClientKind, type SessionMessage, decodeMessage, encodeMessage } from "./protocol.js";

export type ConnectionStatus = "connecting" | "open" | "closed";

/** The subset of the WebSocket API the client needs; injectable for tests. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

const BUFFER_GRACE_MS = 1000;

interface PendingSend {
  kind: ClientKind;
  payload: Record<string, unknown>;
  at: number;
}

export interface SessionClientOptions {
  onMessage?: (msg: SessionMessage) => void;
  onStatus?: (status: ConnectionStatus) => void;
  onNotice?: (text: string) => void;
  socketFactory?: SocketFactory;
  now?: () => number;
}

export class SessionClient {
  readonly url: string;
  status: ConnectionStatus = "connecting";

  private sock: SocketLike | null = null;
  private seq = 0;
  private pending: PendingSend[] = [];
  private readonly opts: SessionClientOptions;
  private readonly now: () => number;

  constructor(address: string, opts: SessionClientOptions = {}) {
    this.url = address.includes("://") ? address : `ws://${address}`;
    this.opts = opts;
    this.now = opts.now ?? (() => Date.now());
  }

  connect(): void {
    const factory =
      this.opts.socketFactory ??
      ((url: string) => new WebSocket(url) as unknown as SocketLike);
    this.setStatus("connecting");
    const sock = factory(this.url);
    this.sock = sock;
    sock.onopen = () => {
      this.setStatus("open");
      this.flushPending();
    };
    sock.onmessage = (ev) => {
      let msg: SessionMessage;
      try {
        msg = decodeMessage(String(ev.data));
      } catch (exc) {
        this.opts.onNotice?.(`bad frame from server: ${exc}`);
        return;
      }
      this.opts.onMessage?.(msg);
    };
    sock.onclose = () => {
      this.sock = null;
      this.setStatus("closed");
    };
    sock.onerror = () => {
      // onclose follows; nothing to do here
    };
  }

  /** Queue or transmit one control message with the next sequence number. */
  send(kind: ClientKind, payload: Record<string, unknown> = {}): void {
    if (this.status === "open" && this.sock) {
      this.seq += 1;
      this.sock.send(encodeMessage(kind, payload, this.seq));
      return;
    }
    this.pending.push({ kind, payload, at: this.now() });
    this.prunePending();
  }

  close(): void {
    this.sock?.close();
    this.sock = null;
    this.setStatus("closed");
  }

  /** Drop buffered input older than the grace window, with a notice. */
  prunePending(): void {
    const cutoff = this.now() - BUFFER_GRACE_MS;
    const kept = this.pending.filter((p) => p.at >= cutoff);
    const dropped = this.pending.length - kept.length;
    this.pending = kept;
    if (dropped > 0) {
      this.opts.onNotice?.(`dropped ${dropped} input(s): not connected`);
    }
  }

  get pendingCount(): number {
    return this.pending.length;
  }

  private flushPending(): void {
    this.prunePending();
    const queued = this.pending;
    this.pending = [];
    for (const p of queued) {
      this.send(p.kind, p.payload);
    }
  }

  private setStatus(status: ConnectionStatus): void {
    this.status = status;
    this.opts.onStatus?.(status);
  }
}
