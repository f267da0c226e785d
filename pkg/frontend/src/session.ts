/** One WebSocket to the control server: command issue, 200 ms snapshot poll,
 * reconnect with backoff. The server answers each request in order on the
 * socket, so replies are matched to requests FIFO. */

import { parseSnapshot, type ServerReply, type SnapshotView } from "./types.js";

export interface WsLike {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  readyState: number;
  send(data: string): void;
  close(): void;
}

export type WsCtor = new (url: string) => WsLike;

export interface SessionEvents {
  onSnapshot(snap: SnapshotView): void;
  /** Connection state changes: true once the socket opens, false on loss. */
  onStatus(live: boolean): void;
  /** Server rejected an issued command (or it could not be sent). */
  onRejection(message: string): void;
}

const WS_OPEN = 1;
const BACKOFF_START_MS = 500;
const BACKOFF_MAX_MS = 4000;

interface Pending {
  verb: string;
  resolve: (reply: ServerReply) => void;
}

export class LiveSession {
  private socket: WsLike | null = null;
  private pending: Pending[] = [];
  private pollTimer: ReturnType<typeof setInterval> | null = null;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private backoffMs = BACKOFF_START_MS;
  private closed = false;

  constructor(
    private readonly url: string,
    private readonly makeSocket: WsCtor,
    private readonly events: SessionEvents,
    private readonly pollMs = 200,
  ) {}

  connect(): void {
    if (this.closed) return;
    const socket = new this.makeSocket(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.backoffMs = BACKOFF_START_MS;
      this.events.onStatus(true);
      this.startPolling();
    };
    socket.onmessage = (ev) => this.onMessage(String(ev.data));
    socket.onerror = () => {
      /* the close handler owns recovery */
    };
    socket.onclose = () => {
      this.stopPolling();
      this.flushPending({ error: "Disconnected" });
      this.events.onStatus(false);
      this.scheduleReconnect();
    };
  }

  /** Send one command; resolves with the server's reply (or a local error). */
  issue(verb: string, node?: number): Promise<ServerReply> {
    const socket = this.socket;
    if (socket === null || socket.readyState !== WS_OPEN) {
      const reply = { error: "Disconnected", reason: "control socket is down" };
      this.events.onRejection(`${verb}: ${reply.reason}`);
      return Promise.resolve(reply);
    }
    return new Promise((resolve) => {
      this.pending.push({ verb, resolve });
      socket.send(JSON.stringify(node === undefined ? { verb } : { verb, node }));
    }).then((reply) => {
      const r = reply as ServerReply;
      if (r.error && verb !== "SNAPSHOT") {
        this.events.onRejection(`${verb} rejected: ${r.reason ?? r.error}`);
      }
      return r;
    });
  }

  close(): void {
    this.closed = true;
    this.stopPolling();
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.socket?.close();
  }

  private onMessage(raw: string): void {
    let reply: ServerReply;
    try {
      reply = JSON.parse(raw) as ServerReply;
    } catch {
      return;
    }
    this.pending.shift()?.resolve(reply);
    if (reply.snapshot !== undefined) {
      const snap = parseSnapshot(reply.snapshot);
      if (snap !== null) this.events.onSnapshot(snap);
    }
  }

  private startPolling(): void {
    this.stopPolling();
    const poll = () => {
      // don't stack snapshot requests on a stalled server
      if (!this.pending.some((p) => p.verb === "SNAPSHOT")) {
        void this.issue("SNAPSHOT");
      }
    };
    poll();
    this.pollTimer = setInterval(poll, this.pollMs);
  }

  private stopPolling(): void {
    if (this.pollTimer !== null) {
      clearInterval(this.pollTimer);
      this.pollTimer = null;
    }
  }

  private flushPending(reply: ServerReply): void {
    const waiting = this.pending;
    this.pending = [];
    for (const p of waiting) p.resolve(reply);
  }

  private scheduleReconnect(): void {
    if (this.closed || this.reconnectTimer !== null) return;
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      this.connect();
    }, this.backoffMs);
    this.backoffMs = Math.min(this.backoffMs * 2, BACKOFF_MAX_MS);
  }
}
