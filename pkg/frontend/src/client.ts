/** Session client: owns the WebSocket, exposes typed callbacks, and issues
 * the enrollment HTTP request. The WebSocket constructor and fetch are
 * injectable so the client runs unchanged in the browser, in Node e2e tests
 * (via the `ws` package), and against fakes in unit tests.
 */

import {
  AckMessage,
  EnrollResult,
  EventMessage,
  PostProcConfig,
  ProbsMessage,
  ReadyMessage,
  ServerMessage,
  activeMessage,
  configMessage,
  floatToPcm16,
  parseServerMessage,
  resetConfigMessage,
  startMessage,
} from "./protocol.js";

/** The subset of the WebSocket API the client needs. */
export interface SocketLike {
  send(data: string | Uint8Array): void;
  close(): void;
  addEventListener(type: "open" | "message" | "close" | "error",
                   handler: (ev: any) => void): void;
}

export type SocketFactory = (url: string) => SocketLike;
export type FetchLike = (url: string, init?: any) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<any>;
}>;

export interface ClientCallbacks {
  onReady?: (msg: ReadyMessage) => void;
  onEvent?: (msg: EventMessage) => void;
  onProbs?: (msg: ProbsMessage) => void;
  onAck?: (msg: AckMessage) => void;
  onError?: (message: string) => void;
  onClose?: () => void;
}

export class NvsdClient {
  private socket: SocketLike | null = null;
  private callbacks: ClientCallbacks = {};
  sessionId: string | null = null;
  classes: string[] = [];
  /** Config as of the last ready/ack; the server's source of truth. */
  config: PostProcConfig | null = null;
  /** The config delivered with `ready` — what reset_config restores. */
  baseConfig: PostProcConfig | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly makeSocket: SocketFactory,
    private readonly fetchImpl: FetchLike,
  ) {}

  /** Open the session; resolves once the server has acknowledged the format. */
  connect(callbacks: ClientCallbacks = {}): Promise<ReadyMessage> {
    this.callbacks = callbacks;
    const wsUrl = this.baseUrl.replace(/^http/, "ws") + "/session";
    const socket = this.makeSocket(wsUrl);
    this.socket = socket;
    return new Promise((resolve, reject) => {
      let settled = false;
      socket.addEventListener("open", () => socket.send(startMessage()));
      socket.addEventListener("error", (ev) => {
        if (!settled) {
          settled = true;
          reject(new Error(`websocket error: ${ev?.message ?? "unknown"}`));
        }
      });
      socket.addEventListener("close", () => {
        this.callbacks.onClose?.();
        if (!settled) {
          settled = true;
          reject(new Error("socket closed before ready"));
        }
      });
      socket.addEventListener("message", (ev) => {
        const data = typeof ev.data === "string" ? ev.data : String(ev.data);
        let msg: ServerMessage;
        try {
          msg = parseServerMessage(data);
        } catch (err) {
          this.callbacks.onError?.(String(err));
          return;
        }
        if (!settled) {
          if (msg.type === "ready") {
            settled = true;
            this.sessionId = msg.session_id;
            this.classes = msg.classes;
            this.config = msg.config;
            this.baseConfig = msg.config;
            this.callbacks.onReady?.(msg);
            resolve(msg);
          } else if (msg.type === "error") {
            settled = true;
            reject(new Error(msg.message));
          }
          return;
        }
        this.dispatch(msg);
      });
    });
  }

  private dispatch(msg: ServerMessage): void {
    switch (msg.type) {
      case "event":
        this.callbacks.onEvent?.(msg);
        break;
      case "probs":
        this.callbacks.onProbs?.(msg);
        break;
      case "ack":
        this.config = msg.config;
        this.callbacks.onAck?.(msg);
        break;
      case "error":
        this.callbacks.onError?.(msg.message);
        break;
      case "ready":
        break; // only valid as the first message; ignore duplicates
    }
  }

  private mustSocket(): SocketLike {
    if (!this.socket) throw new Error("not connected");
    return this.socket;
  }

  sendAudio(samples: Float32Array): void {
    this.mustSocket().send(floatToPcm16(samples));
  }

  sendPcmBytes(bytes: Uint8Array): void {
    this.mustSocket().send(bytes);
  }

  updateClass(className: string, update: { theta?: number; tau?: number }): void {
    this.mustSocket().send(configMessage(className, update));
  }

  setActiveClasses(classNames: string[]): void {
    this.mustSocket().send(activeMessage(classNames));
  }

  resetConfig(): void {
    this.mustSocket().send(resetConfigMessage());
  }

  close(): void {
    this.socket?.close();
    this.socket = null;
  }

  /** Enrollment: POST recorded PCM; the service fine-tunes the head and
   * hot-swaps this session's weights on success. */
  async enroll(
    className: string,
    shots: number,
    pcm: Uint8Array,
  ): Promise<EnrollResult> {
    if (!this.sessionId) throw new Error("not connected");
    const url = `${this.baseUrl}/sessions/${this.sessionId}/enroll` +
      `?class=${encodeURIComponent(className)}&shots=${shots}`;
    const res = await this.fetchImpl(url, {
      method: "POST",
      headers: { "content-type": "application/octet-stream" },
      body: pcm,
    });
    const body = await res.json();
    if (!res.ok) {
      throw new Error(body?.detail ?? `enrollment failed (${res.status})`);
    }
    return body as EnrollResult;
  }

  async health(): Promise<{ version: string; classes: string[] }> {
    const res = await this.fetchImpl(`${this.baseUrl}/health`);
    if (!res.ok) throw new Error(`health check failed (${res.status})`);
    return res.json();
  }
}
