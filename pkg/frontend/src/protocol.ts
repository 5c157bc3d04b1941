/** Wire types for the nvsd streaming service.
 *
 * One WebSocket per session: the first text message declares the PCM format,
 * the server answers `ready`, binary messages carry s16le 16 kHz mono audio,
 * and text messages carry JSON control/results. Enrollment is a separate
 * HTTP POST tied to the session id.
 */

export interface AudioFormat {
  encoding: "pcm_s16le";
  rate: 16000;
  channels: 1;
}

export interface PostProcConfig {
  theta: number[];
  tau: number[];
  theta_bg: number;
  refractory: number;
  active_mask: boolean[];
  require_silence: boolean;
  silence_frames: number;
}

export interface ReadyMessage {
  type: "ready";
  session_id: string;
  classes: string[];
  config: PostProcConfig;
}

export interface EventMessage {
  type: "event";
  class: string;
  t_ms: number;
}

export interface ProbsMessage {
  type: "probs";
  t_ms: number;
  top_k: { class: string; p: number }[];
  p_background: number;
  p_speech: number;
}

export interface AckMessage {
  type: "ack";
  config: PostProcConfig;
}

export interface ErrorMessage {
  type: "error";
  message: string;
}

export type ServerMessage =
  | ReadyMessage
  | EventMessage
  | ProbsMessage
  | AckMessage
  | ErrorMessage;

export interface EnrollResult {
  class: string;
  shots: number;
  segments_found: number;
  f1_before: number;
  f1_after: number;
}

const SERVER_TYPES = new Set(["ready", "event", "probs", "ack", "error"]);

/** Parse and structurally validate one server text frame. */
export function parseServerMessage(raw: string): ServerMessage {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    throw new Error(`not JSON: ${raw.slice(0, 80)}`);
  }
  if (typeof data !== "object" || data === null) {
    throw new Error("server message is not an object");
  }
  const msg = data as Record<string, unknown>;
  if (typeof msg.type !== "string" || !SERVER_TYPES.has(msg.type)) {
    throw new Error(`unknown server message type ${String(msg.type)}`);
  }
  switch (msg.type) {
    case "ready":
      if (typeof msg.session_id !== "string" || !Array.isArray(msg.classes)) {
        throw new Error("malformed ready message");
      }
      break;
    case "event":
      if (typeof msg.class !== "string" || typeof msg.t_ms !== "number") {
        throw new Error("malformed event message");
      }
      break;
    case "probs":
      if (typeof msg.t_ms !== "number" || !Array.isArray(msg.top_k)) {
        throw new Error("malformed probs message");
      }
      break;
    case "ack":
      if (typeof msg.config !== "object" || msg.config === null) {
        throw new Error("malformed ack message");
      }
      break;
    case "error":
      if (typeof msg.message !== "string") {
        throw new Error("malformed error message");
      }
      break;
  }
  return msg as unknown as ServerMessage;
}

export function startMessage(): string {
  const format: AudioFormat = { encoding: "pcm_s16le", rate: 16000, channels: 1 };
  return JSON.stringify({ type: "start", format });
}

export function configMessage(
  className: string,
  update: { theta?: number; tau?: number },
): string {
  return JSON.stringify({ type: "config", class: className, ...update });
}

export function activeMessage(classNames: string[]): string {
  return JSON.stringify({ type: "active", classes: classNames });
}

export function resetConfigMessage(): string {
  return JSON.stringify({ type: "reset_config" });
}

/** Convert [-1, 1] float samples to the s16le bytes the service expects. */
export function floatToPcm16(samples: Float32Array): Uint8Array {
  const out = new Int16Array(samples.length);
  for (let i = 0; i < samples.length; i++) {
    const v = Math.max(-1, Math.min(1, samples[i]!));
    out[i] = Math.round(v * 32767);
  }
  return new Uint8Array(out.buffer);
}
