/** Enrollment flow state machine.
 *
 *   idle -> recording -> submitting -> done | failed
 *
 * While recording, PCM chunks are buffered locally (they are NOT streamed to
 * the detection socket, so enrollment audio cannot trigger spurious events).
 * Submission posts the whole take to the enroll endpoint; failure messages
 * from the service (e.g. "try again louder") are surfaced verbatim so the
 * user gets actionable guidance.
 */

import { NvsdClient } from "./client.js";
import { EnrollResult, floatToPcm16 } from "./protocol.js";

export type EnrollPhase = "idle" | "recording" | "submitting" | "done" | "failed";

export class EnrollmentFlow {
  phase: EnrollPhase = "idle";
  className: string | null = null;
  shots = 5;
  result: EnrollResult | null = null;
  errorMessage: string | null = null;
  private chunks: Uint8Array[] = [];

  constructor(private readonly client: NvsdClient) {}

  start(className: string, shots: number): void {
    if (this.phase === "recording" || this.phase === "submitting") {
      throw new Error(`cannot start enrollment while ${this.phase}`);
    }
    if (!Number.isInteger(shots) || shots < 1 || shots > 5) {
      throw new Error("shots must be an integer in 1..5");
    }
    this.phase = "recording";
    this.className = className;
    this.shots = shots;
    this.result = null;
    this.errorMessage = null;
    this.chunks = [];
  }

  addAudio(samples: Float32Array): void {
    if (this.phase !== "recording") {
      throw new Error("not recording");
    }
    this.chunks.push(floatToPcm16(samples));
  }

  addPcmBytes(bytes: Uint8Array): void {
    if (this.phase !== "recording") {
      throw new Error("not recording");
    }
    this.chunks.push(bytes);
  }

  recordedSeconds(): number {
    const bytes = this.chunks.reduce((n, c) => n + c.length, 0);
    return bytes / 2 / 16000;
  }

  cancel(): void {
    this.phase = "idle";
    this.chunks = [];
  }

  async submit(): Promise<EnrollResult> {
    if (this.phase !== "recording") {
      throw new Error("nothing recorded");
    }
    if (!this.chunks.length) {
      this.phase = "failed";
      this.errorMessage = "no audio recorded";
      throw new Error(this.errorMessage);
    }
    const total = new Uint8Array(this.chunks.reduce((n, c) => n + c.length, 0));
    let off = 0;
    for (const c of this.chunks) {
      total.set(c, off);
      off += c.length;
    }
    this.phase = "submitting";
    try {
      const result = await this.client.enroll(this.className!, this.shots, total);
      this.phase = "done";
      this.result = result;
      return result;
    } catch (err) {
      this.phase = "failed";
      this.errorMessage = err instanceof Error ? err.message : String(err);
      throw err;
    }
  }

  /** One-line summary for the UI. */
  summary(): string {
    switch (this.phase) {
      case "idle":
        return "Pick a sound and press record.";
      case "recording":
        return `Recording ${this.className} — ${this.recordedSeconds().toFixed(1)}s captured. ` +
          `Repeat the sound ${this.shots} times, then submit.`;
      case "submitting":
        return "Fitting your model…";
      case "done": {
        const r = this.result!;
        return `Enrolled ${r.class} from ${r.shots} of ${r.segments_found} takes: ` +
          `F1 ${r.f1_before.toFixed(2)} → ${r.f1_after.toFixed(2)}.`;
      }
      case "failed":
        return `Enrollment failed: ${this.errorMessage}`;
    }
  }
}
