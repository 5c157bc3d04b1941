/** Tuning panel state: per-class threshold (theta) and run-length (tau)
 * sliders, with dirty tracking against the server-acknowledged config and a
 * reset-to-optimized action.
 *
 * Slider ranges are intentionally wider than the server optimizer's grid so
 * a user can explore, but stay inside the service's validity bounds.
 */

import { NvsdClient } from "./client.js";
import { PostProcConfig } from "./protocol.js";

export const THETA_MIN = 0.3;
export const THETA_MAX = 0.8;
export const TAU_MIN = 3;
export const TAU_MAX = 20;

export interface SliderState {
  className: string;
  theta: number;
  tau: number;
  /** differs from the last server-acknowledged value */
  dirty: boolean;
}

export function clampTheta(v: number): number {
  return Math.min(THETA_MAX, Math.max(THETA_MIN, v));
}

export function clampTau(v: number): number {
  return Math.round(Math.min(TAU_MAX, Math.max(TAU_MIN, v)));
}

export class TuningPanel {
  private sliders = new Map<string, SliderState>();
  private acked: PostProcConfig | null = null;
  private soundClasses: string[] = [];

  constructor(private readonly client: NvsdClient) {}

  /** Call with the `ready` payload; sliders start at the served config. */
  initialize(classes: string[], config: PostProcConfig): void {
    this.soundClasses = classes.slice(0, config.theta.length);
    this.applyAck(config);
  }

  /** Server ack: adopt the authoritative values and clear dirty flags. */
  applyAck(config: PostProcConfig): void {
    this.acked = config;
    this.sliders.clear();
    this.soundClasses.forEach((name, c) => {
      this.sliders.set(name, {
        className: name,
        theta: config.theta[c]!,
        tau: config.tau[c]!,
        dirty: false,
      });
    });
  }

  state(className: string): SliderState {
    const s = this.sliders.get(className);
    if (!s) throw new Error(`unknown class ${className}`);
    return s;
  }

  states(): SliderState[] {
    return [...this.sliders.values()];
  }

  setTheta(className: string, value: number): void {
    const s = this.state(className);
    s.theta = clampTheta(value);
    s.dirty = this.isDirty(className);
  }

  setTau(className: string, value: number): void {
    const s = this.state(className);
    s.tau = clampTau(value);
    s.dirty = this.isDirty(className);
  }

  private isDirty(className: string): boolean {
    if (!this.acked) return true;
    const c = this.soundClasses.indexOf(className);
    const s = this.sliders.get(className)!;
    return s.theta !== this.acked.theta[c] || s.tau !== this.acked.tau[c];
  }

  /** Push every dirty slider to the server (one message per class; each is
   * acknowledged individually and applyAck reconciles on the last one). */
  apply(): number {
    let sent = 0;
    for (const s of this.sliders.values()) {
      if (s.dirty) {
        this.client.updateClass(s.className, { theta: s.theta, tau: s.tau });
        sent += 1;
      }
    }
    return sent;
  }

  /** Back to the config the session started with (the optimized one when
   * the service was launched with an optimized postproc file). */
  resetToOptimized(): void {
    this.client.resetConfig();
  }
}
