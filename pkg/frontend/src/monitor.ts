/** Live monitor state: the probability bars and the event ticker.
 *
 * Pure state container so it can be unit-tested without a DOM; `renderInto`
 * binds it to elements in the browser.
 */

import { EventMessage, ProbsMessage } from "./protocol.js";

export interface TickerEntry {
  className: string;
  tMs: number;
  receivedAt: number;
}

export interface BarState {
  className: string;
  p: number;
}

export const TICKER_LIMIT = 50;

export class LiveMonitor {
  /** Newest first, capped at TICKER_LIMIT. */
  readonly ticker: TickerEntry[] = [];
  bars: BarState[] = [];
  pBackground = 0;
  pSpeech = 0;
  lastTimestampMs = 0;
  private listeners: (() => void)[] = [];

  constructor(private readonly now: () => number = () => Date.now()) {}

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  addProbs(msg: ProbsMessage): void {
    // display summaries may be dropped upstream; never let a late frame
    // roll the clock backwards
    if (msg.t_ms < this.lastTimestampMs) return;
    this.lastTimestampMs = msg.t_ms;
    this.bars = msg.top_k.map((e) => ({ className: e.class, p: e.p }));
    this.pBackground = msg.p_background;
    this.pSpeech = msg.p_speech;
    this.notify();
  }

  addEvent(msg: EventMessage): void {
    this.ticker.unshift({
      className: msg.class,
      tMs: msg.t_ms,
      receivedAt: this.now(),
    });
    if (this.ticker.length > TICKER_LIMIT) this.ticker.length = TICKER_LIMIT;
    this.notify();
  }

  /** Oldest-first event classes, the order they happened in the audio. */
  eventSequence(): { className: string; tMs: number }[] {
    return [...this.ticker]
      .reverse()
      .map((e) => ({ className: e.className, tMs: e.tMs }));
  }

  clear(): void {
    this.ticker.length = 0;
    this.bars = [];
    this.pBackground = 0;
    this.pSpeech = 0;
    this.lastTimestampMs = 0;
    this.notify();
  }

  /** Browser binding: fills `bars` and `ticker` containers on every change. */
  renderInto(barsEl: HTMLElement, tickerEl: HTMLElement): void {
    const render = () => {
      barsEl.replaceChildren(
        ...this.bars.map((b) => {
          const row = document.createElement("div");
          row.className = "bar-row";
          const label = document.createElement("span");
          label.textContent = b.className;
          const bar = document.createElement("div");
          bar.className = "bar";
          bar.style.width = `${Math.round(b.p * 100)}%`;
          bar.title = b.p.toFixed(3);
          row.append(label, bar);
          return row;
        }),
      );
      tickerEl.replaceChildren(
        ...this.ticker.map((e) => {
          const li = document.createElement("li");
          li.textContent = `${(e.tMs / 1000).toFixed(2)}s  ${e.className}`;
          return li;
        }),
      );
    };
    this.onChange(render);
    render();
  }
}
