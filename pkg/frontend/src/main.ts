/** Browser entry point: wires the live monitor, tuning panel, and enrollment
 * flow to a running nvsd service. Expects the element ids used in
 * index.html. Microphone audio is resampled to 16 kHz mono and streamed as
 * s16le PCM over the session socket.
 */

import { NvsdClient } from "./client.js";
import { EnrollmentFlow } from "./enroll.js";
import { LiveMonitor } from "./monitor.js";
import { TAU_MAX, TAU_MIN, THETA_MAX, THETA_MIN, TuningPanel } from "./tuning.js";

const SERVICE_URL =
  new URLSearchParams(location.search).get("service") ?? "http://127.0.0.1:8040";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function micStream(onChunk: (samples: Float32Array) => void): Promise<void> {
  const media = await navigator.mediaDevices.getUserMedia({ audio: true });
  const ctx = new AudioContext({ sampleRate: 16000 });
  const source = ctx.createMediaStreamSource(media);
  const proc = ctx.createScriptProcessor(1600, 1, 1); // 100 ms chunks
  proc.onaudioprocess = (ev) => onChunk(ev.inputBuffer.getChannelData(0).slice());
  source.connect(proc);
  proc.connect(ctx.destination);
}

async function boot(): Promise<void> {
  const client = new NvsdClient(
    SERVICE_URL,
    (url) => new WebSocket(url),
    (url, init) => fetch(url, init),
  );
  const monitor = new LiveMonitor();
  const panel = new TuningPanel(client);
  const enrollment = new EnrollmentFlow(client);
  let enrolling = false;

  monitor.renderInto(el("bars"), el("ticker"));

  const ready = await client.connect({
    onEvent: (m) => monitor.addEvent(m),
    onProbs: (m) => monitor.addProbs(m),
    onAck: (m) => {
      panel.applyAck(m.config);
      renderPanel();
    },
    onError: (m) => (el("status").textContent = `error: ${m}`),
    onClose: () => (el("status").textContent = "disconnected"),
  });
  el("status").textContent = `session ${ready.session_id}`;
  panel.initialize(ready.classes, ready.config);

  const panelEl = el("panel");
  function renderPanel(): void {
    panelEl.replaceChildren(
      ...panel.states().map((s) => {
        const row = document.createElement("div");
        row.className = "slider-row" + (s.dirty ? " dirty" : "");
        const name = document.createElement("span");
        name.textContent = s.className;
        const theta = document.createElement("input");
        Object.assign(theta, {
          type: "range", min: String(THETA_MIN), max: String(THETA_MAX),
          step: "0.01", value: String(s.theta),
        });
        theta.oninput = () => {
          panel.setTheta(s.className, Number(theta.value));
          row.classList.toggle("dirty", panel.state(s.className).dirty);
        };
        const tau = document.createElement("input");
        Object.assign(tau, {
          type: "range", min: String(TAU_MIN), max: String(TAU_MAX),
          step: "1", value: String(s.tau),
        });
        tau.oninput = () => {
          panel.setTau(s.className, Number(tau.value));
          row.classList.toggle("dirty", panel.state(s.className).dirty);
        };
        row.append(name, theta, tau);
        return row;
      }),
    );
  }
  renderPanel();
  el("apply").onclick = () => panel.apply();
  el("reset").onclick = () => panel.resetToOptimized();

  const enrollStatus = el("enroll-status");
  el("enroll-start").onclick = () => {
    const cls = (el<HTMLSelectElement>("enroll-class")).value;
    const shots = Number((el<HTMLInputElement>("enroll-shots")).value);
    enrollment.start(cls, shots);
    enrolling = true;
    enrollStatus.textContent = enrollment.summary();
  };
  el("enroll-submit").onclick = async () => {
    enrolling = false;
    enrollStatus.textContent = enrollment.summary();
    try {
      await enrollment.submit();
    } catch {
      /* summary() carries the failure message */
    }
    enrollStatus.textContent = enrollment.summary();
  };

  const select = el<HTMLSelectElement>("enroll-class");
  select.replaceChildren(
    ...ready.classes.slice(0, ready.config.theta.length).map((c) => {
      const opt = document.createElement("option");
      opt.value = c;
      opt.textContent = c;
      return opt;
    }),
  );

  await micStream((samples) => {
    if (enrolling) {
      enrollment.addAudio(samples);
      enrollStatus.textContent = enrollment.summary();
    } else {
      client.sendAudio(samples);
    }
  });
}

boot().catch((err) => {
  document.body.textContent = `failed to start: ${err}`;
});
