"""Real-time detection service: audio in, probabilities and events out.

One WebSocket connection per session. Binary messages carry raw PCM
(s16le, 16 kHz, mono); text messages are JSON control/results. Display
probability summaries are decimated to 10 Hz and may be dropped under
back-pressure; event messages are never dropped. An HTTP enroll endpoint
runs annotation + head fine-tuning and hot-swaps the session's weights.
"""

from __future__ import annotations

import asyncio
import io
import json
import uuid
import wave
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request, WebSocket, WebSocketDisconnect

from . import __version__
from .annotate import annotate_clip
from .audio import SAMPLE_RATE, AudioClip, StreamingFrontend
from .errors import EnrollmentError, NvsdError
from .events import Detector, PostProcConfig, process
from .metrics import segmental_score
from .model import (BACKGROUND, NUM_SOUNDS, SPEECH, ModelWeights,
                    StreamingSession, forward)
from .personalize import FitHeadConfig, fit_head

DISPLAY_DECIMATION = 10      # one probs summary per 10 frames (10 Hz)
DISPLAY_QUEUE_MAX = 64
TOP_K = 5


@dataclass
class Session:
    sid: str
    weights: ModelWeights
    base_config: PostProcConfig
    config: PostProcConfig = None
    frontend: StreamingFrontend = field(default_factory=StreamingFrontend)
    model_session: StreamingSession = None
    detector: Detector = None
    frame: int = -1

    def __post_init__(self):
        self.config = PostProcConfig.from_dict(self.base_config.to_dict())
        self.model_session = StreamingSession(self.weights)
        self.detector = Detector(self.config)

    def reset_detector(self):
        # new config object takes effect from the next frame; detector state
        # (suppression/refractory clocks, run counters) is carried over
        old = self.detector
        self.detector = Detector(self.config)
        self.detector.frame = old.frame
        self.detector._runs = old._runs
        self.detector._last_bg = old._last_bg
        self.detector._last_event = old._last_event
        n = min(old._hist.shape[0], self.detector._hist.shape[0])
        for i in range(max(0, old.frame - n + 1), old.frame + 1):
            self.detector._hist[i % self.detector._hist.shape[0]] = \
                old._hist[i % old._hist.shape[0]]


def create_app(weights: ModelWeights, postproc: PostProcConfig | None = None) -> FastAPI:
    app = FastAPI(title="nvsd")
    base_cfg = postproc or PostProcConfig()
    sessions: dict[str, Session] = {}
    app.state.sessions = sessions

    names = weights.class_names

    def class_index(name) -> int:
        if name in names[:NUM_SOUNDS]:
            return names.index(name)
        raise NvsdError(f"unknown class {name!r}")

    @app.get("/health")
    def health():
        return {"version": __version__, "weight_format_version": 1,
                "classes": names, "num_sounds": NUM_SOUNDS}

    @app.websocket("/session")
    async def session_ws(ws: WebSocket):
        await ws.accept()
        try:
            first = json.loads(await ws.receive_text())
        except Exception:
            await ws.send_text(json.dumps(
                {"type": "error", "message": "first message must declare the format"}))
            await ws.close()
            return
        fmt = first.get("format", {})
        if (first.get("type") != "start"
                or fmt.get("encoding") != "pcm_s16le"
                or fmt.get("rate") != SAMPLE_RATE
                or fmt.get("channels") != 1):
            await ws.send_text(json.dumps(
                {"type": "error",
                 "message": "unsupported format; need pcm_s16le 16000 mono"}))
            await ws.close()
            return

        sess = Session(uuid.uuid4().hex[:12], weights, base_cfg)
        sessions[sess.sid] = sess
        outbox: asyncio.Queue = asyncio.Queue(maxsize=DISPLAY_QUEUE_MAX)

        async def writer():
            while True:
                msg = await outbox.get()
                if msg is None:
                    return
                await ws.send_text(json.dumps(msg))

        writer_task = asyncio.create_task(writer())

        async def emit_event(msg):
            await outbox.put(msg)          # blocks: events are never dropped

        def emit_display(msg):
            try:
                outbox.put_nowait(msg)     # droppable under back-pressure
            except asyncio.QueueFull:
                pass

        await ws.send_text(json.dumps({
            "type": "ready", "session_id": sess.sid, "classes": names,
            "config": sess.config.to_dict()}))

        try:
            while True:
                message = await ws.receive()
                if message.get("type") == "websocket.disconnect":
                    break
                if message.get("bytes") is not None:
                    raw = message["bytes"]
                    if len(raw) % 2:
                        await ws.send_text(json.dumps(
                            {"type": "error", "message": "odd-length PCM frame"}))
                        break
                    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
                    frames = sess.frontend.push(samples)
                    if frames.shape[0] == 0:
                        continue
                    probs, _ = sess.model_session.push(frames)
                    for row in probs:
                        sess.frame += 1
                        event = sess.detector.step(row)
                        if event is not None:
                            await emit_event({
                                "type": "event", "class": names[event.cls],
                                "t_ms": event.time_ms})
                        if sess.frame % DISPLAY_DECIMATION == 0:
                            order = np.argsort(row[:NUM_SOUNDS])[::-1][:TOP_K]
                            emit_display({
                                "type": "probs", "t_ms": sess.frame * 10,
                                "top_k": [{"class": names[c], "p": float(row[c])}
                                          for c in order],
                                "p_background": float(row[BACKGROUND]),
                                "p_speech": float(row[SPEECH])})
                elif message.get("text") is not None:
                    try:
                        await _handle_control(ws, sess, json.loads(message["text"]),
                                              class_index, base_cfg)
                    except (NvsdError, ValueError, KeyError) as e:
                        await ws.send_text(json.dumps(
                            {"type": "error", "message": str(e)}))
                        break
        except WebSocketDisconnect:
            pass
        finally:
            await outbox.put(None)
            await writer_task
            sessions.pop(sess.sid, None)
            try:
                await ws.close()
            except Exception:
                pass    # peer already disconnected

    async def _handle_control(ws, sess: Session, msg, class_index, base_cfg):
        kind = msg.get("type")
        if kind == "config":
            c = class_index(msg["class"])
            if "theta" in msg:
                theta = float(msg["theta"])
                if not 0.0 < theta < 1.0:
                    raise NvsdError(f"theta {theta} outside (0, 1)")
                sess.config.theta[c] = theta
            if "tau" in msg:
                tau = int(msg["tau"])
                if tau < 1:
                    raise NvsdError(f"tau {tau} must be >= 1")
                sess.config.tau[c] = tau
            sess.reset_detector()
            await ws.send_text(json.dumps(
                {"type": "ack", "config": sess.config.to_dict()}))
        elif kind == "active":
            active = [class_index(n) for n in msg["classes"]]
            sess.config.active_mask = [c in active for c in range(NUM_SOUNDS)]
            sess.reset_detector()
            await ws.send_text(json.dumps(
                {"type": "ack", "config": sess.config.to_dict()}))
        elif kind == "reset_config":
            sess.config = PostProcConfig.from_dict(sess.base_config.to_dict())
            sess.reset_detector()
            await ws.send_text(json.dumps(
                {"type": "ack", "config": sess.config.to_dict()}))
        elif kind == "close":
            raise WebSocketDisconnect(1000)
        else:
            raise NvsdError(f"unknown control message type {kind!r}")

    @app.post("/sessions/{sid}/enroll")
    async def enroll(sid: str, request: Request,
                     cls: str = Query(..., alias="class"),
                     shots: int = Query(5, ge=1, le=5)):
        sess = sessions.get(sid)
        if sess is None:
            raise HTTPException(404, detail=f"no session {sid}")
        try:
            c = class_index(cls)
        except NvsdError as e:
            raise HTTPException(422, detail=str(e))
        body = await request.body()
        try:
            clip = _decode_audio(body)
        except NvsdError as e:
            raise HTTPException(422, detail=str(e))
        result = await asyncio.to_thread(
            _enroll_blocking, sess.model_session.weights, clip, c, shots,
            sess.config)
        if "error" in result:
            raise HTTPException(422, detail=result["error"])
        sess.model_session.swap_weights(result.pop("weights"))
        result["class"] = cls
        return result

    return app


def _decode_audio(body: bytes) -> AudioClip:
    if body[:4] == b"RIFF":
        with wave.open(io.BytesIO(body), "rb") as wf:
            if (wf.getnchannels(), wf.getsampwidth(), wf.getframerate()) != \
                    (1, 2, SAMPLE_RATE):
                raise NvsdError("WAV must be mono 16-bit 16 kHz")
            raw = wf.readframes(wf.getnframes())
    else:
        raw = body
    if len(raw) < 2:
        raise NvsdError("empty audio payload")
    samples = np.frombuffer(raw[:len(raw) - len(raw) % 2],
                            dtype="<i2").astype(np.float32) / 32768.0
    return AudioClip(samples)


def _enroll_blocking(weights: ModelWeights, clip: AudioClip, c: int,
                     shots: int, postproc: PostProcConfig) -> dict:
    enrollment = annotate_clip(clip, c)
    if not enrollment.segments:
        return {"error": "no sound detected in the enrollment recording - "
                         "try again louder or closer to the microphone"}
    try:
        fitted = fit_head(weights, enrollment, [c], shots, FitHeadConfig())
    except EnrollmentError as e:
        return {"error": str(e)}

    # score before/after on the held-out tail: segments beyond the fit shots,
    # falling back to the whole clip when every segment was used for fitting
    heldout = enrollment.segments[shots:] or enrollment.segments
    start = 0
    if enrollment.segments[shots:]:
        used = enrollment.segments[:shots]
        start = min(heldout[0].start_frame - 13,
                    used[-1].end_frame + 14)
        start = max(0, start)
    cfg = postproc.one_active(c)

    def f1(w):
        probs, _ = forward(w, enrollment.feats)
        evs = [e for e in process(probs[start:], cfg)]
        segs = [(s.start_frame - start, s.end_frame - start, s.label)
                for s in heldout if s.start_frame >= start]
        rep = segmental_score(evs, segs)
        val = rep.f1[c]
        return 0.0 if val is None else val

    return {"weights": fitted, "f1_before": f1(weights), "f1_after": f1(fitted),
            "segments_found": len(enrollment.segments), "shots": shots}
