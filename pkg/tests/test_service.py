import json

import numpy as np
import pytest
from starlette.testclient import TestClient

from nvsd.events import PostProcConfig
from nvsd.model import ModelSpec, ModelWeights
from nvsd.service import create_app
from nvsd.synthbench import SynthSpec, generate_clip


def biased_weights(cls=2, logit=2.0):
    """Zero trunk; head bias makes class `cls` probability constant and high,
    everything else low — a deterministic event generator for protocol tests."""
    spec = ModelSpec()
    tensors = {n: np.zeros(s, dtype=np.float32)
               for n, s in spec.tensor_shapes().items()}
    tensors["head.b"][:] = -4.0
    tensors["head.b"][cls] = logit
    return ModelWeights(spec, tensors)


def zero_weights():
    spec = ModelSpec()
    return ModelWeights(spec, {n: np.zeros(s, dtype=np.float32)
                               for n, s in spec.tensor_shapes().items()})


START = {"type": "start",
         "format": {"encoding": "pcm_s16le", "rate": 16000, "channels": 1}}


def pcm_chunk(seconds=1.0, value=0):
    n = int(seconds * 16000)
    return (np.full(n, value, dtype="<i2")).tobytes()


def drain_until(ws, type_, limit=200):
    for _ in range(limit):
        msg = json.loads(ws.receive_text())
        if msg["type"] == type_:
            return msg
    raise AssertionError(f"no {type_!r} message within {limit} messages")


@pytest.fixture(scope="module")
def app():
    return create_app(biased_weights(), PostProcConfig())


class TestHealth:
    def test_health(self, app):
        client = TestClient(app)
        r = client.get("/health")
        assert r.status_code == 200
        body = r.json()
        assert body["num_sounds"] == 15
        assert len(body["classes"]) == 17


class TestSessionProtocol:
    def test_bad_format_rejected(self, app):
        client = TestClient(app)
        with client.websocket_connect("/session") as ws:
            ws.send_text(json.dumps({"type": "start",
                                     "format": {"encoding": "f32",
                                                "rate": 44100,
                                                "channels": 2}}))
            msg = json.loads(ws.receive_text())
            assert msg["type"] == "error"

    def test_silence_through_zero_model_no_events(self):
        app = create_app(zero_weights(), PostProcConfig())
        client = TestClient(app)
        with client.websocket_connect("/session") as ws:
            ws.send_text(json.dumps(START))
            ready = json.loads(ws.receive_text())
            assert ready["type"] == "ready"
            for _ in range(5):
                ws.send_bytes(pcm_chunk(1.0))
            ws.send_text(json.dumps({"type": "close"}))
            types = set()
            while True:
                try:
                    types.add(json.loads(ws.receive_text())["type"])
                except Exception:
                    break
            assert "event" not in types

    def test_events_stream_with_expected_timing(self, app):
        client = TestClient(app)
        with client.websocket_connect("/session") as ws:
            ws.send_text(json.dumps(START))
            ready = json.loads(ws.receive_text())
            sid = ready["session_id"]
            assert sid
            ws.send_bytes(pcm_chunk(2.0))
            ev1 = drain_until(ws, "event")
            # tau=10 default: first event once 10 frames accumulate
            assert ev1["t_ms"] == 90
            assert ev1["class"] == "pop"     # class index 2
            ev2 = drain_until(ws, "event")
            assert ev2["t_ms"] == 590        # refractory: 50 frames later

    def test_probs_summaries_decimated(self, app):
        client = TestClient(app)
        with client.websocket_connect("/session") as ws:
            ws.send_text(json.dumps(START))
            json.loads(ws.receive_text())
            ws.send_bytes(pcm_chunk(1.0))
            probs = drain_until(ws, "probs")
            assert probs["t_ms"] % 100 == 0
            assert len(probs["top_k"]) == 5
            assert "p_background" in probs and "p_speech" in probs

    def test_config_update_acknowledged_and_effective(self, app):
        client = TestClient(app)
        with client.websocket_connect("/session") as ws:
            ws.send_text(json.dumps(START))
            json.loads(ws.receive_text())
            ws.send_text(json.dumps({"type": "config", "class": "pop",
                                     "theta": 0.95}))
            ack = drain_until(ws, "ack")
            assert ack["config"]["theta"][2] == 0.95
            ws.send_bytes(pcm_chunk(2.0))
            ws.send_text(json.dumps({"type": "close"}))
            types = []
            while True:
                try:
                    types.append(json.loads(ws.receive_text())["type"])
                except Exception:
                    break
            assert "event" not in types    # threshold now above 0.88

    def test_invalid_config_errors(self, app):
        client = TestClient(app)
        with client.websocket_connect("/session") as ws:
            ws.send_text(json.dumps(START))
            json.loads(ws.receive_text())
            ws.send_text(json.dumps({"type": "config", "class": "nosuch",
                                     "theta": 0.5}))
            msg = json.loads(ws.receive_text())
            assert msg["type"] == "error"

    def test_reset_config(self, app):
        client = TestClient(app)
        with client.websocket_connect("/session") as ws:
            ws.send_text(json.dumps(START))
            json.loads(ws.receive_text())
            ws.send_text(json.dumps({"type": "config", "class": "pop",
                                     "tau": 3}))
            drain_until(ws, "ack")
            ws.send_text(json.dumps({"type": "reset_config"}))
            ack = drain_until(ws, "ack")
            assert ack["config"]["tau"][2] == 10

    def test_sessions_isolated(self, app):
        client = TestClient(app)
        with client.websocket_connect("/session") as ws1, \
                client.websocket_connect("/session") as ws2:
            ws1.send_text(json.dumps(START))
            ws2.send_text(json.dumps(START))
            r1 = json.loads(ws1.receive_text())
            r2 = json.loads(ws2.receive_text())
            assert r1["session_id"] != r2["session_id"]
            ws1.send_text(json.dumps({"type": "config", "class": "pop",
                                      "theta": 0.9}))
            ack = drain_until(ws1, "ack")
            assert ack["config"]["theta"][2] == 0.9
            # the other session keeps its default config
            ws2.send_text(json.dumps({"type": "config", "class": "pop",
                                      "tau": 12}))
            ack2 = drain_until(ws2, "ack")
            assert ack2["config"]["theta"][2] == 0.5

    def test_odd_length_pcm_rejected(self, app):
        client = TestClient(app)
        with client.websocket_connect("/session") as ws:
            ws.send_text(json.dumps(START))
            json.loads(ws.receive_text())
            ws.send_bytes(b"\x00\x00\x01")
            msg = json.loads(ws.receive_text())
            assert msg["type"] == "error"


class TestEnroll:
    def test_unknown_session_404(self, app):
        client = TestClient(app)
        r = client.post("/sessions/nope/enroll?class=pop&shots=3",
                        content=pcm_chunk(1.0))
        assert r.status_code == 404

    def test_silence_enrollment_fails_with_guidance(self, app):
        client = TestClient(app)
        with client.websocket_connect("/session") as ws:
            ws.send_text(json.dumps(START))
            sid = json.loads(ws.receive_text())["session_id"]
            r = client.post(f"/sessions/{sid}/enroll?class=pop&shots=3",
                            content=pcm_chunk(2.0))
            assert r.status_code == 422
            assert "louder" in r.json()["detail"]

    def test_enroll_flow_returns_f1_and_swaps_head(self, app):
        client = TestClient(app)
        clip = generate_clip(SynthSpec(users=2, eval_users=1, repetitions=8),
                             0, 2)
        pcm = (np.clip(np.round(clip.clip.samples * 32767), -32768, 32767)
               .astype("<i2").tobytes())
        with client.websocket_connect("/session") as ws:
            ws.send_text(json.dumps(START))
            sid = json.loads(ws.receive_text())["session_id"]
            r = client.post(f"/sessions/{sid}/enroll?class=pop&shots=3",
                            content=pcm)
            assert r.status_code == 200, r.text
            body = r.json()
            assert body["class"] == "pop"
            assert body["shots"] == 3
            assert body["segments_found"] >= 3
            assert "f1_before" in body and "f1_after" in body

    def test_unknown_class_422(self, app):
        client = TestClient(app)
        with client.websocket_connect("/session") as ws:
            ws.send_text(json.dumps(START))
            sid = json.loads(ws.receive_text())["session_id"]
            r = client.post(f"/sessions/{sid}/enroll?class=zzz&shots=3",
                            content=pcm_chunk(1.0))
            assert r.status_code == 422
