"""External predictor wire protocol: framing, validation, child processes."""

import json
import sys
import time

import numpy as np
import pytest

from mmarch.model import parse_model
from mmarch.predictors import decode_prediction, encode_context
from mmarch.runtime import Session

# A minimal peer: answers every context line with one fixed prediction,
# plus one malformed line when asked via argv.
ECHO_PEER = r"""
import json, sys
emit_junk = len(sys.argv) > 1 and sys.argv[1] == "junk"
for line in sys.stdin:
    msg = json.loads(line)
    if msg.get("type") != "context":
        continue
    if emit_junk:
        sys.stdout.write("this is not json\n")
    out = {"type": "prediction", "tag": "vision", "salience": 0.8,
           "chunk": {"isa": "percept", "slots": {"value": "blip"}},
           "extra_field": "ignored"}
    sys.stdout.write(json.dumps(out) + "\n")
    sys.stdout.flush()
"""


class TestFraming:
    def test_context_line_shape(self):
        line = encode_context(3, np.array([0.5, -0.25]), ["a", "b"])
        msg = json.loads(line)
        assert msg == {"type": "context", "cycle": 3, "dim": 2,
                       "vector": [0.5, -0.25], "symbols": ["a", "b"]}
        assert "\n" not in line

    def test_decode_chunk_prediction_ignores_unknown_fields(self):
        line = json.dumps({"type": "prediction", "tag": "vision",
                           "salience": 0.8, "mystery": 1,
                           "chunk": {"isa": "percept", "slots": {"value": "x"}}})
        out = decode_prediction(line, dim=8)
        assert out["tag"] == "vision"
        assert out["salience"] == 0.8
        assert out["ctype"] == "percept"
        assert out["slots"] == (("value", "x"),)

    def test_decode_vector_prediction_normalizes(self):
        line = json.dumps({"type": "prediction", "tag": "vision",
                           "salience": 1.0, "vector": [3.0, 4.0]})
        out = decode_prediction(line, dim=2)
        assert np.linalg.norm(out["vector"]) == pytest.approx(1.0)

    @pytest.mark.parametrize("line", [
        "not json at all",
        json.dumps({"type": "other"}),
        json.dumps({"type": "prediction"}),  # no tag
        json.dumps({"type": "prediction", "tag": "vision"}),  # no payload
        json.dumps({"type": "prediction", "tag": "vision", "salience": 2.0,
                    "vector": [1.0, 0.0]}),  # salience out of range
        json.dumps({"type": "prediction", "tag": "vision",
                    "vector": [1.0]}),  # wrong dimension
        json.dumps({"type": "prediction", "tag": "vision",
                    "vector": [0.0, 0.0]}),  # zero vector
        json.dumps({"type": "prediction", "tag": "has space",
                    "vector": [1.0, 0.0]}),  # bad symbol
        json.dumps({"type": "prediction", "tag": "vision",
                    "chunk": {"isa": "percept", "slots": {"value": 3}}}),
    ])
    def test_malformed_lines_raise(self, line):
        with pytest.raises(ValueError):
            decode_prediction(line, dim=2)


def _external_model(command):
    return parse_model({
        "name": "wire-test",
        "codebook": {"dimension": 64, "seed": 1},
        "buffers": [
            {"name": "goal", "owner": "central"},
            {"name": "sight", "owner": "vision"},
        ],
        "shadow_systems": [
            {"name": "vision", "buffer": "sight", "subscriptions": ["vision"],
             "productions": [
                {"name": "see",
                 "conditions": [{"mm_tags": ["vision"],
                                 "pattern": {"isa": "percept", "slots": {"value": "?"}}}],
                 "actions": [{"kind": "write-buffer", "target": "sight",
                              "chunk": {"isa": "percept", "slots": {"value": "?value"}}}]}]}
        ],
        "central_productions": [],
        "predictors": [
            {"name": "peer", "kind": "external", "tag": "vision",
             "command": command}
        ],
        "initial_wm": [
            {"buffer": "goal", "chunk": {"isa": "goal", "slots": {"state": "watch"}}}
        ],
    })


def _step_until(session, predicate, max_cycles=40, settle=0.05):
    for _ in range(max_cycles):
        session.step()
        if predicate(session):
            return True
        time.sleep(settle)
    return False


class TestChildProcess:
    def test_predictions_arrive_tagged_through_middle_memory(self):
        model = _external_model([sys.executable, "-u", "-c", ECHO_PEER])
        session = Session(model, mode="mm", seed=0)
        try:
            ok = _step_until(
                session, lambda s: any(e.kind == "deposit" and not
                                       e.data["source"].startswith("initial")
                                       for e in s.trace.events))
            assert ok, "no deposit from the external peer"
        finally:
            session.finish()
        deposits = [e for e in session.trace.events if e.kind == "deposit"]
        assert deposits[0].data["tag"] == "vision"
        assert deposits[0].data["source"] == "predictor:peer"
        assert deposits[0].data["content"]["slots"] == {"value": "blip"}
        assert deposits[0].data["salience"] == 0.8
        # the shadow system filtered it into its own buffer
        writes = [e for e in session.trace.events
                  if e.kind == "wm-write" and e.data["writer"] == "vision"]
        assert writes and writes[0].data["buffer"] == "sight"

    def test_malformed_lines_dropped_with_error_event(self):
        model = _external_model([sys.executable, "-u", "-c", ECHO_PEER, "junk"])
        session = Session(model, mode="mm", seed=0)
        try:
            ok = _step_until(
                session, lambda s: any(e.kind == "error" for e in s.trace.events))
            assert ok, "no error event for the malformed line"
        finally:
            session.finish()
        errors = [e for e in session.trace.events if e.kind == "error"]
        assert "malformed" in errors[0].data["message"]
        assert errors[0].data["payload"] == "this is not json"
        # the well-formed sibling line still landed
        assert any(e.kind == "deposit" and e.data["source"] == "predictor:peer"
                   for e in session.trace.events)

    def test_dead_peer_stalls_without_stopping_the_run(self):
        exit_peer = "import sys; sys.exit(0)"
        model = _external_model([sys.executable, "-c", exit_peer])
        session = Session(model, mode="mm", seed=0)
        try:
            ok = _step_until(
                session, lambda s: any(e.kind == "error" and "stalled" in
                                       e.data["message"]
                                       for e in s.trace.events),
                max_cycles=60)
            assert ok, "stall warning never logged"
            session.step()  # the run keeps going
        finally:
            session.finish()
        warnings = [e for e in session.trace.events
                    if e.kind == "error" and "stalled" in e.data["message"]]
        assert len(warnings) == 1  # warned once, not every cycle


class TestTcpTransport:
    def test_socket_peer_round_trip(self):
        import socket
        import threading

        server = socket.create_server(("127.0.0.1", 0))
        port = server.getsockname()[1]

        def serve():
            conn, _ = server.accept()
            handle = conn.makefile("rw", encoding="utf-8", newline="\n")
            for line in handle:
                msg = json.loads(line)
                if msg.get("type") != "context":
                    continue
                out = {"type": "prediction", "tag": "vision", "salience": 0.5,
                       "chunk": {"isa": "percept", "slots": {"value": "ping"}}}
                handle.write(json.dumps(out) + "\n")
                handle.flush()

        thread = threading.Thread(target=serve, daemon=True)
        thread.start()

        model = parse_model({
            "name": "tcp-test",
            "codebook": {"dimension": 64, "seed": 1},
            "buffers": [{"name": "goal", "owner": "central"},
                        {"name": "sight", "owner": "vision"}],
            "shadow_systems": [
                {"name": "vision", "buffer": "sight", "subscriptions": ["vision"],
                 "productions": []}],
            "central_productions": [],
            "predictors": [{"name": "sock", "kind": "external", "tag": "vision",
                            "host": "127.0.0.1", "port": port}],
            "initial_wm": [{"buffer": "goal",
                            "chunk": {"isa": "goal", "slots": {"state": "watch"}}}],
        })
        session = Session(model, mode="mm", seed=0)
        try:
            ok = _step_until(
                session, lambda s: any(e.kind == "deposit" and
                                       e.data["source"] == "predictor:sock"
                                       for e in s.trace.events))
            assert ok, "no deposit over TCP"
        finally:
            session.finish()
            server.close()
