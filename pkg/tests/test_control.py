"""Tests for the runtime control surface (requests, stdin console, WebSocket)."""

import json

import pytest

from roadtrain.config import ScenarioConfig
from roadtrain.control import build_app, handle_request, parse_stdin_line
from roadtrain.engine import Engine


def quick_engine(duration=6.0, scripted=False):
    cfg = ScenarioConfig()
    cfg.mode = "mpr"
    cfg.n_followers = 2
    cfg.duration_s = duration
    cfg.seed = 11
    cfg.medium.loss_max = 0.0
    cfg.scripted = scripted
    return Engine(cfg)


class TestHandleRequest:
    def test_snapshot_shape(self):
        eng = quick_engine()
        reply = handle_request(eng, {"verb": "snapshot"})
        assert reply["ok"] is True
        snap = reply["snapshot"]
        assert {"t_ms", "vehicles", "train", "mode"} <= set(snap)

    def test_pause_resume(self):
        eng = quick_engine()
        assert handle_request(eng, {"verb": "PAUSE"}) == {"ok": True, "paused": True}
        assert handle_request(eng, {"verb": "RESUME"}) == {"ok": True, "paused": False}

    def test_join_requires_int_node(self):
        eng = quick_engine()
        reply = handle_request(eng, {"verb": "JOIN", "node": "two"})
        assert reply["error"] == "BadRequest"

    def test_join_routes_to_engine(self):
        eng = quick_engine()
        reply = handle_request(eng, {"verb": "JOIN", "node": 99})
        assert reply["error"] == "UnknownNode"

    def test_unknown_verb(self):
        eng = quick_engine()
        assert handle_request(eng, {"verb": "EXPLODE"})["error"] == "UnknownVerb"


class TestParseStdinLine:
    def test_verb_and_node(self):
        assert parse_stdin_line("JOIN 3") == {"verb": "JOIN", "node": 3}

    def test_lowercase_and_whitespace(self):
        assert parse_stdin_line("  leave   2 ") == {"verb": "LEAVE", "node": 2}

    def test_blank_and_comment(self):
        assert parse_stdin_line("") is None
        assert parse_stdin_line("   # note") is None

    def test_non_numeric_node_passed_through(self):
        assert parse_stdin_line("JOIN abc") == {"verb": "JOIN", "node": "abc"}

    def test_bare_snapshot(self):
        assert parse_stdin_line("snapshot") == {"verb": "SNAPSHOT"}


class TestHttpSurface:
    @pytest.fixture()
    def client(self):
        from fastapi.testclient import TestClient

        eng = quick_engine()
        with TestClient(build_app(eng)) as c:
            yield c

    def test_get_snapshot(self, client):
        body = client.get("/snapshot").json()
        assert body["t_ms"] == 0
        assert [v["id"] for v in body["vehicles"]] == [1, 2, 3]

    def test_ws_snapshot_roundtrip(self, client):
        with client.websocket_connect("/ws") as ws:
            ws.send_text(json.dumps({"verb": "SNAPSHOT"}))
            reply = json.loads(ws.receive_text())
            assert reply["ok"] is True
            assert reply["snapshot"]["train"] == [1]

    def test_ws_rejects_non_json(self, client):
        with client.websocket_connect("/ws") as ws:
            ws.send_text("not json at all")
            reply = json.loads(ws.receive_text())
            assert reply["error"] == "BadRequest"

    def test_ws_command_sequence(self, client):
        with client.websocket_connect("/ws") as ws:
            ws.send_text(json.dumps({"verb": "JOIN", "node": 1}))
            reply = json.loads(ws.receive_text())
            assert reply["error"] == "IllegalState"  # the lead cannot join itself
            ws.send_text(json.dumps({"verb": "LEAVE", "node": 2}))
            reply = json.loads(ws.receive_text())
            assert reply["error"] == "IllegalState"  # node 2 is still FREE
