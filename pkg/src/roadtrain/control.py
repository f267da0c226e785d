"""Interactive control plane for a live in-process run.

Exposes a WebSocket endpoint (``/ws``) speaking one JSON object per message:
``{"verb": "JOIN", "node": 3}``.  SNAPSHOT/PAUSE/RESUME need no node.  The
same verbs are accepted on stdin as ``VERB [node]`` lines, so the simulator
stays drivable without any client.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .engine import Engine

log = logging.getLogger(__name__)

ENGINE_VERBS = ("JOIN", "LEAVE")
SERVER_VERBS = ("SNAPSHOT", "PAUSE", "RESUME")


def handle_request(engine: Engine, req: dict) -> dict:
    """Apply one control request; always returns a JSON-serializable reply."""
    verb = str(req.get("verb", "")).upper()
    if verb == "SNAPSHOT":
        return {"ok": True, "snapshot": engine.snapshot()}
    if verb == "PAUSE":
        engine.pause()
        return {"ok": True, "paused": True}
    if verb == "RESUME":
        engine.resume()
        return {"ok": True, "paused": False}
    if verb in ENGINE_VERBS:
        node = req.get("node")
        if not isinstance(node, int):
            return {"error": "BadRequest", "reason": "node must be an integer"}
        return engine.submit_command(verb, node)
    return {"error": "UnknownVerb", "verb": verb}


def parse_stdin_line(line: str) -> Optional[dict]:
    """``JOIN 3`` -> {"verb": "JOIN", "node": 3}; blank/comment lines -> None."""
    parts = line.split("#", 1)[0].split()
    if not parts:
        return None
    req: dict = {"verb": parts[0].upper()}
    if len(parts) > 1:
        try:
            req["node"] = int(parts[1])
        except ValueError:
            req["node"] = parts[1]
    return req


def _stdin_pump(engine: Engine, stop: threading.Event) -> None:
    import sys

    for line in sys.stdin:
        if stop.is_set():
            return
        req = parse_stdin_line(line)
        if req is None:
            continue
        reply = handle_request(engine, req)
        print(json.dumps(reply), flush=True)


def build_app(engine: Engine):
    app = FastAPI(title="roadtrain control")

    @app.get("/snapshot")
    def snapshot():
        return engine.snapshot()

    @app.websocket("/ws")
    async def ws(socket: WebSocket):
        await socket.accept()
        try:
            while True:
                raw = await socket.receive_text()
                try:
                    req = json.loads(raw)
                except json.JSONDecodeError:
                    await socket.send_text(json.dumps({"error": "BadRequest", "reason": "not JSON"}))
                    continue
                reply = await asyncio.to_thread(handle_request, engine, req)
                await socket.send_text(json.dumps(reply))
        except WebSocketDisconnect:
            return

    return app


def serve(engine: Engine, host: str = "127.0.0.1", port: int = 8700, stdin: bool = True) -> None:
    """Run the engine in real time and serve the control API until it ends."""
    import uvicorn

    runner = threading.Thread(target=engine.run, kwargs={"realtime": True}, daemon=True)
    runner.start()

    stop = threading.Event()
    if stdin:
        threading.Thread(target=_stdin_pump, args=(engine, stop), daemon=True).start()

    config = uvicorn.Config(build_app(engine), host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)

    def stop_when_done():
        runner.join()
        server.should_exit = True

    threading.Thread(target=stop_when_done, daemon=True).start()
    log.info("control API on ws://%s:%d/ws", host, port)
    server.run()
    stop.set()
    engine.stop()
