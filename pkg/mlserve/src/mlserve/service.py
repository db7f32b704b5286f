"""HTTP scorer service.

Wire contract (shared with the pipeline's offline mock, byte-compatible
response shapes):
  POST /embed {"texts": [...], "profile": "validation"|"evaluation"} -> {"vectors": [[...]]}
  POST /score {"texts": [...], "kind": "toxicity"|"fluency"|"style"} -> {"scores": [...]}
Bad requests get 400 {"error": ...}; per-request failures get 500.
"""

from __future__ import annotations

import threading
from pathlib import Path

import uvicorn
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .backends import ScorerBackends, build_backends


def _bad_request(message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=400)


def _validate(body, key: str, allowed: set[str]) -> str | None:
    if not isinstance(body, dict):
        return "body must be a JSON object"
    if "texts" not in body or key not in body:
        return f"body must have keys: texts, {key}"
    if not isinstance(body["texts"], list) or not all(isinstance(t, str) for t in body["texts"]):
        return "texts must be a list of strings"
    if body[key] not in allowed:
        return f"unknown {key}: {body[key]}"
    return None


def create_app(backends: ScorerBackends) -> FastAPI:
    app = FastAPI(title="scorer", docs_url=None, redoc_url=None)

    @app.post("/embed")
    async def embed(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _bad_request("invalid JSON body")
        error = _validate(body, "profile", set(backends.embedders))
        if error:
            return _bad_request(error)
        try:
            vectors = backends.embedders[body["profile"]].encode(body["texts"])
        except Exception as exc:
            return JSONResponse({"error": str(exc)}, status_code=500)
        return JSONResponse({"vectors": vectors})

    @app.post("/score")
    async def score(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _bad_request("invalid JSON body")
        error = _validate(body, "kind", set(backends.scorers))
        if error:
            return _bad_request(error)
        try:
            scores = backends.scorers[body["kind"]].score(body["texts"])
        except Exception as exc:
            return JSONResponse({"error": str(exc)}, status_code=500)
        return JSONResponse({"scores": scores})

    return app


def serve(models_config: str | Path, host: str = "127.0.0.1", port: int = 8018) -> None:
    """Load all configured backends (startup error on failure) and serve."""
    backends = build_backends(models_config)
    uvicorn.run(create_app(backends), host=host, port=port, log_level="warning")


class BackgroundServer:
    """Run the service in a daemon thread; used by tests and the trainer."""

    def __init__(self, backends: ScorerBackends, host: str = "127.0.0.1", port: int = 0):
        if port == 0:
            import socket
            with socket.socket() as sock:
                sock.bind((host, 0))
                port = sock.getsockname()[1]
        self.base_url = f"http://{host}:{port}"
        config = uvicorn.Config(create_app(backends), host=host, port=port,
                                log_level="warning")
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)

    def __enter__(self) -> "BackgroundServer":
        self._thread.start()
        while not self._server.started:
            if not self._thread.is_alive():
                raise RuntimeError("scorer service failed to start")
            threading.Event().wait(0.01)
        return self

    def __exit__(self, *exc_info) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)
