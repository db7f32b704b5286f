"""WSGI wrapper exposing the deterministic mock scorer over HTTP.

Implements the same wire contract as a real scorer service:
  POST /embed  {"texts": [...], "profile": "validation"|"evaluation"} -> {"vectors": [[...]]}
  POST /score  {"texts": [...], "kind": "toxicity"|"fluency"|"style"} -> {"scores": [...]}
Run standalone with `python -m detoxcorpus.mockscorer --port 8017`.
"""

from __future__ import annotations

import argparse
import json
import threading
from socketserver import ThreadingMixIn
from wsgiref.simple_server import WSGIServer, make_server

from .scoring import PROFILES, SCORE_KINDS, MockScorerClient


def _json_response(start_response, status: str, payload: dict):
    body = json.dumps(payload).encode("utf-8")
    start_response(status, [("Content-Type", "application/json"),
                            ("Content-Length", str(len(body)))])
    return [body]


def validate_embed_request(body) -> str | None:
    if not isinstance(body, dict):
        return "body must be a JSON object"
    if "texts" not in body or "profile" not in body:
        return "body must have keys: texts, profile"
    if not isinstance(body["texts"], list) or not all(isinstance(t, str) for t in body["texts"]):
        return "texts must be a list of strings"
    if body["profile"] not in PROFILES:
        return f"unknown profile: {body['profile']}"
    return None


def validate_score_request(body) -> str | None:
    if not isinstance(body, dict):
        return "body must be a JSON object"
    if "texts" not in body or "kind" not in body:
        return "body must have keys: texts, kind"
    if not isinstance(body["texts"], list) or not all(isinstance(t, str) for t in body["texts"]):
        return "texts must be a list of strings"
    if body["kind"] not in SCORE_KINDS:
        return f"unknown kind: {body['kind']}"
    return None


def create_app(client: MockScorerClient | None = None):
    client = client or MockScorerClient()

    def app(environ, start_response):
        path = environ.get("PATH_INFO", "")
        method = environ.get("REQUEST_METHOD", "GET")
        if path not in ("/embed", "/score"):
            return _json_response(start_response, "404 Not Found", {"error": "unknown route"})
        if method != "POST":
            return _json_response(start_response, "405 Method Not Allowed",
                                  {"error": "POST required"})
        try:
            length = int(environ.get("CONTENT_LENGTH") or 0)
            body = json.loads(environ["wsgi.input"].read(length) or b"{}")
        except (ValueError, KeyError):
            return _json_response(start_response, "400 Bad Request",
                                  {"error": "invalid JSON body"})
        try:
            if path == "/embed":
                error = validate_embed_request(body)
                if error:
                    return _json_response(start_response, "400 Bad Request", {"error": error})
                vectors = client.embed(body["texts"], body["profile"])
                return _json_response(start_response, "200 OK", {"vectors": vectors})
            error = validate_score_request(body)
            if error:
                return _json_response(start_response, "400 Bad Request", {"error": error})
            scores = client.score(body["texts"], body["kind"])
            return _json_response(start_response, "200 OK", {"scores": scores})
        except Exception as exc:  # per-request failure -> 5xx with error body
            return _json_response(start_response, "500 Internal Server Error",
                                  {"error": str(exc)})

    return app


class _ThreadingWSGIServer(ThreadingMixIn, WSGIServer):
    daemon_threads = True


def start_server(host: str = "127.0.0.1", port: int = 0, client: MockScorerClient | None = None):
    """Start the mock scorer in a daemon thread; returns (server, base_url)."""
    server = make_server(host, port, create_app(client), server_class=_ThreadingWSGIServer)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://{host}:{server.server_port}"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Deterministic mock scorer service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8017)
    args = parser.parse_args(argv)
    server = make_server(args.host, args.port, create_app(), server_class=_ThreadingWSGIServer)
    print(f"mock scorer listening on http://{args.host}:{args.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
