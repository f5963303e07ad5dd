"""HTTP retrieval service over a frozen graph.

Endpoints:
  POST /retrieve  {"query": str, "k": int, "channels": [...]} -> {"items": [...]}
  GET  /stats     -> graph counts and header fields
  GET  /node/{id} -> node record with neighbors (404 when unknown)

The graph is immutable after load, so any number of concurrent requests is
safe; while the graph is still loading every request gets 503.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import errors
from .retriever import CHANNELS, Retriever

logger = logging.getLogger(__name__)


class ServiceState:
    """Shared state behind the handler; retriever is None until loaded."""

    def __init__(self, retriever: Retriever | None = None):
        self._lock = threading.Lock()
        self._retriever = retriever

    @property
    def retriever(self) -> Retriever | None:
        with self._lock:
            return self._retriever

    def set_retriever(self, retriever: Retriever) -> None:
        with self._lock:
            self._retriever = retriever


class _Handler(BaseHTTPRequestHandler):
    server_version = "pkgraph"

    def log_message(self, fmt, *args):
        logger.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _state(self) -> ServiceState:
        return self.server.state  # type: ignore[attr-defined]

    def do_GET(self):
        retriever = self._state().retriever
        if retriever is None:
            self._send(503, {"error": "graph is loading"})
            return
        pkg = retriever.pkg
        if self.path == "/stats":
            self._send(200, pkg.stats())
        elif self.path.startswith("/node/"):
            node_id = self.path[len("/node/"):]
            if node_id in pkg.entities:
                ent = pkg.entities[node_id]
                self._send(200, {
                    "chunks": sorted(ent.source_chunk_ids),
                    "description": ent.description,
                    "entity_type": ent.entity_type,
                    "id": ent.id, "kind": "entity", "name": ent.name,
                    "neighbors": pkg.neighbors(node_id),
                    "normalized_name": ent.normalized_name,
                })
            elif node_id in pkg.chunks:
                chunk = pkg.chunks[node_id]
                self._send(200, {
                    "doc_id": chunk.doc_id,
                    "entities": sorted(pkg.chunk_entities.get(node_id, ())),
                    "id": chunk.id, "kind": "chunk",
                    "span": list(chunk.span), "text": chunk.text,
                })
            else:
                self._send(404, {"error": f"unknown node {node_id!r}"})
        else:
            self._send(404, {"error": f"unknown path {self.path!r}"})

    def do_POST(self):
        retriever = self._state().retriever
        if retriever is None:
            self._send(503, {"error": "graph is loading"})
            return
        if self.path != "/retrieve":
            self._send(404, {"error": f"unknown path {self.path!r}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length).decode("utf-8"))
            query = body["query"]
            if not isinstance(query, str) or not query.strip():
                raise ValueError("query must be a non-empty string")
            k = body.get("k", 10)
            if not isinstance(k, int) or k < 1:
                raise ValueError("k must be a positive integer")
            channels = tuple(body.get("channels", list(CHANNELS)))
            for name in channels:
                if name not in CHANNELS:
                    raise ValueError(f"unknown channel {name!r}")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError,
                UnicodeDecodeError) as exc:
            self._send(400, {"error": f"malformed request: {exc}"})
            return
        try:
            items, flags = retriever.retrieve(query, channels, k=k)
        except errors.PkgError as exc:
            self._send(400, {"error": str(exc)})
            return
        self._send(200, {"flags": flags, "items": [i.to_dict() for i in items]})


def make_server(host: str, port: int,
                state: ServiceState) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), _Handler)
    server.daemon_threads = True
    server.state = state  # type: ignore[attr-defined]
    return server


def serve(host: str, port: int, retriever: Retriever) -> None:
    """Blocking serve loop used by the CLI."""
    state = ServiceState(retriever)
    server = make_server(host, port, state)
    logger.info("serving on %s:%d", host, server.server_address[1])
    try:
        server.serve_forever()
    finally:
        server.server_close()
