"""Read-only HTTP API over a Markov model snapshot.

Routes::

    GET /knowledge/next?ap=A[&history=X,Y][&order=k][&raw=1]
    GET /knowledge/meta
    GET /healthz

The service holds one immutable model reference.  Reloading swaps the
reference, so a request always finishes against the model it started with.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

from .control import query_state
from .errors import CorruptSnapshot
from .knowstore import SNAPSHOT_VERSION, MarkovModel, restore, transition_distribution

log = logging.getLogger(__name__)

NEXT_PARAMS = {"ap", "history", "order", "raw"}


class BadRequest(ValueError):
    pass


def _single(params: dict[str, list[str]], name: str) -> str | None:
    values = params.get(name)
    if values is None:
        return None
    if len(values) != 1:
        raise BadRequest(f"parameter {name!r} given {len(values)} times")
    return values[0]


class KnowledgeService:
    def __init__(self, model: MarkovModel | None = None) -> None:
        self._model = model
        self.generation = 0 if model is None else 1

    @property
    def model(self) -> MarkovModel | None:
        return self._model

    def swap(self, model: MarkovModel) -> None:
        self._model = model
        self.generation += 1

    def load(self, path: str | Path) -> None:
        self.swap(restore(path))

    def handle_next(self, params: dict[str, list[str]]) -> tuple[int, dict]:
        model = self._model
        if model is None:
            return 503, {"error": "model not loaded"}
        try:
            unknown = set(params) - NEXT_PARAMS
            if unknown:
                raise BadRequest(f"unknown parameters: {sorted(unknown)}")
            ap = _single(params, "ap")
            if not ap:
                raise BadRequest("parameter 'ap' is required")
            history_raw = _single(params, "history")
            history = history_raw.split(",") if history_raw else []
            if any(not h for h in history):
                raise BadRequest("empty entry in 'history'")
            order_raw = _single(params, "order")
            if order_raw is None:
                order = 1 + len(history)
            else:
                try:
                    order = int(order_raw)
                except ValueError:
                    raise BadRequest("'order' must be an integer") from None
            raw = _single(params, "raw") or "0"
            if raw not in ("0", "1"):
                raise BadRequest("'raw' must be 0 or 1")
            if not 1 <= order <= model.max_order:
                raise BadRequest(f"order {order} outside 1..{model.max_order}")
            if len(history) + 1 > order:
                raise BadRequest(f"state arity {len(history) + 1} exceeds order {order}")
        except BadRequest as exc:
            return 400, {"error": str(exc)}
        state = query_state(ap, history, order)
        dist = transition_distribution(model, order, state)
        counts = model.counts(order, state)
        predictions = []
        for to, p in dist.entries:
            item = {"to": to, "probability": p}
            if raw == "1":
                item["count"] = counts[to]
            predictions.append(item)
        return 200, {
            "order": order,
            "state": list(state),
            "predictions": predictions,
            "support": dist.support_count,
        }

    def handle_meta(self) -> tuple[int, dict]:
        model = self._model
        if model is None:
            return 200, {"loaded": False, "snapshot_version": SNAPSHOT_VERSION, "generation": self.generation}
        return 200, {
            "loaded": True,
            "max_order": model.max_order,
            "states": {str(k): v for k, v in model.state_counts().items()},
            "total_records": model.total_records,
            "snapshot_version": SNAPSHOT_VERSION,
            "generation": self.generation,
        }

    def handle_health(self) -> tuple[int, dict]:
        if self._model is None:
            return 200, {"status": "ok", "degraded": True}
        return 200, {"status": "ok", "degraded": False}

    def route(self, target: str) -> tuple[int, dict]:
        parts = urlsplit(target)
        params = parse_qs(parts.query, keep_blank_values=True)
        if parts.path == "/knowledge/next":
            return self.handle_next(params)
        if parts.path == "/knowledge/meta":
            return self.handle_meta()
        if parts.path == "/healthz":
            return self.handle_health()
        return 404, {"error": f"no route for {parts.path}"}


class SnapshotWatcher(threading.Thread):
    """Polls a snapshot file and swaps the service model when it changes.

    A corrupt or half-copied file is logged and ignored; the previous model
    keeps serving.
    """

    def __init__(self, service: KnowledgeService, path: str | Path, interval: float = 1.0) -> None:
        super().__init__(daemon=True, name="snapshot-watcher")
        self.service = service
        self.path = Path(path)
        self.interval = interval
        self._stop = threading.Event()
        self._seen = self._stamp()

    def _stamp(self):
        try:
            st = os.stat(self.path)
        except FileNotFoundError:
            return None
        return (st.st_mtime_ns, st.st_size, st.st_ino)

    def check(self) -> bool:
        stamp = self._stamp()
        if stamp is None or stamp == self._seen:
            return False
        try:
            model = restore(self.path)
        except (CorruptSnapshot, OSError) as exc:
            log.warning("ignoring snapshot %s: %s", self.path, exc)
            return False
        self._seen = stamp
        self.service.swap(model)
        log.info("reloaded snapshot %s (generation %d)", self.path, self.service.generation)
        return True

    def run(self) -> None:
        while not self._stop.wait(self.interval):
            self.check()

    def stop(self) -> None:
        self._stop.set()


class _Handler(BaseHTTPRequestHandler):
    service: KnowledgeService
    protocol_version = "HTTP/1.1"

    def do_GET(self) -> None:  # noqa: N802
        status, payload = self.service.route(self.path)
        body = json.dumps(payload, separators=(",", ":")).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _not_allowed(self) -> None:
        body = json.dumps({"error": "read-only service"}).encode("utf-8")
        self.send_response(HTTPStatus.METHOD_NOT_ALLOWED)
        self.send_header("Allow", "GET")
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    do_POST = do_PUT = do_DELETE = do_PATCH = _not_allowed

    def log_message(self, format: str, *args) -> None:  # noqa: A002
        log.debug("%s - %s", self.address_string(), format % args)


def make_server(service: KnowledgeService, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    handler = type("KnowledgeHandler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def serve(snapshot: str | Path, port: int = 8080, host: str = "127.0.0.1", watch_interval: float = 1.0) -> None:
    """Serve ``snapshot`` until interrupted, reloading it when the file changes."""
    service = KnowledgeService()
    if Path(snapshot).exists():
        service.load(snapshot)
    else:
        log.warning("snapshot %s not found; serving degraded until it appears", snapshot)
    watcher = SnapshotWatcher(service, snapshot, watch_interval)
    watcher.start()
    server = make_server(service, host, port)
    log.info("serving %s on http://%s:%d", snapshot, host, server.server_address[1])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        watcher.stop()
        server.server_close()
