"""HTTP control plane for one island.

Endpoints:
    POST /statements   semicolon-terminated statements (text/plain in,
                       JSON array of per-statement results out; a failing
                       statement stops the batch with a 400 and position)
    POST /query        one ad-hoc query (optionally preceded by USE dv;)
    GET  /pull/<id>    fetch parked pull-mode results by handle
    GET  /events       server-sent events: dataset_insert, notification,
                       15 s heartbeats
    GET  /status       island name plus a full catalog summary
    POST /sink         accepts and discards any body (a throwaway broker
                       endpoint for consoles and demos)

Responses are JSON (the control plane is not format-switched); permissive
CORS headers let a browser console drive the island directly."""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from archipelago.adm import to_general_json
from archipelago.ddl.lexer import ParseError
from archipelago.ddl.nodes import Query, UseDataverse
from archipelago.ddl.parser import parse_statements
from archipelago.engine import AnalysisError, EvalError
from archipelago.island import Island, StatementError
from archipelago.storage import StorageError

log = logging.getLogger(__name__)

HEARTBEAT_SECONDS = 15.0


class IslandService:
    """Threaded HTTP server bound to one island."""

    def __init__(self, island: Island, host: str | None = None, port: int | None = None):
        self.island = island
        host = host if host is not None else island.config.host
        port = port if port is not None else island.config.port
        service = self

        class Handler(_Handler):
            pass

        Handler.service = service
        self._server = ThreadingHTTPServer((host, port), Handler)
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        host = self._server.server_address[0]
        return f"http://{host}:{self.port}"

    def start(self) -> "IslandService":
        self._thread = threading.Thread(
            target=self._server.serve_forever, daemon=True,
            name=f"service-{self.island.name}",
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()


class _Handler(BaseHTTPRequestHandler):
    service: IslandService = None
    protocol_version = "HTTP/1.1"

    # -- plumbing ------------------------------------------------------------------

    def _cors(self):
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")

    def _send_json(self, status: int, payload) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self._cors()
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_body(self) -> str:
        length = int(self.headers.get("Content-Length", 0))
        return self.rfile.read(length).decode("utf-8", errors="replace")

    def log_message(self, *args):
        pass

    # -- routes --------------------------------------------------------------------

    def do_OPTIONS(self):
        self.send_response(204)
        self._cors()
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_POST(self):
        island = self.service.island
        if self.path == "/statements":
            try:
                results = island.execute_statements(self._read_body())
                self._send_json(200, results)
            except StatementError as exc:
                self._send_json(400, {
                    "error": str(exc),
                    "statement_index": exc.index,
                    "line": exc.line,
                    "col": exc.col,
                })
            return
        if self.path == "/query":
            self._handle_query()
            return
        if self.path == "/sink":
            self._read_body()
            self.send_response(204)
            self._cors()
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        self._send_json(404, {"error": f"no such endpoint {self.path}"})

    def _handle_query(self):
        island = self.service.island
        text = self._read_body().strip()
        if not text.endswith(";"):
            text += ";"
        try:
            stmts = parse_statements(text)
        except ParseError as exc:
            self._send_json(400, {"error": str(exc), "line": exc.line, "col": exc.col})
            return
        dv_name = "Default"
        query = None
        for stmt in stmts:
            if isinstance(stmt, UseDataverse):
                dv_name = stmt.name
            elif isinstance(stmt, Query) and query is None:
                query = stmt
            else:
                self._send_json(400, {"error": "body must be one query, optionally after USE"})
                return
        if query is None:
            self._send_json(400, {"error": "no query in request body"})
            return
        try:
            rows = island.run_query(query.ast, dv_name)
        except (AnalysisError, EvalError, StorageError) as exc:
            self._send_json(400, {"error": str(exc)})
            return
        self._send_json(200, {"results": json.loads(to_general_json(rows))})

    def do_GET(self):
        island = self.service.island
        if self.path == "/status":
            self._send_json(200, island.status())
            return
        if self.path.startswith("/pull/"):
            handle = self.path[len("/pull/"):]
            status, rows = island.pull_store.fetch(handle, island.now_ms())
            if status == "ok":
                self._send_json(200, {"results": json.loads(to_general_json(rows))})
            elif status == "gone":
                self._send_json(410, {"error": "results expired"})
            else:
                self._send_json(404, {"error": "unknown handle"})
            return
        if self.path == "/events":
            self._stream_events()
            return
        self._send_json(404, {"error": f"no such endpoint {self.path}"})

    def _stream_events(self):
        island = self.service.island
        consumer = island.events.attach()
        try:
            self.send_response(200)
            self._cors()
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Connection", "close")
            self.close_connection = True
            self.end_headers()
            while True:
                item = consumer.pop(timeout=HEARTBEAT_SECONDS)
                if item is None:
                    self.wfile.write(b": heartbeat\n\n")
                    self.wfile.flush()
                    continue
                event_type, payload = item
                data = to_general_json(payload)
                chunk = f"event: {event_type}\ndata: {data}\n\n"
                self.wfile.write(chunk.encode("utf-8"))
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            island.events.detach(consumer)
