"""HTTP server speaking the detector wire protocol, backed by the mock detector."""
from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .detector import (OracleConfig, QueryLedger, TargetRegistry, decode_request,
                       encode_response, mock_detect)
from .errors import InvalidParameterError

logger = logging.getLogger(__name__)


class MockDetectorServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, config: OracleConfig, registry: TargetRegistry):
        self.config = config
        self.registry = registry
        self.ledger = QueryLedger()
        super().__init__(address, _Handler)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"


class _Handler(BaseHTTPRequestHandler):
    server: MockDetectorServer

    def log_message(self, fmt, *args):
        logger.debug("%s - %s", self.address_string(), fmt % args)

    def _reply(self, status: int, doc: dict):
        payload = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        if self.path.rstrip("/") == "/health":
            self._reply(200, {"status": "ok", "queries": self.server.ledger.count})
        else:
            self._reply(404, {"error": "not found"})

    def do_POST(self):
        if self.path.rstrip("/") != "/detect":
            self._reply(404, {"error": "not found"})
            return
        try:
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length))
            frame, image_id = decode_request(body)
        except (ValueError, InvalidParameterError) as exc:
            self._reply(400, {"error": str(exc)})
            return
        dets = mock_detect(frame, self.server.config, self.server.registry, image_id)
        self.server.ledger.increment()
        self._reply(200, encode_response(dets))


def make_server(config: OracleConfig, registry: TargetRegistry,
                host: str = "127.0.0.1", port: int = 0) -> MockDetectorServer:
    """Bind (port 0 picks a free port). Raises ``OSError`` when the port is taken."""
    return MockDetectorServer((host, port), config, registry)


def serve_in_thread(server: MockDetectorServer) -> threading.Thread:
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    return t


def serve_forever(server: MockDetectorServer, ready: Optional[callable] = None):
    if ready is not None:
        ready(server)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
