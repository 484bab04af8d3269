"""Harness-hosted subscriber endpoints: plain-JSON brokers whose receipts
are timestamped for the propagation-delay measurement."""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


@dataclass
class EnvelopeReceipt:
    receipt_ms: int
    channel: str
    epoch_ms: int
    texts: list  # tweet texts carried by the envelope (deduplicated)
    item_count: int


@dataclass
class ReceiptLog:
    receipts: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def add(self, receipt: EnvelopeReceipt) -> None:
        with self.lock:
            self.receipts.append(receipt)

    def snapshot(self) -> list:
        with self.lock:
            return list(self.receipts)


class SubscriberSink:
    """One HTTP server; envelopes are routed to logs by channel name."""

    def __init__(self, host: str = "127.0.0.1"):
        self.logs: dict[str, ReceiptLog] = {}
        sink = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                receipt_ms = int(time.time() * 1000)
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                try:
                    sink._record(receipt_ms, body)
                finally:
                    self.send_response(200)
                    self.send_header("Content-Length", "0")
                    self.end_headers()

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer((host, 0), Handler)
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/"

    def log_for(self, channel: str) -> ReceiptLog:
        return self.logs.setdefault(channel, ReceiptLog())

    def _record(self, receipt_ms: int, body: bytes) -> None:
        envelope = json.loads(body)
        channel = envelope.get("channelName", "?")
        texts = []
        seen = set()
        items = envelope.get("results", ())
        for item in items:
            content = item.get("result", {}).get("tweet_content", {})
            text = content.get("text")
            if text is not None and text not in seen:
                seen.add(text)
                texts.append(text)
        self.log_for(channel).add(
            EnvelopeReceipt(
                receipt_ms=receipt_ms,
                channel=channel,
                epoch_ms=envelope.get("channelExecutionEpochTime", 0),
                texts=texts,
                item_count=len(items),
            )
        )

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
