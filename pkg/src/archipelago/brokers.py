"""Broker registry entries and the delivery hub.

Brokers are HTTP endpoints registered in the catalog. The hub keeps one
bounded FIFO queue and one worker per broker (a slow broker can never stall
channel execution, and per-broker delivery order is envelope-creation
order). Typed brokers receive canonical typed text (`application/x-adm`),
untyped ones plain JSON (`application/json`). A non-2xx response or
connection failure is retried with exponential backoff, then the payload is
dead-lettered.
"""

from __future__ import annotations

import threading
import time
import uuid as _uuid
from collections import deque
from dataclasses import dataclass, field
from urllib.parse import urlparse

import requests

from archipelago.adm import Datetime, serialize_adm, to_general_json


class BrokerError(Exception):
    pass


@dataclass
class Broker:
    name: str
    dataverse: str
    endpoint: str
    broker_type: str = "general"  # general | BAD

    def __post_init__(self):
        parsed = urlparse(self.endpoint)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise BrokerError(f"broker endpoint must be an absolute URL: {self.endpoint!r}")
        if self.broker_type not in ("general", "BAD"):
            raise BrokerError(f"unknown broker-type {self.broker_type!r}")


def broker_from_config(name: str, dataverse: str, endpoint: str, config: dict) -> Broker:
    broker_type = config.get("broker-type", "general") if config else "general"
    return Broker(name, dataverse, endpoint, broker_type)


@dataclass
class Envelope:
    """One per (broker, channel execution): the push-mode delivery unit.

    ``delivery_ms`` is stamped once when the execution hands its envelopes
    to the hub, so sibling envelopes of one execution carry the same
    delivery time regardless of per-broker queueing."""

    dataverse: str
    channel: str
    epoch_ms: int
    items: list  # of (result_value, subscription_id)
    delivery_ms: int | None = None

    def build(self, delivery_ms: int) -> dict:
        execution_time = Datetime(self.epoch_ms)
        delivery_time = Datetime(delivery_ms)
        return {
            "dataverseName": self.dataverse,
            "channelName": self.channel,
            "channelExecutionEpochTime": self.epoch_ms,
            "results": [
                {
                    "result": result,
                    "channelExecutionTime": execution_time,
                    "subscriptionId": sub_id,
                    "deliveryTime": delivery_time,
                }
                for result, sub_id in self.items
            ],
        }


@dataclass
class PullNotice:
    """Small notice sent instead of results for pull-mode channels."""

    dataverse: str
    channel: str
    epoch_ms: int
    handle: _uuid.UUID

    def build(self, delivery_ms: int) -> dict:
        return {
            "dataverseName": self.dataverse,
            "channelName": self.channel,
            "channelExecutionEpochTime": self.epoch_ms,
            "handle": self.handle,
        }


@dataclass
class _Queue:
    broker: Broker
    items: deque = field(default_factory=deque)
    condition: threading.Condition = field(default_factory=threading.Condition)
    thread: threading.Thread | None = None
    closed: bool = False
    in_flight: bool = False


class BrokerHub:
    """Asynchronous per-broker delivery with bounded queues."""

    def __init__(
        self,
        retry_backoffs=(0.5, 1.0, 2.0),
        queue_limit: int = 1024,
        request_timeout: float = 5.0,
        on_dead_letter=None,
        on_delivered=None,
        clock=time.time,
    ):
        self.retry_backoffs = tuple(retry_backoffs)
        self.queue_limit = queue_limit
        self.request_timeout = request_timeout
        self.on_dead_letter = on_dead_letter
        self.on_delivered = on_delivered
        self.clock = clock
        self._queues: dict[tuple, _Queue] = {}
        self._lock = threading.Lock()
        self._session = requests.Session()

    def enqueue(self, broker: Broker, payload) -> None:
        """Queue an Envelope or PullNotice for delivery."""
        key = (broker.dataverse, broker.name)
        with self._lock:
            q = self._queues.get(key)
            if q is None or q.closed:
                q = _Queue(broker)
                q.thread = threading.Thread(
                    target=self._drain, args=(q,), daemon=True,
                    name=f"deliver-{broker.dataverse}.{broker.name}",
                )
                self._queues[key] = q
                q.thread.start()
        with q.condition:
            if len(q.items) >= self.queue_limit:
                oldest = q.items.popleft()
                self._dead_letter(broker, oldest, "delivery queue overflow")
            q.items.append(payload)
            q.condition.notify()

    def remove_queue(self, dataverse: str, name: str) -> None:
        with self._lock:
            q = self._queues.pop((dataverse, name), None)
        if q is not None:
            with q.condition:
                q.closed = True
                q.condition.notify()

    def stop(self) -> None:
        with self._lock:
            queues = list(self._queues.values())
            self._queues.clear()
        for q in queues:
            with q.condition:
                q.closed = True
                q.condition.notify()
        for q in queues:
            if q.thread is not None:
                q.thread.join(timeout=2)

    def flush(self, timeout: float = 10.0) -> bool:
        """Wait until all queues are empty (for tests and orderly shutdown)."""
        deadline = time.time() + timeout
        while time.time() < deadline:
            with self._lock:
                busy = any(q.items or q.in_flight for q in self._queues.values())
            if not busy:
                return True
            time.sleep(0.01)
        return False

    # -- delivery ------------------------------------------------------------------

    def _drain(self, q: _Queue) -> None:
        while True:
            with q.condition:
                while not q.items and not q.closed:
                    q.condition.wait(timeout=0.5)
                if q.closed and not q.items:
                    return
                payload = q.items.popleft()
                q.in_flight = True
            try:
                self._deliver(q.broker, payload)
            finally:
                with q.condition:
                    q.in_flight = False

    def _deliver(self, broker: Broker, payload) -> None:
        delivery_ms = getattr(payload, "delivery_ms", None)
        if delivery_ms is None:
            delivery_ms = int(self.clock() * 1000)
        value = payload.build(delivery_ms)
        if broker.broker_type == "BAD":
            body = serialize_adm(value).encode("utf-8")
            content_type = "application/x-adm"
        else:
            body = to_general_json(value).encode("utf-8")
            content_type = "application/json"
        headers = {"Content-Type": content_type}
        error = None
        for attempt, backoff in enumerate((0.0,) + self.retry_backoffs):
            if backoff:
                time.sleep(backoff)
            try:
                response = self._session.post(
                    broker.endpoint, data=body, headers=headers,
                    timeout=self.request_timeout,
                )
                if 200 <= response.status_code < 300:
                    if self.on_delivered is not None:
                        self.on_delivered(broker, value)
                    return
                error = f"HTTP {response.status_code}"
            except requests.RequestException as exc:
                error = str(exc) or type(exc).__name__
        self._dead_letter(broker, payload, error or "delivery failed")

    def _dead_letter(self, broker: Broker, payload, error: str) -> None:
        if self.on_dead_letter is None:
            return
        value = payload.build(int(self.clock() * 1000))
        self.on_dead_letter(
            {
                "kind": "delivery_failure",
                "broker": broker.name,
                "dataverse": broker.dataverse,
                "endpoint": broker.endpoint,
                "error": error,
                "payload": serialize_adm(value),
                "failed_at": Datetime(int(self.clock() * 1000)),
            }
        )
