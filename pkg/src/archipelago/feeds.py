"""Ingestion feeds and bridges.

A feed owns one intake endpoint: a TCP listener taking newline-delimited
UTF-8 records (socket adapter) or an HTTP endpoint taking one record per
POST body (http adapter). Records are parsed per the feed's declared format,
optionally enriched through the connected function (dynamic feeds), and
inserted into the connected dataset; a parse or enrichment failure
dead-letters the record and the feed keeps running.

A feed whose config carries the remote-channel keys is a bridge: starting
it registers a typed broker pointing at this feed's endpoint on the remote
island and subscribes to the remote channel once per packed argument list;
stopping it unsubscribes and removes the broker, so the remote island stops
computing for it. The binding (broker name, subscription ids, state) is
persisted so a restart can reconcile."""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import requests

from archipelago.adm import AdmError, Datetime, parse_adm_text
from archipelago.ddl.nodes import (
    CreateBroker,
    DropBroker,
    Subscribe,
    Unsubscribe,
    UseDataverse,
    render_statement,
)
from archipelago.ddl.params import ParameterSyntaxError, parse_channel_parameters
from archipelago.engine import EvalError
from archipelago.storage import StorageError

log = logging.getLogger(__name__)

BRIDGE_KEYS = ("bad-host", "bad-channel", "bad-channel-parameters", "bad-dataverse")


class FeedError(Exception):
    pass


@dataclass(frozen=True)
class BridgeSpec:
    remote_host: str  # host:port of the remote island's control plane
    channel: str
    parameters: str  # packed argument lists, still encoded
    dataverse: str


@dataclass(frozen=True)
class FeedConfig:
    adapter: str  # socket_adapter | http_adapter
    host: str
    port: int
    format: str  # json | adm
    type_name: str | None
    dynamic: bool
    bridge: BridgeSpec | None
    raw: dict

    @classmethod
    def from_with_map(cls, config: dict) -> "FeedConfig":
        adapter = config.get("adapter-name")
        if adapter not in ("socket_adapter", "http_adapter"):
            raise FeedError(f"unknown adapter-name {adapter!r}")
        addresses = config.get("addresses") or config.get("sockets")
        if not isinstance(addresses, str) or ":" not in addresses:
            raise FeedError("feed config needs 'addresses' (or 'sockets') as host:port")
        host, _, port_text = addresses.rpartition(":")
        try:
            port = int(port_text)
        except ValueError:
            raise FeedError(f"malformed feed port {port_text!r}") from None
        fmt = str(config.get("format", "JSON")).lower()
        if fmt not in ("json", "adm"):
            raise FeedError(f"unsupported feed format {config.get('format')!r}")
        dynamic = bool(config.get("dynamic", False))
        present = [k for k in BRIDGE_KEYS if k in config]
        bridge = None
        if present:
            missing = [k for k in BRIDGE_KEYS if k not in config]
            if missing:
                raise FeedError(
                    f"bridge config incomplete: missing {', '.join(missing)}"
                )
            if adapter != "http_adapter" or fmt != "adm":
                raise FeedError(
                    "a bridge feed must use http_adapter with format ADM"
                )
            try:
                parse_channel_parameters(config["bad-channel-parameters"])
            except ParameterSyntaxError as exc:
                raise FeedError(f"bad-channel-parameters: {exc}") from None
            bridge = BridgeSpec(
                remote_host=config["bad-host"],
                channel=config["bad-channel"],
                parameters=config["bad-channel-parameters"],
                dataverse=config["bad-dataverse"],
            )
        return cls(
            adapter=adapter, host=host, port=port, format=fmt,
            type_name=config.get("type-name"), dynamic=dynamic,
            bridge=bridge, raw=dict(config),
        )


@dataclass
class BridgeBinding:
    state: str = "stopped"  # stopped | running | stopped-dirty
    remote_base: str = ""
    remote_broker: str = ""
    subscription_ids: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "state": self.state,
            "remote_base": self.remote_base,
            "remote_broker": self.remote_broker,
            "subscription_ids": list(self.subscription_ids),
        }

    @classmethod
    def from_json(cls, data: dict) -> "BridgeBinding":
        return cls(
            state=data.get("state", "stopped"),
            remote_base=data.get("remote_base", ""),
            remote_broker=data.get("remote_broker", ""),
            subscription_ids=list(data.get("subscription_ids", ())),
        )


class _RemoteIsland:
    """Statements-API client for the island on the far side of a bridge."""

    def __init__(self, host: str, timeout: float = 8.0):
        base = host if host.startswith("http") else f"http://{host}"
        self.base = base.rstrip("/")
        self.timeout = timeout
        self.session = requests.Session()

    def execute(self, statements: list) -> list:
        text = "".join(render_statement(s) + ";\n" for s in statements)
        response = self.session.post(
            f"{self.base}/statements", data=text.encode("utf-8"),
            headers={"Content-Type": "text/plain"}, timeout=self.timeout,
        )
        body = response.json()
        if response.status_code != 200:
            raise FeedError(
                f"remote statement failed: {body.get('error', response.status_code)}"
            )
        return body

    def status(self) -> dict:
        response = self.session.get(f"{self.base}/status", timeout=self.timeout)
        response.raise_for_status()
        return response.json()


class FeedRuntime:
    """One declared feed and, when running, its intake endpoint."""

    def __init__(self, island, dataverse: str, name: str, config: FeedConfig):
        self.island = island
        self.dataverse = dataverse
        self.name = name
        self.config = config
        self.dataset: str | None = None
        self.apply_function: str | None = None
        self.running = False
        self.binding = BridgeBinding() if config.bridge else None
        self._server = None
        self._threads: list = []
        self._lock = threading.Lock()  # serializes start/stop control actions

    @property
    def key(self) -> str:
        return f"{self.dataverse}.{self.name}"

    # -- wiring ------------------------------------------------------------------

    def connect(self, dataset: str, apply_function: str | None) -> None:
        if self.running:
            raise FeedError(f"feed {self.name} is running; stop it to reconnect")
        if apply_function is not None and not self.config.dynamic:
            raise FeedError(
                f"feed {self.name} is static; only dynamic feeds apply functions"
            )
        self.island.catalog.get_dataset(self.dataverse, dataset)
        if apply_function is not None:
            if self.island.resolve_function(self.dataverse, apply_function) is None:
                raise FeedError(f"unknown function {apply_function!r}")
        self.dataset = dataset
        self.apply_function = apply_function

    def start(self, replay: bool = False) -> None:
        with self._lock:
            if self.running:
                raise FeedError(f"feed {self.name} is already running")
            if self.dataset is None:
                raise FeedError(f"feed {self.name} is not connected to a dataset")
            if replay:
                self.running = True
                return
            self._open_listener()
            if self.config.bridge is not None:
                try:
                    self._bridge_up()
                except Exception:
                    self._close_listener()
                    raise
            self.running = True

    def stop(self, replay: bool = False) -> None:
        with self._lock:
            if not self.running:
                raise FeedError(f"feed {self.name} is not running")
            self.running = False
            if replay:
                return
            self._close_listener()
            if self.config.bridge is not None:
                try:
                    self._bridge_down()
                except Exception as exc:
                    log.warning(
                        "feed %s: remote teardown failed (%s); will reconcile",
                        self.key, exc,
                    )
                    self.binding.state = "stopped-dirty"
                    self.island.save_bridges()
                    self.island.schedule_bridge_reconcile(self)

    def open_listener_after_replay(self) -> None:
        with self._lock:
            if self.running and self._server is None:
                self._open_listener()

    def shutdown(self) -> None:
        """Process shutdown: close the intake without touching remote state."""
        with self._lock:
            self._close_listener()

    # -- bridge choreography ---------------------------------------------------------

    def _broker_name(self) -> str:
        return f"bridge_{self.island.name}_{self.name}"

    def _endpoint_url(self) -> str:
        return f"http://{self.config.host}:{self.config.port}/"

    def _bridge_up(self) -> None:
        spec = self.config.bridge
        remote = _RemoteIsland(spec.remote_host)
        broker_name = self._broker_name()
        self._scrub_stale_remote_state(remote, spec, broker_name)
        use = UseDataverse(spec.dataverse)
        remote.execute([
            use,
            CreateBroker(broker_name, self._endpoint_url(), {"broker-type": "BAD"}),
        ])
        created: list[str] = []
        try:
            for arguments in parse_channel_parameters(spec.parameters):
                result = remote.execute([
                    use, Subscribe(spec.channel, list(arguments), broker_name),
                ])
                created.append(result[-1]["subscriptionId"])
        except Exception:
            for sub_id in created:
                self._quietly(remote, [use, Unsubscribe(sub_id)])
            self._quietly(remote, [use, DropBroker(broker_name)])
            raise
        self.binding = BridgeBinding(
            state="running", remote_base=remote.base,
            remote_broker=broker_name, subscription_ids=created,
        )
        self.island.save_bridges()

    def _bridge_down(self) -> None:
        spec = self.config.bridge
        remote = _RemoteIsland(spec.remote_host)
        use = UseDataverse(spec.dataverse)
        for sub_id in list(self.binding.subscription_ids):
            remote.execute([use, Unsubscribe(sub_id)])
            self.binding.subscription_ids.remove(sub_id)
        remote.execute([use, DropBroker(self.binding.remote_broker)])
        self.binding.state = "stopped"
        self.binding.remote_broker = ""
        self.island.save_bridges()

    def _scrub_stale_remote_state(self, remote, spec, broker_name) -> None:
        """Remove leftovers of a previous crash so a start is idempotent."""
        try:
            status = remote.status()
        except requests.RequestException as exc:
            raise FeedError(f"remote island unreachable: {exc}") from None
        dv = status.get("dataverses", {}).get(spec.dataverse)
        if not dv or broker_name not in dv.get("brokers", {}):
            return
        use = UseDataverse(spec.dataverse)
        for channel in dv.get("channels", {}).values():
            for sub in channel.get("subscriptions", ()):
                if sub.get("broker") == broker_name:
                    self._quietly(remote, [use, Unsubscribe(sub["id"])])
        self._quietly(remote, [use, DropBroker(broker_name)])

    def reconcile(self) -> bool:
        """Bring remote state in line with the binding; True when settled."""
        spec = self.config.bridge
        if spec is None or self.binding is None:
            return True
        try:
            if self.binding.state == "stopped-dirty":
                self._bridge_down()
            elif self.binding.state == "running":
                remote = _RemoteIsland(spec.remote_host)
                status = remote.status()
                dv = status.get("dataverses", {}).get(spec.dataverse, {})
                if self.binding.remote_broker not in dv.get("brokers", {}):
                    self._bridge_up()
            return True
        except Exception as exc:
            log.debug("feed %s: reconcile pending (%s)", self.key, exc)
            return False

    @staticmethod
    def _quietly(remote, statements) -> None:
        try:
            remote.execute(statements)
        except Exception:
            pass

    # -- intake ------------------------------------------------------------------------

    def _open_listener(self) -> None:
        if self.config.adapter == "socket_adapter":
            self._server = _LineSocketServer(
                (self.config.host, self.config.port), self
            )
        else:
            self._server = _FeedHttpServer((self.config.host, self.config.port), self)
        thread = threading.Thread(
            target=self._server.serve_forever, daemon=True,
            name=f"feed-{self.key}",
        )
        thread.start()
        self._threads.append(thread)

    def _close_listener(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def ingest_text(self, text: str) -> bool:
        """Parse, optionally enrich, and store one record; False means the
        record was dead-lettered."""
        try:
            value = parse_adm_text(text)
            if self.apply_function is not None:
                fn = self.island.resolve_function(self.dataverse, self.apply_function)
                if fn is None:
                    raise EvalError(f"unknown function {self.apply_function!r}")
                value = self.island.enrich(self.dataverse, fn, value)
            self.island.insert_into(self.dataverse, self.dataset, [value])
            return True
        except (AdmError, EvalError, StorageError, ValueError) as exc:
            self.island.dead_letter({
                "kind": "ingest_failure",
                "feed": self.name,
                "dataverse": self.dataverse,
                "error": str(exc),
                "payload": text[:4096],
                "failed_at": Datetime(self.island.now_ms()),
            })
            return False


class _LineSocketServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, feed: FeedRuntime):
        self.feed = feed
        super().__init__(address, _LineHandler)


class _LineHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if line:
                self.server.feed.ingest_text(line)


class _FeedHttpServer(ThreadingHTTPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, feed: FeedRuntime):
        self.feed = feed
        super().__init__(address, _FeedHttpHandler)


class _FeedHttpHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"  # keep-alive: high-rate posters reuse one connection

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length).decode("utf-8", errors="replace")
        self.server.feed.ingest_text(body)
        self.send_response(200)
        self.send_header("Content-Length", "0")
        self.end_headers()

    def log_message(self, *args):
        pass
