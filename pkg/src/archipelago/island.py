"""One island: the statement executor wiring storage, channels, brokers,
feeds, and the event stream together, with crash recovery.

Persistence model: every control statement that mutates the catalog is
appended to a metadata journal after it succeeds (with any generated ids),
dataset contents live in per-dataset logs, channel watermarks and bridge
bindings in their own small files. Boot replays the journal to rebuild the
catalog (datasets reload their logs as they are recreated), overlays
watermarks and bridge state, then reopens listeners and timers for whatever
was running."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid as _uuid
from dataclasses import dataclass, field

from archipelago.adm import AdmError, Value, to_general_json
from archipelago.brokers import Broker, BrokerError, BrokerHub, broker_from_config
from archipelago.channels import Channel, ChannelError, PullStore
from archipelago.ddl import nodes
from archipelago.ddl.lexer import ParseError
from archipelago.ddl.parser import parse_statements
from archipelago.engine import (
    MISSING,
    AnalysisError,
    EvalError,
    ExecutionContext,
    RESERVED_FUNCTION_NAMES,
    UserFunction,
    WordList,
    compile_query,
    enrich_record,
    execute_query,
    _Evaluator,
    QueryPlan,
)
from archipelago.feeds import FeedConfig, FeedError, FeedRuntime, BridgeBinding
from archipelago.storage import (
    Catalog,
    FieldSpec,
    StorageError,
    TypeDef,
    WatermarkStore,
    normalize_type_name,
)

log = logging.getLogger(__name__)

DEAD_LETTERS = "__dead_letters"


class StatementError(Exception):
    """A statement failed; earlier statements in the batch remain applied."""

    def __init__(self, message: str, index: int, line: int | None = None,
                 col: int | None = None):
        super().__init__(message)
        self.index = index
        self.line = line
        self.col = col


@dataclass
class IslandConfig:
    name: str = "island"
    host: str = "127.0.0.1"
    port: int = 0
    data_dir: str | None = None
    threat_word_list: str | None = None
    channel_period_override: str | None = None
    retry_backoffs: tuple = (0.5, 1.0, 2.0)
    broker_queue_limit: int = 1024
    pull_ttl_periods: int = 10
    durable: bool = True
    request_timeout: float = 5.0
    start_timers: bool = True

    @classmethod
    def from_mapping(cls, data: dict) -> "IslandConfig":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {}
        for key, value in data.items():
            attr = key.replace("-", "_")
            if attr not in known:
                raise ValueError(f"unknown island config key {key!r}")
            if attr == "retry_backoffs":
                value = tuple(float(x) for x in value)
            kwargs[attr] = value
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str) -> "IslandConfig":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as f:
            return cls.from_mapping(tomllib.load(f))


class EventBus:
    """Fan-out of island events to live stream consumers; slow consumers
    drop oldest rather than block producers."""

    def __init__(self, depth: int = 1024):
        self._lock = threading.Lock()
        self._depth = depth
        self._consumers: list = []

    def attach(self):
        consumer = _EventQueue(self._depth)
        with self._lock:
            self._consumers.append(consumer)
        return consumer

    def detach(self, consumer) -> None:
        with self._lock:
            if consumer in self._consumers:
                self._consumers.remove(consumer)

    def emit(self, event_type: str, payload: Value) -> None:
        with self._lock:
            consumers = list(self._consumers)
        for consumer in consumers:
            consumer.push(event_type, payload)


class _EventQueue:
    def __init__(self, depth: int):
        self._condition = threading.Condition()
        self._items: list = []
        self._depth = depth

    def push(self, event_type: str, payload: Value) -> None:
        with self._condition:
            if len(self._items) >= self._depth:
                self._items.pop(0)
            self._items.append((event_type, payload))
            self._condition.notify()

    def pop(self, timeout: float):
        with self._condition:
            if not self._items:
                self._condition.wait(timeout=timeout)
            if self._items:
                return self._items.pop(0)
            return None


class Island:
    def __init__(self, config: IslandConfig):
        self.config = config
        self.name = config.name
        self.clock = time.time
        data_dir = config.data_dir
        if data_dir:
            os.makedirs(data_dir, exist_ok=True)
        self.catalog = Catalog(data_dir, durable=config.durable)
        self.wordlist = (
            WordList.from_file(config.threat_word_list)
            if config.threat_word_list else None
        )
        self.watermarks = WatermarkStore(
            os.path.join(data_dir, "watermarks.json") if data_dir else None
        )
        self.pull_store = PullStore()
        self.events = EventBus()
        self.hub = BrokerHub(
            retry_backoffs=config.retry_backoffs,
            queue_limit=config.broker_queue_limit,
            request_timeout=config.request_timeout,
            on_dead_letter=self.dead_letter,
            on_delivered=self._on_delivered,
            clock=self.clock,
        )
        self._journal_path = (
            os.path.join(data_dir, "metadata.jsonl") if data_dir else None
        )
        self._bridges_path = (
            os.path.join(data_dir, "bridges.json") if data_dir else None
        )
        self._journal_file = None
        self._exec_lock = threading.RLock()
        self._replaying = False
        self._reconcilers: list = []
        self._stopping = threading.Event()

    # -- lifecycle --------------------------------------------------------------------

    def boot(self) -> "Island":
        self._replay_journal()
        self._load_bridges()
        if self._journal_path:
            self._journal_file = open(self._journal_path, "a", encoding="utf-8")
        for dv in self.catalog.dataverses():
            for feed in dv.feeds.values():
                if feed.running:
                    feed.open_listener_after_replay()
                if feed.binding is not None and feed.binding.state in (
                    "running", "stopped-dirty",
                ):
                    self.schedule_bridge_reconcile(feed)
            if self.config.start_timers:
                for channel in dv.channels.values():
                    channel.start_timer()
        return self

    def shutdown(self) -> None:
        self._stopping.set()
        for dv in self.catalog.dataverses():
            for channel in dv.channels.values():
                channel.stop_timer()
            for feed in dv.feeds.values():
                feed.shutdown()
        self.hub.stop()
        self.catalog.close()
        if self._journal_file is not None:
            self._journal_file.close()
            self._journal_file = None

    # -- journal ----------------------------------------------------------------------

    def _journal(self, dataverse: str, stmt, extra: dict | None = None) -> None:
        if self._replaying or self._journal_file is None:
            return
        entry = {"dv": dataverse, "text": nodes.render_statement(stmt)}
        if extra:
            entry.update(extra)
        self._journal_file.write(json.dumps(entry) + "\n")
        self._journal_file.flush()
        os.fsync(self._journal_file.fileno())

    def _replay_journal(self) -> None:
        if not self._journal_path or not os.path.exists(self._journal_path):
            return
        self._replaying = True
        try:
            with open(self._journal_path, "r", encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if not line:
                        continue
                    entry = json.loads(line)
                    stmts = parse_statements(entry["text"] + ";")
                    session = {"dataverse": entry["dv"]}
                    self._apply(stmts[0], session, replay_extra=entry)
        finally:
            self._replaying = False

    def _load_bridges(self) -> None:
        if not self._bridges_path or not os.path.exists(self._bridges_path):
            return
        with open(self._bridges_path, "r", encoding="utf-8") as f:
            state = json.load(f)
        for feed_key, data in state.items():
            dv_name, _, feed_name = feed_key.partition(".")
            try:
                feed = self.catalog.dataverse(dv_name).feeds[feed_name]
            except (KeyError, StorageError):
                continue
            feed.binding = BridgeBinding.from_json(data)

    def save_bridges(self) -> None:
        if not self._bridges_path:
            return
        state = {}
        for dv in self.catalog.dataverses():
            for feed in dv.feeds.values():
                if feed.binding is not None:
                    state[feed.key] = feed.binding.to_json()
        tmp = self._bridges_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(state, f)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self._bridges_path)

    def schedule_bridge_reconcile(self, feed: FeedRuntime) -> None:
        def loop():
            backoff = 0.5
            while not self._stopping.is_set():
                if feed.reconcile():
                    self.save_bridges()
                    return
                if self._stopping.wait(timeout=backoff):
                    return
                backoff = min(backoff * 2, 10.0)

        thread = threading.Thread(target=loop, daemon=True,
                                  name=f"reconcile-{feed.key}")
        thread.start()
        self._reconcilers.append(thread)

    # -- statement execution -------------------------------------------------------------

    def execute_statements(self, text: str) -> list:
        """Execute a statement batch in order, atomically per statement."""
        try:
            stmts = parse_statements(text)
        except ParseError as exc:
            raise StatementError(str(exc), 0, exc.line, exc.col) from None
        results = []
        session = {"dataverse": "Default"}
        with self._exec_lock:
            for index, stmt in enumerate(stmts):
                try:
                    results.append(self._apply(stmt, session))
                except StatementError:
                    raise
                except (
                    ParseError, StorageError, ChannelError, BrokerError,
                    FeedError, AnalysisError, EvalError, AdmError, ValueError,
                ) as exc:
                    raise StatementError(str(exc), index) from exc
        return results

    def _apply(self, stmt, session: dict, replay_extra: dict | None = None) -> dict:
        dv_name = session["dataverse"]
        if isinstance(stmt, nodes.UseDataverse):
            session["dataverse"] = stmt.name
            self._provision_dataverse(stmt.name)
            return {"status": "ok"}
        if isinstance(stmt, nodes.CreateType):
            fields = tuple(
                FieldSpec(f.name, normalize_type_name(f.type_name), f.optional)
                for f in stmt.fields
            )
            self._provision_dataverse(dv_name)
            self.catalog.create_type(dv_name, TypeDef(stmt.name, fields))
            self._journal(dv_name, stmt)
            return {"status": "ok"}
        if isinstance(stmt, nodes.CreateDataset):
            self._provision_dataverse(dv_name)
            self.catalog.create_dataset(
                dv_name, stmt.name, stmt.type_name, stmt.pkey,
                stmt.active, stmt.autogenerated,
            )
            self._journal(dv_name, stmt)
            return {"status": "ok"}
        if isinstance(stmt, nodes.CreateFeed):
            dv = self.catalog.dataverse(dv_name, create=True)
            if stmt.name in dv.feeds:
                raise FeedError(f"feed {stmt.name!r} already exists")
            config = FeedConfig.from_with_map(stmt.config)
            dv.feeds[stmt.name] = FeedRuntime(self, dv_name, stmt.name, config)
            self._journal(dv_name, stmt)
            return {"status": "ok"}
        if isinstance(stmt, nodes.ConnectFeed):
            feed = self._feed(dv_name, stmt.feed)
            feed.connect(stmt.dataset, stmt.apply_function)
            self._journal(dv_name, stmt)
            return {"status": "ok"}
        if isinstance(stmt, nodes.StartFeed):
            feed = self._feed(dv_name, stmt.feed)
            feed.start(replay=self._replaying)
            self._journal(dv_name, stmt)
            return {"status": "ok"}
        if isinstance(stmt, nodes.StopFeed):
            feed = self._feed(dv_name, stmt.feed)
            feed.stop(replay=self._replaying)
            self._journal(dv_name, stmt)
            return {"status": "ok"}
        if isinstance(stmt, nodes.CreateBroker):
            dv = self.catalog.dataverse(dv_name, create=True)
            if stmt.name in dv.brokers:
                raise BrokerError(f"broker {stmt.name!r} already exists")
            dv.brokers[stmt.name] = broker_from_config(
                stmt.name, dv_name, stmt.endpoint, stmt.config
            )
            self._journal(dv_name, stmt)
            return {"status": "ok"}
        if isinstance(stmt, nodes.DropBroker):
            dv = self.catalog.dataverse(dv_name)
            if stmt.name not in dv.brokers:
                raise BrokerError(f"unknown broker {stmt.name!r}")
            blockers = [
                str(s.subscription_id)
                for channel in dv.channels.values()
                for s in channel.subscriptions_on_broker(stmt.name)
            ]
            if blockers:
                raise BrokerError(
                    f"broker {stmt.name!r} is in use by subscription(s) "
                    + ", ".join(blockers)
                )
            del dv.brokers[stmt.name]
            self.hub.remove_queue(dv_name, stmt.name)
            self._journal(dv_name, stmt)
            return {"status": "ok"}
        if isinstance(stmt, nodes.CreateChannel):
            return self._create_channel(dv_name, stmt)
        if isinstance(stmt, nodes.Subscribe):
            dv = self.catalog.dataverse(dv_name)
            channel = dv.channels.get(stmt.channel)
            if channel is None:
                raise ChannelError(f"unknown channel {stmt.channel!r}")
            if stmt.broker not in dv.brokers:
                raise BrokerError(f"unknown broker {stmt.broker!r}")
            if replay_extra and "sub_id" in replay_extra:
                sub_id = _uuid.UUID(replay_extra["sub_id"])
                channel.restore_subscription(sub_id, stmt.arguments, stmt.broker)
            else:
                sub_id = channel.subscribe(stmt.arguments, stmt.broker)
            self._journal(dv_name, stmt, {"sub_id": str(sub_id)})
            return {"status": "ok", "subscriptionId": str(sub_id)}
        if isinstance(stmt, nodes.Unsubscribe):
            try:
                sub_id = _uuid.UUID(stmt.subscription_id)
            except ValueError:
                raise ChannelError(
                    f"malformed subscription id {stmt.subscription_id!r}"
                ) from None
            for dv in self.catalog.dataverses():
                for channel in dv.channels.values():
                    try:
                        channel.unsubscribe(sub_id)
                    except ChannelError:
                        continue
                    self._journal(dv_name, stmt)
                    return {"status": "ok"}
            raise ChannelError(f"unknown subscription {stmt.subscription_id}")
        if isinstance(stmt, nodes.CreateFunction):
            dv = self.catalog.dataverse(dv_name, create=True)
            if stmt.name in RESERVED_FUNCTION_NAMES:
                raise AnalysisError(f"{stmt.name!r} is a reserved function name")
            if stmt.name in dv.functions:
                raise StorageError(f"function {stmt.name!r} already exists")
            dv.functions[stmt.name] = UserFunction(
                stmt.name, dv_name, list(stmt.params), stmt.body
            )
            self._journal(dv_name, stmt)
            return {"status": "ok"}
        if isinstance(stmt, nodes.Insert):
            values = self._constant_values(stmt.values, dv_name)
            seqnos = self.insert_into(dv_name, stmt.dataset, values)
            return {"status": "ok", "inserted": len(seqnos)}
        if isinstance(stmt, nodes.Query):
            rows = self.run_query(stmt.ast, dv_name)
            return {"status": "ok", "results": rows}
        raise StatementError(f"unsupported statement {type(stmt).__name__}", 0)

    # -- channel creation ------------------------------------------------------------

    def _create_channel(self, dv_name: str, stmt: nodes.CreateChannel) -> dict:
        dv = self.catalog.dataverse(dv_name, create=True)
        if stmt.name in dv.channels:
            raise ChannelError(f"channel {stmt.name!r} already exists")
        period_text = self.config.channel_period_override or stmt.period_text
        functions = dict(dv.functions)
        plan = compile_query(
            stmt.body, self.catalog, dv_name,
            params=stmt.params, allow_is_new=True, functions=functions,
        )
        channel = Channel(
            self.catalog, dv_name, stmt.name, stmt.params, period_text,
            stmt.body, plan, self.hub, self.watermarks,
            mode=stmt.mode, continuous=stmt.continuous,
            wordlist=self.wordlist, functions=functions,
            broker_resolver=self._broker_resolver,
            pull_store=self.pull_store,
            pull_ttl_periods=self.config.pull_ttl_periods,
            clock=self.clock,
        )
        dv.channels[stmt.name] = channel
        if not self._replaying and self.config.start_timers:
            channel.start_timer()
        self._journal(dv_name, stmt)
        return {"status": "ok"}

    # -- shared services ----------------------------------------------------------------

    def _broker_resolver(self, dv_name: str, name: str):
        try:
            return self.catalog.dataverse(dv_name).brokers.get(name)
        except StorageError:
            return None

    def resolve_function(self, dv_name: str, name: str):
        try:
            return self.catalog.dataverse(dv_name).functions.get(name)
        except StorageError:
            return None

    def _feed(self, dv_name: str, name: str) -> FeedRuntime:
        feed = self.catalog.dataverse(dv_name).feeds.get(name)
        if feed is None:
            raise FeedError(f"unknown feed {name!r}")
        return feed

    def _provision_dataverse(self, dv_name: str) -> None:
        dv = self.catalog.dataverse(dv_name, create=True)
        if DEAD_LETTERS not in dv.datasets:
            if "__DeadLetter" not in dv.types:
                self.catalog.create_type(
                    dv_name, TypeDef("__DeadLetter", (FieldSpec("dlid", "uuid"),))
                )
            self.catalog.create_dataset(
                dv_name, DEAD_LETTERS, "__DeadLetter", "dlid", False, True
            )

    def now_ms(self) -> int:
        return int(self.clock() * 1000)

    def insert_into(self, dv_name: str, dataset_name: str, values: list) -> list:
        dataset = self.catalog.get_dataset(dv_name, dataset_name)
        seqnos = dataset.insert(values)
        if seqnos and not self._replaying:
            for value in values:
                self.events.emit(
                    "dataset_insert",
                    {"dataverse": dv_name, "dataset": dataset_name, "value": value},
                )
        return seqnos

    def enrich(self, dv_name: str, fn: UserFunction, record: dict) -> dict:
        ctx = ExecutionContext(
            self.catalog, wordlist=self.wordlist, default_dataverse=dv_name,
            functions=dict(self.catalog.dataverse(dv_name).functions),
        )
        return enrich_record(fn, record, ctx)

    def dead_letter(self, entry: dict) -> None:
        dv_name = entry.get("dataverse") or "Default"
        try:
            self._provision_dataverse(dv_name)
            self.insert_into(dv_name, DEAD_LETTERS, [entry])
        except StorageError:
            log.exception("failed to record dead letter")

    def _on_delivered(self, broker: Broker, value: Value) -> None:
        self.events.emit(
            "notification",
            {"dataverse": broker.dataverse, "broker": broker.name, "envelope": value},
        )

    def _constant_values(self, expr, dv_name: str) -> list:
        ctx = ExecutionContext(self.catalog, default_dataverse=dv_name)
        shell = QueryPlan(ast=None, steps=[], select_value=None, select_items=(),
                          order_by=None, active_keys={}, subplans={})
        try:
            value = _Evaluator(shell, ctx).eval(expr, {}, {})
        except KeyError:
            raise EvalError("subqueries are not allowed in INSERT values") from None
        if value is MISSING:
            raise EvalError("INSERT value evaluates to MISSING")
        if type(value) is list:
            return value
        return [value]

    def run_query(self, ast, dv_name: str) -> list:
        functions = {}
        try:
            functions = dict(self.catalog.dataverse(dv_name).functions)
        except StorageError:
            pass
        plan = compile_query(
            ast, self.catalog, dv_name, params=[], allow_is_new=False,
            functions=functions,
        )
        ctx = ExecutionContext(
            self.catalog, wordlist=self.wordlist, default_dataverse=dv_name,
            functions=functions,
        )
        return execute_query(plan, ctx)

    # -- status ----------------------------------------------------------------------

    def status(self) -> dict:
        out = {"island": self.name, "dataverses": {}}
        for dv in self.catalog.dataverses():
            out["dataverses"][dv.name] = {
                "types": sorted(dv.types),
                "datasets": {
                    name: {
                        "active": ds.active,
                        "count": ds.count(),
                        "seqno": ds.snapshot_seqno(),
                    }
                    for name, ds in dv.datasets.items()
                },
                "feeds": {
                    name: {
                        "running": feed.running,
                        "adapter": feed.config.adapter,
                        "dataset": feed.dataset,
                        "bridge": (
                            feed.binding.to_json() if feed.binding is not None else None
                        ),
                    }
                    for name, feed in dv.feeds.items()
                },
                "channels": {
                    name: {
                        "params": channel.params,
                        "period_ms": channel.period_ms,
                        "mode": channel.mode,
                        "executions": channel.execution_count,
                        "subscriptions": [
                            {
                                "id": str(s.subscription_id),
                                "arguments": json.loads(
                                    to_general_json(list(s.arguments))
                                ),
                                "broker": s.broker,
                            }
                            for s in channel.subscriptions()
                        ],
                    }
                    for name, channel in dv.channels.items()
                },
                "brokers": {
                    name: {"endpoint": b.endpoint, "type": b.broker_type}
                    for name, b in dv.brokers.items()
                },
                "functions": sorted(dv.functions),
            }
        return out
