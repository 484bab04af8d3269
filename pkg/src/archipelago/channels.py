"""Continuous channels: periodic batched execution over all subscriptions,
new-records watermark management, and notification envelope construction.

One execution snapshots the top sequence number of every watermarked
dataset, evaluates the body once per subscription against the
(previous, current] range, groups result rows into one envelope per broker,
then advances and persists the watermarks. An evaluation error aborts the
execution without advancing anything, so the same records are retried on
the next tick. Timer ticks are aligned to wall-clock multiples of the
period, which makes multi-island pipelines phase-deterministic; if an
execution overruns its period the next tick is skipped rather than piled up.
"""

from __future__ import annotations

import logging
import threading
import time
import uuid as _uuid
from dataclasses import dataclass

from archipelago.adm import Datetime, Duration
from archipelago.brokers import Broker, BrokerHub, Envelope, PullNotice
from archipelago.engine import (
    AnalysisError,
    EvalError,
    ExecutionContext,
    QueryPlan,
    WordList,
    compile_query,
    execute_query,
)
from archipelago.storage import Catalog, StorageError

log = logging.getLogger(__name__)


class ChannelError(Exception):
    pass


@dataclass
class Subscription:
    subscription_id: _uuid.UUID
    channel: str
    dataverse: str
    arguments: list
    broker: str


class PullStore:
    """Results parked for pull-mode channels, fetchable by handle until a
    time-to-live expires."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: dict[_uuid.UUID, tuple] = {}  # handle -> (expiry_ms, rows|None)

    def put(self, rows: list, now_ms: int, ttl_ms: int) -> _uuid.UUID:
        handle = _uuid.uuid4()
        with self._lock:
            self._entries[handle] = (now_ms + ttl_ms, rows)
        return handle

    def fetch(self, handle, now_ms: int):
        """Returns (status, rows) where status is ok|gone|unknown; string
        handles (as they arrive over HTTP) are accepted."""
        if isinstance(handle, str):
            try:
                handle = _uuid.UUID(handle)
            except ValueError:
                return "unknown", None
        with self._lock:
            entry = self._entries.get(handle)
            if entry is None:
                return "unknown", None
            expiry, rows = entry
            if now_ms > expiry:
                self._entries[handle] = (expiry, None)
                return "gone", None
            if rows is None:
                return "gone", None
            return "ok", rows


class Channel:
    """A registered continuous channel and its execution machinery."""

    def __init__(
        self,
        catalog: Catalog,
        dataverse: str,
        name: str,
        params: list,
        period_text: str,
        body,
        plan: QueryPlan,
        hub: BrokerHub,
        watermark_store,
        mode: str = "push",
        continuous: bool = True,
        wordlist: WordList | None = None,
        functions: dict | None = None,
        broker_resolver=None,
        pull_store: PullStore | None = None,
        pull_ttl_periods: int = 10,
        clock=time.time,
    ):
        period = Duration.from_text(period_text)
        if period.months:
            raise ChannelError("channel periods must be calendar-free durations")
        if period.millis <= 0:
            raise ChannelError("channel period must be positive")
        self.catalog = catalog
        self.dataverse = dataverse
        self.name = name
        self.params = list(params)
        self.period_ms = period.millis
        self.body = body
        self.plan = plan
        self.mode = mode
        self.continuous = continuous
        self.hub = hub
        self.wordlist = wordlist
        self.functions = functions or {}
        self.broker_resolver = broker_resolver
        self.pull_store = pull_store
        self.pull_ttl_periods = pull_ttl_periods
        self.clock = clock
        self.watermark_store = watermark_store
        self.active_keys = dict(plan.active_keys)  # alias -> (dv, ds)
        self.execution_count = 0
        self.key = f"{dataverse}.{name}"
        persisted = watermark_store.get(self.key) if watermark_store else {}
        self.prev: dict[tuple, int] = {}
        for alias_key in self.active_keys.values():
            self.prev[alias_key] = persisted.get(f"{alias_key[0]}.{alias_key[1]}", 0)
        self._subs_lock = threading.Lock()
        self._subscriptions: dict[_uuid.UUID, Subscription] = {}
        self._exec_lock = threading.Lock()
        self._stop = threading.Event()
        self._timer: threading.Thread | None = None

    # -- subscriptions ---------------------------------------------------------------

    def subscribe(self, arguments: list, broker: str) -> _uuid.UUID:
        if len(arguments) != len(self.params):
            raise ChannelError(
                f"channel {self.name} takes {len(self.params)} argument(s), "
                f"got {len(arguments)}"
            )
        sub = Subscription(_uuid.uuid4(), self.name, self.dataverse, list(arguments), broker)
        with self._subs_lock:
            self._subscriptions[sub.subscription_id] = sub
        return sub.subscription_id

    def restore_subscription(self, subscription_id: _uuid.UUID, arguments: list, broker: str) -> None:
        sub = Subscription(subscription_id, self.name, self.dataverse, list(arguments), broker)
        with self._subs_lock:
            self._subscriptions[subscription_id] = sub

    def unsubscribe(self, subscription_id: _uuid.UUID) -> None:
        with self._subs_lock:
            if subscription_id not in self._subscriptions:
                raise ChannelError(f"unknown subscription {subscription_id}")
            del self._subscriptions[subscription_id]

    def subscriptions(self) -> list:
        with self._subs_lock:
            return list(self._subscriptions.values())

    def subscriptions_on_broker(self, broker: str) -> list:
        return [s for s in self.subscriptions() if s.broker == broker]

    # -- execution --------------------------------------------------------------------

    def execute(self, now_ms: int | None = None) -> dict:
        """Run one channel execution; returns {broker_name: Envelope}."""
        with self._exec_lock:
            return self._execute_locked(now_ms)

    def _execute_locked(self, now_ms) -> dict:
        if now_ms is None:
            now_ms = int(self.clock() * 1000)
        current = {
            key: self.catalog.get_dataset(*key).snapshot_seqno()
            for key in self.prev
        }
        watermarks = {
            key: (self.prev[key], current[key]) for key in current
        }
        subs = self.subscriptions()
        items_by_broker: dict[str, list] = {}
        try:
            for sub in subs:
                ctx = ExecutionContext(
                    self.catalog,
                    bindings=dict(zip(self.params, sub.arguments)),
                    watermarks=watermarks,
                    now=Datetime(now_ms),
                    wordlist=self.wordlist,
                    default_dataverse=self.dataverse,
                    functions=self.functions,
                )
                for row in execute_query(self.plan, ctx):
                    items_by_broker.setdefault(sub.broker, []).append(
                        (row, sub.subscription_id)
                    )
        except (EvalError, AnalysisError, StorageError) as exc:
            log.warning("channel %s execution failed, will retry: %s", self.key, exc)
            return {}
        envelopes: dict[str, Envelope] = {}
        for broker_name, items in items_by_broker.items():
            envelopes[broker_name] = Envelope(
                self.dataverse, self.name, now_ms, items
            )
        # computation complete: advance watermarks before handing to delivery
        self.prev = current
        if self.watermark_store is not None:
            self.watermark_store.advance(
                self.key, {f"{dv}.{ds}": seq for (dv, ds), seq in current.items()}
            )
        self.execution_count += 1
        self._dispatch(envelopes, now_ms)
        return envelopes

    def _dispatch(self, envelopes: dict, now_ms: int) -> None:
        if self.broker_resolver is None:
            return
        dispatch_ms = int(self.clock() * 1000)
        for broker_name, envelope in envelopes.items():
            envelope.delivery_ms = max(dispatch_ms, now_ms)
            broker = self.broker_resolver(self.dataverse, broker_name)
            if broker is None:
                log.warning("channel %s: unknown broker %s", self.key, broker_name)
                continue
            if self.mode == "pull" and self.pull_store is not None:
                rows = envelope.build(now_ms)["results"]
                for row in rows:
                    row.pop("deliveryTime", None)
                handle = self.pull_store.put(
                    rows, now_ms, self.pull_ttl_periods * self.period_ms
                )
                self.hub.enqueue(
                    broker, PullNotice(self.dataverse, self.name, now_ms, handle)
                )
            else:
                self.hub.enqueue(broker, envelope)

    # -- timer -------------------------------------------------------------------------

    def start_timer(self) -> None:
        if self._timer is not None:
            return
        self._stop.clear()
        self._timer = threading.Thread(
            target=self._tick_loop, daemon=True, name=f"channel-{self.key}"
        )
        self._timer.start()

    def stop_timer(self) -> None:
        self._stop.set()
        if self._timer is not None:
            self._timer.join(timeout=2)
            self._timer = None

    def _tick_loop(self) -> None:
        period_s = self.period_ms / 1000.0
        while not self._stop.is_set():
            now = self.clock()
            next_tick = (int(now * 1000) // self.period_ms + 1) * self.period_ms / 1000.0
            if self._stop.wait(timeout=max(next_tick - now, 0.0)):
                return
            tick_ms = int(next_tick * 1000)
            try:
                self.execute(tick_ms)
            except Exception:
                log.exception("channel %s tick failed", self.key)
