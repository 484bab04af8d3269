"""Workload drivers: the seeded tweet stream and the in-field officers.

Tweet texts get a unique trailing token so downstream notifications can be
joined back to their tweet (and its send timestamp) by text alone; the
token never matches the threat word list."""

from __future__ import annotations

import json
import math
import random
import socket
import threading
import time

import requests

from archipelago.harness.config import ScenarioConfig
from archipelago.harness.trinity import execute, threat_words_path

FILLER_WORDS = (
    "the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog", "sunny",
    "campus", "coffee", "marathon", "parade", "library", "beach", "traffic",
    "weather", "lunch", "concert", "museum",
)

# Generation areas: campus tweets fall inside the walkthrough building's
# footprint, county tweets near the marathon event.
CAMPUS_BOX = (33.64824, -117.84314, 33.64926, -117.84172)
COUNTY_CENTER = (33.66100302712824, -117.83950620703125)
COUNTY_RADIUS = 0.008

# Officers patrol the county around the tweet areas; with the channel's
# 0.1-unit nearness threshold only a fraction of them is close enough to
# any given tweet, so notifications stay selective.
OFFICER_BOX = (33.50, -118.01, 33.81, -117.67)


class TweetGenerator:
    """Streams seeded tweets into the federal island's socket feed."""

    def __init__(self, cfg: ScenarioConfig, rate_per_s: float | None = None):
        self.cfg = cfg
        self.rate = rate_per_s if rate_per_s is not None else cfg.tweet_rate
        self.rng = random.Random(cfg.seed)
        with open(threat_words_path(), "r", encoding="utf-8") as f:
            self.threat_words = [w.strip() for w in f if w.strip()]
        self.created_at: dict[str, int] = {}
        self.threatening_by_area: dict[str, list] = {"OC": [], "UCI": []}
        self.sent = 0
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._serial = 0

    def make_tweet(self, now_ms: int) -> dict:
        self._serial += 1
        serial = self._serial
        # tweets alternate between the two areas in pairs; one threat draw
        # per pair and a swapping leader keep both areas' streams aligned
        # and free of a systematic within-period offset
        pair = (serial + 1) // 2
        first_in_pair = serial % 2 == 1
        if first_in_pair:
            self._pair_threatening = (
                self.rng.random() < self.cfg.threatening_fraction
            )
        leader = "UCI" if pair % 2 == 1 else "OC"
        trailer = "OC" if leader == "UCI" else "UCI"
        area = leader if first_in_pair else trailer
        threatening = self._pair_threatening
        words = [self.rng.choice(FILLER_WORDS) for _ in range(self.rng.randint(3, 7))]
        if threatening:
            for _ in range(self.rng.randint(1, 3)):
                words.insert(
                    self.rng.randrange(len(words) + 1),
                    self.rng.choice(self.threat_words),
                )
        text = " ".join(words) + f" id{serial}"
        if area == "UCI":
            x = self.rng.uniform(CAMPUS_BOX[0], CAMPUS_BOX[2])
            y = self.rng.uniform(CAMPUS_BOX[1], CAMPUS_BOX[3])
        else:
            angle = self.rng.uniform(0, 2 * math.pi)
            radius = COUNTY_RADIUS * math.sqrt(self.rng.random())
            x = COUNTY_CENTER[0] + radius * math.cos(angle)
            y = COUNTY_CENTER[1] + radius * math.sin(angle)
        tweet = {
            "tid": serial,
            "uid": 73 if self.rng.random() < 0.05 else self.rng.randint(1, 1000),
            "area_name": area,
            "text": text,
            "coordinates": [x, y],
            "created_at": now_ms,
        }
        with self._lock:
            self.created_at[text] = now_ms
            if threatening:
                self.threatening_by_area[area].append(text)
        return tweet

    def pump(self, count: int, sock: socket.socket | None = None) -> None:
        """Send a fixed number of tweets as fast as the socket takes them."""
        own = sock is None
        if own:
            sock = self._connect()
        try:
            for _ in range(count):
                tweet = self.make_tweet(int(time.time() * 1000))
                sock.sendall(json.dumps(tweet).encode("utf-8") + b"\n")
                self.sent += 1
        finally:
            if own:
                sock.close()

    def _connect(self) -> socket.socket:
        port = self.cfg.dhs.ports["TweetFeed"]
        return socket.create_connection((self.cfg.host, port), timeout=10)

    def start(self) -> None:
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name="tweet-generator")
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def _run(self) -> None:
        sock = self._connect()
        interval = 1.0 / self.rate
        next_send = time.time()
        try:
            while not self._stop.is_set():
                now = time.time()
                if now < next_send:
                    if self._stop.wait(timeout=next_send - now):
                        return
                tweet = self.make_tweet(int(time.time() * 1000))
                sock.sendall(json.dumps(tweet).encode("utf-8") + b"\n")
                self.sent += 1
                next_send += interval
        except OSError:
            pass
        finally:
            sock.close()


class OfficerDriver:
    """Random-walking officers posting location updates at 1 Hz, each
    subscribed to the county channel under its own id."""

    def __init__(self, cfg: ScenarioConfig, count: int | None = None):
        self.cfg = cfg
        self.count = count if count is not None else cfg.officer_count
        self.rng = random.Random(cfg.seed + 1)
        self.positions = [
            (
                self.rng.uniform(OFFICER_BOX[0], OFFICER_BOX[2]),
                self.rng.uniform(OFFICER_BOX[1], OFFICER_BOX[3]),
            )
            for _ in range(self.count)
        ]
        self._session = requests.Session()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def subscribe_all(self, broker: str) -> list:
        """One subscription per officer on the county channel."""
        if not self.count:
            return []
        statements = ["USE ocsd"] + [
            f"SUBSCRIBE TO ThreateningEventsNear({oid}) ON {broker}"
            for oid in range(self.count)
        ]
        results = execute(self.cfg.ocsd.base, ";\n".join(statements) + ";")
        return [r["subscriptionId"] for r in results[1:]]

    def post_positions(self, pace_s: float = 0.0) -> None:
        """POST every officer's position; with pace_s the updates spread
        across the interval instead of arriving as one burst."""
        url = f"http://{self.cfg.host}:{self.cfg.ocsd.ports['LocationFeed']}/"
        spacing = pace_s / self.count if self.count else 0.0
        for oid, (x, y) in enumerate(self.positions):
            started = time.time()
            body = '{"oid": %d, "location": point("%r,%r")}' % (oid, x, y)
            try:
                self._session.post(url, data=body.encode("utf-8"), timeout=5)
            except requests.RequestException:
                return
            if spacing:
                leftover = spacing - (time.time() - started)
                if leftover > 0 and self._stop.wait(timeout=leftover):
                    return

    def step(self) -> None:
        for i, (x, y) in enumerate(self.positions):
            x = min(max(x + self.rng.gauss(0, 0.0008), OFFICER_BOX[0]), OFFICER_BOX[2])
            y = min(max(y + self.rng.gauss(0, 0.0008), OFFICER_BOX[1]), OFFICER_BOX[3])
            self.positions[i] = (x, y)

    def start(self) -> None:
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name="officer-driver")
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def _run(self) -> None:
        # officers are independent 1 Hz posters: spread them evenly over the
        # second as a steady trickle with no burst phase
        self.post_positions()
        while not self._stop.is_set():
            self.step()
            self.post_positions(pace_s=1.0)
