"""Scenario configuration for the three-island demo and experiments."""

from __future__ import annotations

import socket
from dataclasses import dataclass, field, replace

from archipelago.adm import Duration


def parse_period_text(text: str) -> int:
    """Accepts '1s', '500ms', '2.5s', or ISO duration text; returns millis."""
    t = text.strip()
    lowered = t.lower()
    try:
        if lowered.endswith("ms"):
            return int(float(lowered[:-2]))
        if lowered.endswith("s") and not lowered.startswith(("p", "-p")):
            return int(float(lowered[:-1]) * 1000)
        duration = Duration.from_text(t.upper() if lowered.startswith("p") else t)
        if duration.months:
            raise ValueError("calendar durations are not valid periods")
        return duration.millis
    except Exception as exc:
        raise ValueError(f"cannot parse period {text!r}: {exc}") from None


def period_label(millis: int) -> str:
    return f"{millis / 1000:g}s"


def period_iso(millis: int) -> str:
    return Duration(0, millis).to_text()


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket() as s:
        s.bind((host, 0))
        return s.getsockname()[1]


@dataclass
class IslandEndpoint:
    base: str = ""  # control plane, e.g. http://127.0.0.1:19001
    ports: dict = field(default_factory=dict)  # feed name -> port


@dataclass
class ScenarioConfig:
    seed: int = 7
    host: str = "127.0.0.1"
    periods: list = field(default_factory=lambda: ["1s", "2s"])
    tweet_rate: float = 10.0
    threatening_fraction: float = 0.5
    officer_count: int = 100
    uci_subscription_count: int = 100
    executions: int = 50
    durable: bool = True
    spawn: bool = True
    dhs: IslandEndpoint = field(default_factory=IslandEndpoint)
    ocsd: IslandEndpoint = field(default_factory=IslandEndpoint)
    uci: IslandEndpoint = field(default_factory=IslandEndpoint)

    def islands(self) -> dict:
        return {"dhs": self.dhs, "ocsd": self.ocsd, "uci": self.uci}

    def with_free_ports(self) -> "ScenarioConfig":
        """Fill in any unset control/feed ports with free ephemeral ones."""
        out = replace(self)
        for name, endpoint in out.islands().items():
            if not endpoint.base:
                endpoint.base = f"http://{self.host}:{free_port(self.host)}"
        out.dhs.ports.setdefault("TweetFeed", free_port(self.host))
        out.ocsd.ports.setdefault("LocalThreateningTweetFeed", free_port(self.host))
        out.ocsd.ports.setdefault("LocationFeed", free_port(self.host))
        out.uci.ports.setdefault("LocalThreateningTweetFeed", free_port(self.host))
        return out

    @classmethod
    def from_file(cls, path: str) -> "ScenarioConfig":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as f:
            data = tomllib.load(f)
        islands = data.pop("islands", {})
        if "period" in data:
            data["periods"] = [data.pop("period")]
        config = cls(**{k.replace("-", "_"): v for k, v in data.items()})
        for name in ("dhs", "ocsd", "uci"):
            section = islands.get(name, {})
            endpoint = getattr(config, name)
            endpoint.base = section.get("base", endpoint.base)
            for key, value in section.items():
                if key.endswith("_port"):
                    feed = {
                        "tweet_feed_port": "TweetFeed",
                        "bridge_feed_port": "LocalThreateningTweetFeed",
                        "location_feed_port": "LocationFeed",
                    }.get(key)
                    if feed:
                        endpoint.ports[feed] = int(value)
        return config
