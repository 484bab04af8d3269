"""Spawn, deploy, and tear down the three-island prototype."""

from __future__ import annotations

import os
import subprocess
import sys
import time
from importlib import resources
from urllib.parse import urlparse

import requests

from archipelago.harness.config import ScenarioConfig, period_iso

ISLAND_NAMES = ("dhs", "ocsd", "uci")


class TrinityError(Exception):
    pass


def _data_text(name: str) -> str:
    return resources.files("archipelago.harness").joinpath(f"data/{name}").read_text(
        encoding="utf-8"
    )


def threat_words_path() -> str:
    return str(resources.files("archipelago.harness").joinpath("data/threat_words.txt"))


def execute(base: str, text: str, timeout: float = 30.0) -> list:
    response = requests.post(
        f"{base}/statements", data=text.encode("utf-8"), timeout=timeout
    )
    if response.status_code != 200:
        raise TrinityError(f"deploy against {base} failed: {response.json()}")
    return response.json()


def query(base: str, text: str, timeout: float = 30.0) -> list:
    response = requests.post(f"{base}/query", data=text.encode("utf-8"), timeout=timeout)
    if response.status_code != 200:
        raise TrinityError(f"query against {base} failed: {response.json()}")
    return response.json()["results"]


def status(base: str, timeout: float = 10.0) -> dict:
    response = requests.get(f"{base}/status", timeout=timeout)
    response.raise_for_status()
    return response.json()


def deploy_trinity(cfg: ScenarioConfig, period_ms: int) -> None:
    """Run the whole prototype DDL (including seeds) against the three
    islands named in the config. Islands must be up."""
    host = cfg.host
    substitutions = {
        "dhs": {
            "@TWEET_FEED_ADDR@": f"{host}:{cfg.dhs.ports['TweetFeed']}",
            "@PERIOD@": period_iso(period_ms),
        },
        "ocsd": {
            "@OCSD_BRIDGE_ADDR@": f"{host}:{cfg.ocsd.ports['LocalThreateningTweetFeed']}",
            "@LOCATION_FEED_ADDR@": f"{host}:{cfg.ocsd.ports['LocationFeed']}",
            "@DHS_HOST@": _host_port(cfg.dhs.base),
            "@PERIOD@": period_iso(period_ms),
        },
        "uci": {
            "@UCI_BRIDGE_ADDR@": f"{host}:{cfg.uci.ports['LocalThreateningTweetFeed']}",
            "@DHS_HOST@": _host_port(cfg.dhs.base),
            "@PERIOD@": period_iso(period_ms),
        },
    }
    for name in ISLAND_NAMES:
        text = _data_text(f"{name}.bad")
        for token, value in substitutions[name].items():
            text = text.replace(token, value)
        execute(cfg.islands()[name].base, text, timeout=60.0)


def _host_port(base: str) -> str:
    parsed = urlparse(base)
    return parsed.netloc


class Trinity:
    """Context manager that runs the three islands as child processes."""

    def __init__(self, cfg: ScenarioConfig, workdir: str):
        self.cfg = cfg
        self.workdir = workdir
        self.processes: dict[str, subprocess.Popen] = {}

    def __enter__(self) -> "Trinity":
        os.makedirs(self.workdir, exist_ok=True)
        try:
            for name in ISLAND_NAMES:
                self._spawn(name)
            self._wait_healthy()
        except Exception:
            self.shutdown()
            raise
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()

    def _spawn(self, name: str) -> None:
        endpoint = self.cfg.islands()[name]
        port = urlparse(endpoint.base).port
        data_dir = os.path.join(self.workdir, name)
        config_path = os.path.join(self.workdir, f"{name}.toml")
        lines = [
            f'name = "{name}"',
            f'host = "{self.cfg.host}"',
            f"port = {port}",
            f'data_dir = "{data_dir}"',
            f"durable = {'true' if self.cfg.durable else 'false'}",
        ]
        if name == "dhs":
            lines.append(f'threat_word_list = "{threat_words_path()}"')
        with open(config_path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        log_path = os.path.join(self.workdir, f"{name}.log")
        self.processes[name] = subprocess.Popen(
            [sys.executable, "-m", "archipelago.cli", "island", "--config", config_path],
            stdout=open(log_path, "ab"),
            stderr=subprocess.STDOUT,
        )

    def _wait_healthy(self, timeout: float = 30.0) -> None:
        deadline = time.time() + timeout
        for name in ISLAND_NAMES:
            base = self.cfg.islands()[name].base
            while True:
                process = self.processes[name]
                if process.poll() is not None:
                    raise TrinityError(
                        f"island {name} exited with {process.returncode}; "
                        f"see {self.workdir}/{name}.log"
                    )
                try:
                    status(base, timeout=2.0)
                    break
                except requests.RequestException:
                    if time.time() > deadline:
                        raise TrinityError(f"island {name} did not come up at {base}")
                    time.sleep(0.1)

    def restart(self, name: str, kill: bool = True) -> None:
        """Kill one island process and bring it back on the same data dir."""
        process = self.processes[name]
        if kill:
            process.kill()
        else:
            process.terminate()
        process.wait(timeout=10)
        self._spawn(name)
        self._wait_healthy()

    def shutdown(self) -> None:
        for process in self.processes.values():
            if process.poll() is None:
                process.terminate()
        deadline = time.time() + 5
        for process in self.processes.values():
            try:
                process.wait(timeout=max(deadline - time.time(), 0.1))
            except subprocess.TimeoutExpired:
                process.kill()
        self.processes.clear()
