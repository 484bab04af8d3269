"""The propagation-delay experiment.

For each configured channel period the full pipeline runs from a cold
start: tweets stream into the federal island, bridges carry detections to
the county and campus islands, whose channels notify harness-hosted
subscribers. Per channel execution we record the mean delay between a
tweet's creation and the subscriber's receipt of its localized
notification, for whichever executions delivered anything, and emit one
CSV per period plus a plain-text summary."""

from __future__ import annotations

import csv
import os
import statistics
import time
from dataclasses import dataclass

from archipelago.harness.config import (
    ScenarioConfig,
    parse_period_text,
    period_label,
)
from archipelago.harness.sink import SubscriberSink
from archipelago.harness.trinity import Trinity, deploy_trinity, execute, status
from archipelago.harness.workload import OfficerDriver, TweetGenerator

CHANNEL_ISLAND = {"ThreateningEventsNear": "ocsd", "AlertsOnCampus": "uci"}


@dataclass
class DelayRecord:
    execution_index: int
    island: str
    mean_delay_ms: float
    sample_count: int


class ExperimentError(Exception):
    pass


def measure_period(cfg: ScenarioConfig, period_ms: int, workdir: str) -> dict:
    """One cold-start run at a fixed period; returns island -> records plus
    run metadata."""
    outcome = {"partial": False, "records": {"ocsd": [], "uci": []}}
    with Trinity(cfg, workdir) as trinity:
        deploy_trinity(cfg, period_ms)
        sink = SubscriberSink(cfg.host)
        generator = TweetGenerator(cfg)
        officers = OfficerDriver(cfg)
        try:
            execute(cfg.ocsd.base, f'USE ocsd; CREATE BROKER officers_console AT "{sink.url}officers";')
            execute(cfg.uci.base, f'USE uci; CREATE BROKER zotalert AT "{sink.url}alerts";')
            officers.subscribe_all("officers_console")
            zot_subs = ["USE uci"] + [
                "SUBSCRIBE TO AlertsOnCampus() ON zotalert"
                for _ in range(cfg.uci_subscription_count)
            ]
            execute(cfg.uci.base, ";\n".join(zot_subs) + ";")

            officers.start()
            generator.start()
            outcome["partial"] = not _await_executions(cfg, period_ms)
        finally:
            generator.stop()
            officers.stop()
            # let in-flight envelopes drain before tearing the islands down
            time.sleep(min(2.0 + period_ms / 1000.0, 5.0))
            for channel, island in CHANNEL_ISLAND.items():
                outcome["records"][island] = _records_from_log(
                    sink.log_for(channel), island, generator.created_at,
                    cfg.executions,
                )
            sink.close()
    return outcome


def _await_executions(cfg: ScenarioConfig, period_ms: int) -> bool:
    """Wait until both downstream channels have completed the configured
    number of executions; False on timeout (partial run)."""
    budget = cfg.executions * period_ms / 1000.0 * 1.6 + 60.0
    deadline = time.time() + budget
    targets = {"ocsd": "ThreateningEventsNear", "uci": "AlertsOnCampus"}
    while time.time() < deadline:
        done = 0
        for island, channel in targets.items():
            try:
                snapshot = status(cfg.islands()[island].base)
            except Exception:
                return False
            dv = snapshot["dataverses"].get(island, {})
            executions = dv.get("channels", {}).get(channel, {}).get("executions", 0)
            if executions >= cfg.executions:
                done += 1
        if done == len(targets):
            return True
        time.sleep(min(period_ms / 1000.0 / 2, 1.0))
    return False


def _records_from_log(log, island: str, created_at: dict, limit: int) -> list:
    by_epoch: dict[int, list] = {}
    for receipt in log.snapshot():
        delays = [
            receipt.receipt_ms - created_at[text]
            for text in receipt.texts
            if text in created_at
        ]
        if delays:
            by_epoch.setdefault(receipt.epoch_ms, []).extend(delays)
    records = []
    for index, epoch in enumerate(sorted(by_epoch), start=1):
        if index > limit:
            break
        delays = by_epoch[epoch]
        records.append(
            DelayRecord(index, island, statistics.fmean(delays), len(delays))
        )
    return records


def summarize(records: list, skip_first: int = 5) -> dict:
    """Overall mean and the coefficient of variation past the warm-up."""
    if not records:
        return {"mean": float("nan"), "cv_after_skip": float("nan"), "count": 0}
    means = [r.mean_delay_ms for r in records]
    tail = [r.mean_delay_ms for r in records if r.execution_index > skip_first]
    cv = float("nan")
    if len(tail) >= 2:
        mu = statistics.fmean(tail)
        cv = statistics.pstdev(tail) / mu if mu else float("nan")
    return {"mean": statistics.fmean(means), "cv_after_skip": cv, "count": len(records)}


def run_delay_experiment(cfg: ScenarioConfig, out_dir: str) -> dict:
    """Run every configured period and write delays_<period>.csv files plus
    summary.txt; returns {label: {island: summary...}, ...}."""
    os.makedirs(out_dir, exist_ok=True)
    results: dict = {}
    for period_text in cfg.periods:
        period_ms = parse_period_text(period_text)
        label = period_label(period_ms)
        workdir = os.path.join(out_dir, f"run_{label}")
        outcome = measure_period(cfg, period_ms, workdir)
        csv_path = os.path.join(out_dir, f"delays_{label}.csv")
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            header = ["executionIndex", "island", "meanDelayMs"]
            if outcome["partial"]:
                writer.writerow(["# PARTIAL RUN: experiment aborted before "
                                 "all executions completed"])
            writer.writerow(header)
            for island in ("ocsd", "uci"):
                for record in outcome["records"][island]:
                    writer.writerow(
                        [record.execution_index, record.island,
                         f"{record.mean_delay_ms:.3f}"]
                    )
        results[label] = {
            "partial": outcome["partial"],
            "csv": csv_path,
            "ocsd": summarize(outcome["records"]["ocsd"]),
            "uci": summarize(outcome["records"]["uci"]),
            "records": outcome["records"],
        }
    summary_path = os.path.join(out_dir, "summary.txt")
    with open(summary_path, "w", encoding="utf-8") as f:
        for label, data in results.items():
            f.write(f"period {label}{' (PARTIAL)' if data['partial'] else ''}\n")
            for island in ("ocsd", "uci"):
                s = data[island]
                f.write(
                    f"  {island}: mean delay {s['mean']:.1f} ms over "
                    f"{s['count']} executions, cv(after 5) {s['cv_after_skip']:.3f}\n"
                )
    return results
