"""Command-line entry points.

    archipelago island --name dhs --port 19001 --data-dir ./dhs [--config f.toml]
        Run one island (control plane plus whatever feeds/channels its
        persisted metadata says are running).

    archipelago demo deploy --config scenario.toml [--period 1s]
        Deploy the three-island prototype against already-running islands.

    archipelago demo run --config scenario.toml [--period 1s] [--duration 60]
        Spawn the trinity, deploy, and drive the tweet/officer workload.

    archipelago demo delays --config scenario.toml --period 1s --period 2s \
            --executions 50 --seed 7 [--out-dir delays]
        Reproduce the propagation-delay experiment and write CSVs.
"""

from __future__ import annotations

import argparse
import os
import signal
import sys
import time

from archipelago.harness.config import ScenarioConfig, parse_period_text
from archipelago.island import Island, IslandConfig
from archipelago.service import IslandService


def _island_command(args) -> int:
    if args.config:
        config = IslandConfig.from_file(args.config)
    else:
        config = IslandConfig()
    if args.name:
        config.name = args.name
    if args.port is not None:
        config.port = args.port
    if args.data_dir:
        config.data_dir = args.data_dir
    if args.host:
        config.host = args.host
    island = Island(config).boot()
    service = IslandService(island).start()
    print(f"island {config.name} listening on {service.base_url}", flush=True)
    stop = {"flag": False}

    def handler(signum, frame):
        stop["flag"] = True

    signal.signal(signal.SIGTERM, handler)
    signal.signal(signal.SIGINT, handler)
    try:
        while not stop["flag"]:
            time.sleep(0.2)
    finally:
        service.stop()
        island.shutdown()
    return 0


def _load_scenario(args) -> ScenarioConfig:
    if args.config and os.path.exists(args.config):
        cfg = ScenarioConfig.from_file(args.config)
    else:
        if args.config:
            print(f"note: {args.config} not found, using defaults", file=sys.stderr)
        cfg = ScenarioConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "executions", None) is not None:
        cfg.executions = args.executions
    if getattr(args, "period", None):
        cfg.periods = list(args.period)
    return cfg


def _demo_deploy(args) -> int:
    from archipelago.harness.trinity import deploy_trinity, status

    cfg = _load_scenario(args)
    period_ms = parse_period_text(cfg.periods[0])
    cfg = cfg.with_free_ports() if not cfg.dhs.base else cfg
    deploy_trinity(cfg, period_ms)
    for name, endpoint in cfg.islands().items():
        snapshot = status(endpoint.base)
        dv = snapshot["dataverses"][name]
        print(f"{name}: datasets={sorted(dv['datasets'])} "
              f"channels={sorted(dv['channels'])}")
    return 0


def _demo_run(args) -> int:
    from archipelago.harness.sink import SubscriberSink
    from archipelago.harness.trinity import Trinity, deploy_trinity, execute
    from archipelago.harness.workload import OfficerDriver, TweetGenerator

    cfg = _load_scenario(args).with_free_ports()
    period_ms = parse_period_text(cfg.periods[0])
    workdir = args.workdir or os.path.join(".", "demo_run")
    with Trinity(cfg, workdir):
        deploy_trinity(cfg, period_ms)
        for name, endpoint in cfg.islands().items():
            print(f"{name} at {endpoint.base}")
        sink = SubscriberSink(cfg.host)
        generator = TweetGenerator(cfg)
        officers = OfficerDriver(cfg)
        execute(cfg.ocsd.base,
                f'USE ocsd; CREATE BROKER officers_console AT "{sink.url}officers";')
        execute(cfg.uci.base, f'USE uci; CREATE BROKER zotalert AT "{sink.url}alerts";')
        officers.subscribe_all("officers_console")
        execute(cfg.uci.base, "USE uci; SUBSCRIBE TO AlertsOnCampus() ON zotalert;")
        officers.start()
        generator.start()
        print("workload running; Ctrl-C to stop", flush=True)
        started = time.time()
        try:
            while args.duration <= 0 or time.time() - started < args.duration:
                time.sleep(2.0)
                county = len(sink.log_for("ThreateningEventsNear").snapshot())
                campus = len(sink.log_for("AlertsOnCampus").snapshot())
                print(f"tweets sent {generator.sent}; notification envelopes: "
                      f"county {county}, campus {campus}", flush=True)
        except KeyboardInterrupt:
            pass
        finally:
            generator.stop()
            officers.stop()
            sink.close()
    return 0


def _demo_delays(args) -> int:
    from archipelago.harness.delays import run_delay_experiment

    cfg = _load_scenario(args).with_free_ports()
    out_dir = args.out_dir
    results = run_delay_experiment(cfg, out_dir)
    for label, data in results.items():
        flag = " PARTIAL" if data["partial"] else ""
        print(f"period {label}{flag}: ocsd mean {data['ocsd']['mean']:.1f} ms, "
              f"uci mean {data['uci']['mean']:.1f} ms -> {data['csv']}")
    print(f"summary written to {os.path.join(out_dir, 'summary.txt')}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="archipelago",
        description="Federated active-data islands: run one island or drive "
                    "the three-island demo.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    island = sub.add_parser("island", help="run one island service")
    island.add_argument("--name", help="island (and default dataverse) name")
    island.add_argument("--port", type=int, help="control-plane port")
    island.add_argument("--data-dir", help="durable state directory")
    island.add_argument("--config", help="island TOML config file")
    island.add_argument("--host", help="bind host (default 127.0.0.1)")
    island.set_defaults(fn=_island_command)

    demo = sub.add_parser("demo", help="three-island prototype commands")
    demo_sub = demo.add_subparsers(dest="action", required=True)

    deploy = demo_sub.add_parser("deploy", help="deploy DDL to running islands")
    deploy.add_argument("--config", default="scenario.toml")
    deploy.add_argument("--period", action="append")
    deploy.set_defaults(fn=_demo_deploy)

    run = demo_sub.add_parser("run", help="spawn islands and drive the workload")
    run.add_argument("--config", default="scenario.toml")
    run.add_argument("--period", action="append")
    run.add_argument("--seed", type=int)
    run.add_argument("--duration", type=float, default=0.0,
                     help="seconds to run; 0 means until interrupted")
    run.add_argument("--workdir", help="island state directory")
    run.set_defaults(fn=_demo_run)

    delays = demo_sub.add_parser("delays", help="run the delay experiment")
    delays.add_argument("--config", default="scenario.toml")
    delays.add_argument("--period", action="append",
                        help="channel period (repeatable), e.g. --period 1s")
    delays.add_argument("--executions", type=int)
    delays.add_argument("--seed", type=int)
    delays.add_argument("--out-dir", default="delays")
    delays.set_defaults(fn=_demo_delays)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
