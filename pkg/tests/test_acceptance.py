"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The delay experiment
(criterion 6) runs the full three-island pipeline twice and takes about
three minutes; everything else is seconds.
"""

import json
import os
import random
import socket
import tempfile
import time
import uuid

import pytest
import requests

from archipelago.adm import parse_adm_text, serialize_adm, to_general_json
from archipelago.brokers import Broker, BrokerHub, Envelope
from archipelago.channels import Channel
from archipelago.ddl import (
    parse_channel_body,
    parse_channel_parameters,
    parse_statements,
    render_statement,
)
from archipelago.engine import compile_query, spatial_distance
from archipelago.harness.config import ScenarioConfig
from archipelago.harness.delays import run_delay_experiment
from archipelago.island import Island, IslandConfig
from archipelago.service import IslandService
from archipelago.storage import Catalog, FieldSpec, TypeDef, WatermarkStore

import corpus
import sampledata as sd
from netutil import Sink
from test_engine import CAMPUS_BODY, campus_catalog
from test_island_service import DHS_DDL, free_port


def report(criterion: str, detail: str) -> None:
    print(f"PASS {criterion}: {detail}")


@pytest.fixture
def words_file(tmp_path):
    path = tmp_path / "threat_words.txt"
    path.write_text("SKS\nAK47\nAR10\nGLOCK21\n")
    return str(path)


def make_island(tmp_path, words_file=None, name="accept", durable=True):
    config = IslandConfig(
        name=name, data_dir=str(tmp_path / name), threat_word_list=words_file,
        retry_backoffs=(0.05, 0.05, 0.05), durable=durable, start_timers=False,
    )
    return Island(config).boot()


def test_a1_enrichment_fidelity(tmp_path, words_file):
    """Ingesting the raw walkthrough tweet through the dynamic feed yields
    the published enriched record, in under a second."""
    island = make_island(tmp_path, words_file, name="dhs")
    try:
        port = free_port()
        island.execute_statements(DHS_DDL)
        island.execute_statements(
            'USE dhs; INSERT INTO WeaponRegistrations (['
            '{"uid": 73, "weapon_name": "AR10"},'
            '{"uid": 73, "weapon_name": "AK47"},'
            '{"uid": 73, "weapon_name": "GLOCK21"}]);'
        )
        island.execute_statements(
            f"""
            USE dhs;
            CREATE FEED TweetFeed WITH {{
              "adapter-name": "socket_adapter", "format": "JSON",
              "sockets": "127.0.0.1:{port}", "address-type": "IP",
              "dynamic": true }};
            CONNECT FEED TweetFeed TO DATASET Tweets APPLY FUNCTION EnrichTweet;
            START FEED TweetFeed;
            """
        )
        dataset = island.catalog.get_dataset("dhs", "Tweets")
        started = time.perf_counter()
        with socket.create_connection(("127.0.0.1", port)) as s:
            s.sendall(sd.RAW_TWEET_JSON.encode() + b"\n")
        while dataset.count() < 1:
            assert time.perf_counter() - started < 1.0, "ingestion exceeded 1 s"
            time.sleep(0.005)
        elapsed = time.perf_counter() - started
        stored = dataset.scan()[0].value
        assert stored == sd.ENRICHED_TWEET
        assert stored["threatening_rating"] == 2
        assert stored["user_registered_weapon"] == ["AR10", "AK47", "GLOCK21"]
        assert stored["timestamp"].to_text() == "2020-06-26T03:26:58.123Z"
        assert stored["location"] == sd.TWEET_LOCATION
        report("A1", f"raw tweet enriched to the published record in {elapsed*1000:.0f} ms")
    finally:
        island.shutdown()


def test_a2_spatial_oracle():
    """Station distances match the published values within 1e-9 and the
    campus alert orders stations exactly as published, in under a second."""
    started = time.perf_counter()
    d1 = spatial_distance(sd.TWEET_LOCATION, sd.STATION_1_LOCATION) * 100
    d0 = spatial_distance(sd.TWEET_LOCATION, sd.STATION_0_LOCATION) * 100
    assert abs(d1 - sd.STATION_1_DIST_KM) <= 1e-9
    assert abs(d0 - sd.STATION_0_DIST_KM) <= 1e-9

    catalog = campus_catalog()
    ast = parse_channel_body(CAMPUS_BODY)
    plan = compile_query(ast, catalog, "uci", params=[])
    tweets = catalog.get_dataset("uci", "LocalThreateningTweets")
    from archipelago.engine import ExecutionContext, execute_query

    ctx = ExecutionContext(
        catalog,
        watermarks={("uci", "LocalThreateningTweets"): (0, tweets.snapshot_seqno())},
        default_dataverse="uci",
    )
    rows = execute_query(plan, ctx)
    dists = rows[0]["station_dist"]
    assert [d["stationInfo"]["sid"] for d in dists] == [1, 0]
    assert dists[0]["dist_km"] == d1 and dists[1]["dist_km"] == d0
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0
    report("A2", f"distances exact, station order [1, 0], {elapsed*1000:.0f} ms")


def test_a3_envelope_shape():
    """The transcribed notification round-trips byte-identically and 100+
    generated executions emit envelopes with exactly the published shape."""
    assert serialize_adm(parse_adm_text(sd.NOTIFICATION_TEXT)) == sd.NOTIFICATION_TEXT

    catalog = Catalog()
    catalog.create_type(
        "dv", TypeDef("T", (FieldSpec("k", "bigint"), FieldSpec("tag", "string")))
    )
    dataset = catalog.create_dataset("dv", "D", "T", "k", True, False)
    body = parse_channel_body("SELECT t.k, t.tag FROM D t WHERE is_new(t)")
    plan = compile_query(body, catalog, "dv", params=[])
    channel = Channel(
        catalog, "dv", "Shapes", [], "PT1S", body, plan,
        BrokerHub(retry_backoffs=()), WatermarkStore(None),
    )
    rng = random.Random(3)
    for i in range(3):
        channel.subscribe([], f"broker_{i}")
    checked = 0
    key = 0
    for execution in range(110):
        rows = rng.randint(0, 4)
        for _ in range(rows):
            key += 1
            dataset.insert([{"k": key, "tag": rng.choice("abcdef") * rng.randint(1, 3)}])
        envelopes = channel.execute(1_600_000_000_000 + execution * 1000)
        for envelope in envelopes.values():
            value = envelope.build(1_600_000_000_000 + execution * 1000 + rng.randint(0, 40))
            assert list(value) == [
                "dataverseName", "channelName", "channelExecutionEpochTime", "results",
            ]
            assert value["results"], "empty executions must send nothing"
            for item in value["results"]:
                assert list(item) == [
                    "result", "channelExecutionTime", "subscriptionId", "deliveryTime",
                ]
                assert item["deliveryTime"].millis >= item["channelExecutionTime"].millis
            assert parse_adm_text(serialize_adm(value)) == value
            checked += 1
    assert checked >= 100
    report("A3", f"byte-identical round-trip; {checked} generated envelopes well-shaped")


def _read_wal_values(path):
    """Independent reader for the length-prefixed dataset log format."""
    values = []
    with open(path, "rb") as f:
        while True:
            header = f.readline()
            if not header:
                return values
            payload = f.read(int(header))
            f.readline()
            values.append(parse_adm_text(payload.decode("utf-8")))


def test_a4_exactly_once_is_new(tmp_path):
    """A seeded 500-tweet stream over 25 executions: every qualifying tweet
    is delivered exactly once per subscription, verified against the log."""
    from archipelago.harness.trinity import threat_words_path

    island = make_island(tmp_path, threat_words_path(), name="dhs", durable=True)
    sink = Sink()
    try:
        port = free_port()
        island.execute_statements(DHS_DDL)
        island.execute_statements(
            f"""
            USE dhs;
            CREATE FEED TweetFeed WITH {{
              "adapter-name": "socket_adapter", "format": "JSON",
              "sockets": "127.0.0.1:{port}", "address-type": "IP",
              "dynamic": true }};
            CONNECT FEED TweetFeed TO DATASET Tweets APPLY FUNCTION EnrichTweet;
            START FEED TweetFeed;
            CREATE BROKER listener AT "{sink.url}";
            CREATE CONTINUOUS PUSH CHANNEL ThreateningTweetsAt(area_name)
             PERIOD duration("PT1S") {{
              SELECT t.area_name, t.text, t.location, t.threatening_rating,
                t.user_registered_weapon FROM Tweets t
              WHERE t.area_name = area_name
                AND t.threatening_rating > 0 AND is_new(t) }};
            """
        )
        oc = island.execute_statements(
            'USE dhs; SUBSCRIBE TO ThreateningTweetsAt("OC") ON listener;'
        )[-1]["subscriptionId"]
        uci = island.execute_statements(
            'USE dhs; SUBSCRIBE TO ThreateningTweetsAt("UCI") ON listener;'
        )[-1]["subscriptionId"]

        cfg = ScenarioConfig(seed=1234)
        cfg.dhs.ports["TweetFeed"] = port
        generator = __import__(
            "archipelago.harness.workload", fromlist=["TweetGenerator"]
        ).TweetGenerator(cfg)
        channel = island.catalog.dataverse("dhs").channels["ThreateningTweetsAt"]
        dataset = island.catalog.get_dataset("dhs", "Tweets")
        executions = 0
        with socket.create_connection(("127.0.0.1", port)) as s:
            for chunk in range(25):
                generator.pump(20, s)
                deadline = time.time() + 10
                while dataset.count() < (chunk + 1) * 20:
                    assert time.time() < deadline, "ingestion stalled"
                    time.sleep(0.005)
                channel.execute(1_600_000_000_000 + chunk * 1000)
                executions += 1
        assert executions >= 20
        island.hub.flush(20)

        delivered = {oc: [], uci: []}
        for request in sink.received:
            envelope = json.loads(request.body)
            for item in envelope["results"]:
                delivered[item["subscriptionId"]].append(item["result"]["text"])
        wal = os.path.join(
            island.config.data_dir, "datasets", "dhs.Tweets.wal.0"
        )
        logged = _read_wal_values(wal)
        assert len(logged) == 500
        for sub_id, area in ((oc, "OC"), (uci, "UCI")):
            expected = [
                v["text"] for v in logged
                if v["area_name"] == area and v["threatening_rating"] > 0
            ]
            got = delivered[sub_id]
            assert sorted(got) == sorted(expected), f"{area}: miss or duplicate"
            assert len(got) == len(set(got)), f"{area}: duplicate delivery"
        total = sum(len(v) for v in delivered.values())
        report("A4", f"500 tweets, {executions} executions, {total} deliveries, "
                     "zero misses, zero duplicates")
    finally:
        sink.close()
        island.shutdown()


def test_a5_bridge_lifecycle(tmp_path, words_file):
    """Starting the bridge creates exactly one typed broker plus two
    subscriptions remotely; stopping removes them; start/stop/start is
    idempotent in final state."""
    remote = make_island(tmp_path, words_file, name="dhs")
    service = IslandService(remote, port=0).start()
    local = None
    try:
        remote.execute_statements(DHS_DDL)
        remote.execute_statements(
            'USE dhs; CREATE CONTINUOUS PUSH CHANNEL ThreateningTweetsAt(area_name)'
            ' PERIOD duration("PT1S") { SELECT t FROM Tweets t WHERE'
            " t.area_name = area_name AND is_new(t) };"
        )
        local = make_island(tmp_path, name="ocsd")
        feed_port = free_port()
        local.execute_statements(
            f"""
            USE ocsd;
            CREATE TYPE LocalThreateningTweet AS
              {{ channelExecutionEpochTime: bigint,
                dataverseName: string, channelName: string }};
            CREATE ACTIVE DATASET LocalThreateningTweets(LocalThreateningTweet)
              PRIMARY KEY channelExecutionEpochTime;
            CREATE FEED LocalThreateningTweetFeed WITH {{
              "adapter-name" : "http_adapter",
              "addresses" : "127.0.0.1:{feed_port}",
              "address-type" : "IP",
              "type-name" : "LocalThreateningTweet",
              "format" : "adm",
              "bad-host" : "127.0.0.1:{service.port}",
              "bad-channel" : "ThreateningTweetsAt",
              "bad-channel-parameters": "\\"OC\\";\\"UCI\\"",
              "bad-dataverse": "dhs",
              "dynamic": false }};
            CONNECT FEED LocalThreateningTweetFeed TO DATASET LocalThreateningTweets;
            """
        )

        def remote_state():
            dv = requests.get(f"{service.base_url}/status").json()["dataverses"]["dhs"]
            subs = dv["channels"]["ThreateningTweetsAt"]["subscriptions"]
            return dv["brokers"], sorted(s["arguments"][0] for s in subs)

        local.execute_statements("USE ocsd; START FEED LocalThreateningTweetFeed;")
        brokers, args = remote_state()
        assert list(brokers) == ["bridge_ocsd_LocalThreateningTweetFeed"]
        assert brokers["bridge_ocsd_LocalThreateningTweetFeed"]["type"] == "BAD"
        assert args == ["OC", "UCI"]

        local.execute_statements("USE ocsd; STOP FEED LocalThreateningTweetFeed;")
        assert remote_state() == ({}, [])

        local.execute_statements("USE ocsd; START FEED LocalThreateningTweetFeed;")
        local.execute_statements("USE ocsd; STOP FEED LocalThreateningTweetFeed;")
        local.execute_statements("USE ocsd; START FEED LocalThreateningTweetFeed;")
        brokers, args = remote_state()
        assert len(brokers) == 1 and args == ["OC", "UCI"]
        report("A5", "remote broker and two subscriptions created, removed, "
                     "and recreated idempotently")
    finally:
        if local is not None:
            local.shutdown()
        service.stop()
        remote.shutdown()


def test_a6_delay_experiment(tmp_path):
    """Full pipeline at 10 tweets/s, half threatening, 100 officers, 100
    campus subscriptions, 50 executions at 1 s and 2 s periods, in under
    five minutes; batching raises delays, 1 s-period delays are stable,
    campus delays are not below county delays."""
    cfg = ScenarioConfig(
        seed=7, tweet_rate=10.0, threatening_fraction=0.5, officer_count=100,
        uci_subscription_count=100, executions=50, periods=["1s", "2s"],
        durable=True,
    ).with_free_ports()
    started = time.perf_counter()
    results = run_delay_experiment(cfg, str(tmp_path / "delays"))
    elapsed = time.perf_counter() - started
    assert elapsed < 300, f"experiment took {elapsed:.0f} s"
    for label in ("1s", "2s"):
        assert not results[label]["partial"], f"{label} run incomplete"
        assert os.path.exists(results[label]["csv"])
    for island in ("ocsd", "uci"):
        assert results["2s"][island]["mean"] > results["1s"][island]["mean"], (
            f"{island}: longer period must batch more and delay more"
        )
        assert results["1s"][island]["cv_after_skip"] < 0.5, (
            f"{island}: 1 s-period delays not stable"
        )
    for label in ("1s", "2s"):
        assert results[label]["uci"]["mean"] >= results[label]["ocsd"]["mean"], (
            f"{label}: campus island should not be faster than county"
        )
    # sanity bound: three chained channels plus slack
    for label, period_ms in (("1s", 1000), ("2s", 2000)):
        for island in ("ocsd", "uci"):
            worst = max(r.mean_delay_ms for r in results[label]["records"][island])
            assert worst <= 3 * period_ms + 5000
    report(
        "A6",
        "in {:.0f} s; 1s means ocsd {:.0f}/uci {:.0f} ms, 2s means ocsd {:.0f}/"
        "uci {:.0f} ms, cv {:.3f}/{:.3f}".format(
            elapsed,
            results["1s"]["ocsd"]["mean"], results["1s"]["uci"]["mean"],
            results["2s"]["ocsd"]["mean"], results["2s"]["uci"]["mean"],
            results["1s"]["ocsd"]["cv_after_skip"],
            results["1s"]["uci"]["cv_after_skip"],
        ),
    )


def test_a7_parser_corpus():
    """Every published statement parses, pretty-prints, and re-parses to an
    equal AST; the packed parameter strings decode to their argument lists."""
    statements = 0
    for name, source in corpus.ALL_SOURCES.items():
        parsed = parse_statements(source)
        rendered = "".join(render_statement(s) + ";\n" for s in parsed)
        assert parse_statements(rendered) == parsed, name
        statements += len(parsed)
    assert parse_channel_parameters('\\"OC\\";\\"UCI\\"') == [["OC"], ["UCI"]]
    assert parse_channel_parameters(
        "PARAM_1-1,PARAM_1-2;PARAM2-1,PARAM_2-2"
    ) == [["PARAM_1-1", "PARAM_1-2"], ["PARAM2-1", "PARAM_2-2"]]
    report("A7", f"{statements} statements round-tripped; parameter strings decode")


def test_a8_dual_format_delivery(tmp_path):
    """One channel with one untyped and one typed broker emits both wire
    formats with equal logical content per execution."""
    island = make_island(tmp_path, name="dual")
    sink_json = Sink()
    sink_adm = Sink()
    try:
        island.execute_statements(
            f"""
            USE dv;
            CREATE TYPE T AS {{ k: bigint }};
            CREATE ACTIVE DATASET D(T) PRIMARY KEY k;
            CREATE BROKER plain AT "{sink_json.url}";
            CREATE BROKER typed AT "{sink_adm.url}" WITH {{ "broker-type": "BAD" }};
            CREATE CONTINUOUS PUSH CHANNEL C() PERIOD duration("PT1S")
              {{ SELECT t.k, create_point(1.5, -2.5) AS mark FROM D t WHERE is_new(t) }};
            SUBSCRIBE TO C() ON plain;
            SUBSCRIBE TO C() ON typed;
            INSERT INTO D ([{{"k": 1}}, {{"k": 2}}]);
            """
        )
        channel = island.catalog.dataverse("dv").channels["C"]
        channel.execute(island.now_ms())
        assert sink_json.wait_for(1) and sink_adm.wait_for(1)
        json_req = sink_json.received[0]
        adm_req = sink_adm.received[0]
        assert json_req.content_type == "application/json"
        assert adm_req.content_type == "application/x-adm"
        adm_value = parse_adm_text(adm_req.body.decode())
        json_value = json.loads(json_req.body)
        normalized = json.loads(to_general_json(adm_value))
        # subscription ids differ per subscription; everything else must agree
        for value in (json_value, normalized):
            for item in value["results"]:
                item.pop("subscriptionId")
        assert json_value == normalized
        assert json_value["results"][0]["result"]["mark"] == [1.5, -2.5]
        report("A8", "both formats delivered with equal logical content and "
                     "correct content types")
    finally:
        sink_json.close()
        sink_adm.close()
        island.shutdown()
