"""Island-level integration: statements over HTTP, feeds end to end,
bridges between two live islands, events, pull fetch, and restart recovery."""

import json
import socket
import threading
import time
import uuid

import pytest
import requests

from archipelago.island import Island, IslandConfig, StatementError
from archipelago.service import IslandService

from netutil import Sink
import sampledata as sd


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def words_file(tmp_path):
    path = tmp_path / "threat_words.txt"
    path.write_text("SKS\nAK47\nAR10\nGLOCK21\n")
    return str(path)


def make_island(tmp_path, words_file=None, name="test", durable=False, **kw):
    config = IslandConfig(
        name=name,
        data_dir=str(tmp_path / name),
        threat_word_list=words_file,
        retry_backoffs=(0.05, 0.05, 0.05),
        durable=durable,
        start_timers=kw.pop("start_timers", False),
        **kw,
    )
    return Island(config).boot()


DHS_DDL = """
USE dhs;
CREATE TYPE Tweet AS { tid: bigint, uid: bigint, text: string };
CREATE ACTIVE DATASET Tweets(Tweet) PRIMARY KEY tid;
CREATE TYPE WeaponRegistration AS
  { wrid: uuid, uid: bigint, weapon_name: string };
CREATE DATASET WeaponRegistrations(WeaponRegistration)
  PRIMARY KEY wrid AUTOGENERATED;
CREATE FUNCTION EnrichTweet(tweet) {
  object_merge(tweet, {
    "timestamp" : datetime_from_unix_time_in_ms(tweet.created_at),
    "location" : create_point(tweet.coordinates[0],tweet.coordinates[1]),
    "threatening_rating" : threateningRating(tweet.text),
    "user_registered_weapon": (SELECT VALUE w.weapon_name
       FROM WeaponRegistrations w WHERE w.uid = tweet.uid)})
};
"""


class TestStatementsExecution:
    def test_catalog_build_insert_query(self, tmp_path):
        island = make_island(tmp_path)
        try:
            island.execute_statements(
                """
                USE dv;
                CREATE TYPE T AS { k: bigint, label: string };
                CREATE DATASET D(T) PRIMARY KEY k;
                INSERT INTO D ([{"k": 1, "label": "one"}, {"k": 2, "label": "two"}]);
                """
            )
            results = island.execute_statements(
                "USE dv; FROM D d WHERE d.k = 2 SELECT VALUE d.label;"
            )
            assert results[-1]["results"] == ["two"]
        finally:
            island.shutdown()

    def test_failing_statement_stops_batch_but_keeps_prior(self, tmp_path):
        island = make_island(tmp_path)
        try:
            with pytest.raises(StatementError) as exc:
                island.execute_statements(
                    """
                    USE dv;
                    CREATE TYPE T AS { k: bigint };
                    CREATE DATASET D(T) PRIMARY KEY k;
                    CREATE DATASET D(T) PRIMARY KEY k;
                    CREATE DATASET NeverCreated(T) PRIMARY KEY k;
                    """
                )
            assert exc.value.index == 3
            island.catalog.get_dataset("dv", "D")
            with pytest.raises(Exception):
                island.catalog.get_dataset("dv", "NeverCreated")
        finally:
            island.shutdown()

    def test_reserved_function_name_rejected(self, tmp_path):
        island = make_island(tmp_path)
        try:
            with pytest.raises(StatementError, match="reserved"):
                island.execute_statements(
                    "USE dv; CREATE FUNCTION spatial_distance(a) { a };"
                )
        finally:
            island.shutdown()


class TestHttpService:
    @pytest.fixture
    def live(self, tmp_path, words_file):
        island = make_island(tmp_path, words_file)
        service = IslandService(island, port=0).start()
        yield island, service.base_url
        service.stop()
        island.shutdown()

    def test_statements_endpoint_roundtrip(self, live):
        island, base = live
        response = requests.post(
            f"{base}/statements",
            data="USE dv; CREATE TYPE T AS { k: bigint }; CREATE DATASET D(T) PRIMARY KEY k;",
        )
        assert response.status_code == 200
        assert [r["status"] for r in response.json()] == ["ok", "ok", "ok"]

    def test_subscribe_returns_subscription_id(self, live):
        island, base = live
        sink = Sink()
        requests.post(f"{base}/statements", data=DHS_DDL).raise_for_status()
        response = requests.post(
            f"{base}/statements",
            data=(
                'USE dhs; CREATE BROKER B AT "%s";'
                ' CREATE CONTINUOUS PUSH CHANNEL C(area) PERIOD duration("PT1S")'
                " { SELECT t FROM Tweets t WHERE is_new(t) };"
                ' SUBSCRIBE TO C("UCI") ON B;'
            ) % sink.url,
        )
        assert response.status_code == 200
        sub_id = response.json()[-1]["subscriptionId"]
        uuid.UUID(sub_id)
        sink.close()

    def test_syntax_error_gives_400_with_position(self, live):
        island, base = live
        response = requests.post(f"{base}/statements", data="CREATE NONSENSE;")
        assert response.status_code == 400
        body = response.json()
        assert body["line"] == 1 and "error" in body

    def test_query_endpoint(self, live):
        island, base = live
        requests.post(
            f"{base}/statements",
            data='USE dv; CREATE TYPE T AS { k: bigint }; CREATE DATASET D(T) '
                 'PRIMARY KEY k; INSERT INTO D ({"k": 7, "p": point("1.0,2.0")});',
        ).raise_for_status()
        response = requests.post(f"{base}/query", data="USE dv; SELECT d.k, d.p FROM D d;")
        assert response.status_code == 200
        assert response.json()["results"] == [{"k": 7, "p": [1.0, 2.0]}]

    def test_query_unknown_dataset_is_400(self, live):
        island, base = live
        response = requests.post(f"{base}/query", data="USE dv; SELECT x FROM Missing x;")
        assert response.status_code == 400

    def test_status_lists_catalog(self, live):
        island, base = live
        requests.post(
            f"{base}/statements",
            data="USE dv; CREATE TYPE T AS { k: bigint }; CREATE DATASET D(T) PRIMARY KEY k;",
        ).raise_for_status()
        status = requests.get(f"{base}/status").json()
        assert status["island"] == "test"
        assert status["dataverses"]["dv"]["datasets"]["D"]["count"] == 0

    def test_events_stream_delivers_insert_events(self, live):
        island, base = live
        requests.post(
            f"{base}/statements",
            data="USE dv; CREATE TYPE T AS { k: bigint }; CREATE DATASET D(T) PRIMARY KEY k;",
        ).raise_for_status()
        got = []

        def consume():
            with requests.get(f"{base}/events", stream=True, timeout=10) as r:
                for line in r.iter_lines(chunk_size=1):
                    got.append(line.decode())
                    if any("dataset_insert" in g for g in got) and any(
                        '"k": 5' in g or '"k":5' in g for g in got
                    ):
                        return

        thread = threading.Thread(target=consume, daemon=True)
        thread.start()
        time.sleep(0.3)
        requests.post(
            f"{base}/statements", data='USE dv; INSERT INTO D ({"k": 5});'
        ).raise_for_status()
        thread.join(timeout=5)
        assert any(g.startswith("event: dataset_insert") for g in got)
        payloads = [g for g in got if g.startswith("data:")]
        assert any('"dataset":"D"' in p.replace(" ", "") for p in payloads)


class TestFeedsEndToEnd:
    def test_socket_feed_static_count_preserved(self, tmp_path):
        island = make_island(tmp_path)
        try:
            port = free_port()
            island.execute_statements(
                f"""
                USE dv;
                CREATE TYPE T AS {{ k: bigint }};
                CREATE DATASET D(T) PRIMARY KEY k;
                CREATE FEED F WITH {{
                  "adapter-name": "socket_adapter", "format": "JSON",
                  "sockets": "127.0.0.1:{port}", "address-type": "IP",
                  "dynamic": false }};
                CONNECT FEED F TO DATASET D;
                START FEED F;
                """
            )
            with socket.create_connection(("127.0.0.1", port)) as s:
                for i in range(50):
                    s.sendall(json.dumps({"k": i}).encode() + b"\n")
            deadline = time.time() + 5
            dataset = island.catalog.get_dataset("dv", "D")
            while dataset.count() < 50 and time.time() < deadline:
                time.sleep(0.02)
            assert dataset.count() == 50
        finally:
            island.shutdown()

    def test_malformed_record_dead_letters_feed_stays_up(self, tmp_path):
        island = make_island(tmp_path)
        try:
            port = free_port()
            island.execute_statements(
                f"""
                USE dv;
                CREATE TYPE T AS {{ k: bigint }};
                CREATE DATASET D(T) PRIMARY KEY k;
                CREATE FEED F WITH {{
                  "adapter-name": "socket_adapter", "format": "JSON",
                  "sockets": "127.0.0.1:{port}", "address-type": "IP",
                  "dynamic": false }};
                CONNECT FEED F TO DATASET D;
                START FEED F;
                """
            )
            with socket.create_connection(("127.0.0.1", port)) as s:
                s.sendall(b'{"k": broken\n{"k": 1}\n')
            dataset = island.catalog.get_dataset("dv", "D")
            deadline = time.time() + 5
            while dataset.count() < 1 and time.time() < deadline:
                time.sleep(0.02)
            assert dataset.count() == 1
            rows = island.execute_statements(
                "USE dv; SELECT VALUE d.kind FROM __dead_letters d;"
            )[-1]["results"]
            assert rows == ["ingest_failure"]
        finally:
            island.shutdown()

    def test_dynamic_feed_applies_enrichment(self, tmp_path, words_file):
        island = make_island(tmp_path, words_file, name="dhs")
        try:
            port = free_port()
            island.execute_statements(DHS_DDL)
            island.execute_statements(
                'USE dhs; INSERT INTO WeaponRegistrations ([' +
                ",".join(
                    '{"uid": 73, "weapon_name": "%s"}' % w
                    for w in ("AR10", "AK47", "GLOCK21")
                ) + ']);'
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
            with socket.create_connection(("127.0.0.1", port)) as s:
                s.sendall(sd.RAW_TWEET_JSON.encode() + b"\n")
            dataset = island.catalog.get_dataset("dhs", "Tweets")
            deadline = time.time() + 5
            while dataset.count() < 1 and time.time() < deadline:
                time.sleep(0.02)
            assert dataset.scan()[0].value == sd.ENRICHED_TWEET
        finally:
            island.shutdown()

    def test_apply_function_on_static_feed_rejected(self, tmp_path):
        island = make_island(tmp_path)
        try:
            island.execute_statements(
                """
                USE dv;
                CREATE TYPE T AS { k: bigint };
                CREATE DATASET D(T) PRIMARY KEY k;
                CREATE FUNCTION Id(r) { r };
                CREATE FEED F WITH {
                  "adapter-name": "socket_adapter", "format": "JSON",
                  "sockets": "127.0.0.1:19999", "address-type": "IP",
                  "dynamic": false };
                """
            )
            with pytest.raises(StatementError, match="dynamic"):
                island.execute_statements(
                    "USE dv; CONNECT FEED F TO DATASET D APPLY FUNCTION Id;"
                )
        finally:
            island.shutdown()

    def test_start_twice_errors(self, tmp_path):
        island = make_island(tmp_path)
        try:
            port = free_port()
            island.execute_statements(
                f"""
                USE dv;
                CREATE TYPE T AS {{ k: bigint }};
                CREATE DATASET D(T) PRIMARY KEY k;
                CREATE FEED F WITH {{
                  "adapter-name": "http_adapter", "format": "JSON",
                  "addresses": "127.0.0.1:{port}", "address-type": "IP",
                  "dynamic": false }};
                CONNECT FEED F TO DATASET D;
                START FEED F;
                """
            )
            with pytest.raises(StatementError, match="already running"):
                island.execute_statements("USE dv; START FEED F;")
            with pytest.raises(StatementError, match="not running"):
                island.execute_statements("USE dv; STOP FEED F; STOP FEED F;")
        finally:
            island.shutdown()


class TestPullFetchOverHttp:
    def test_pull_channel_notice_and_fetch(self, tmp_path):
        island = make_island(tmp_path)
        service = IslandService(island, port=0).start()
        sink = Sink()
        try:
            base = service.base_url
            requests.post(f"{base}/statements", data=(
                "USE dv; CREATE TYPE T AS { k: bigint };"
                " CREATE ACTIVE DATASET D(T) PRIMARY KEY k;"
                f' CREATE BROKER B AT "{sink.url}";'
                ' CREATE CONTINUOUS PULL CHANNEL C() PERIOD duration("PT1S")'
                " { SELECT t FROM D t WHERE is_new(t) };"
                " SUBSCRIBE TO C() ON B;"
                ' INSERT INTO D ([{"k": 1}, {"k": 2}, {"k": 3}]);'
            )).raise_for_status()
            channel = island.catalog.dataverse("dv").channels["C"]
            channel.execute(island.now_ms())
            assert sink.wait_for(1)
            notice = json.loads(sink.received[0].body)
            response = requests.get(f"{base}/pull/{notice['handle']}")
            assert response.status_code == 200
            rows = response.json()["results"]
            assert [r["result"]["t"]["k"] for r in rows] == [1, 2, 3]
            assert requests.get(f"{base}/pull/{uuid.uuid4()}").status_code == 404
        finally:
            sink.close()
            service.stop()
            island.shutdown()


class TestRestartRecovery:
    def test_catalog_data_watermarks_and_subscriptions_survive(self, tmp_path, words_file):
        sink = Sink()
        island = make_island(tmp_path, words_file, durable=True)
        island.execute_statements(DHS_DDL)
        island.execute_statements(
            f'USE dhs; CREATE BROKER B AT "{sink.url}";'
            ' CREATE CONTINUOUS PUSH CHANNEL C(area) PERIOD duration("PT1S")'
            " { SELECT t.tid FROM Tweets t WHERE is_new(t) };"
        )
        sub = island.execute_statements('USE dhs; SUBSCRIBE TO C("UCI") ON B;')
        sub_id = sub[-1]["subscriptionId"]
        island.execute_statements(
            'USE dhs; INSERT INTO Tweets ([{"tid": 1, "uid": 1, "text": "a"},'
            ' {"tid": 2, "uid": 1, "text": "b"}]);'
        )
        channel = island.catalog.dataverse("dhs").channels["C"]
        channel.execute(island.now_ms())
        island.shutdown()

        again = make_island(tmp_path, words_file, durable=True)
        try:
            dataset = again.catalog.get_dataset("dhs", "Tweets")
            assert dataset.count() == 2
            channel = again.catalog.dataverse("dhs").channels["C"]
            subs = channel.subscriptions()
            assert [str(s.subscription_id) for s in subs] == [sub_id]
            # already-computed records are not redelivered after restart
            assert channel.prev[("dhs", "Tweets")] == 2
            again.execute_statements(
                'USE dhs; INSERT INTO Tweets ({"tid": 3, "uid": 1, "text": "c"});'
            )
            envelopes = channel.execute(again.now_ms())
            assert [r["tid"] for r, _ in envelopes["B"].items] == [3]
        finally:
            again.shutdown()
            sink.close()

    def test_unsubscribe_and_drop_replay(self, tmp_path):
        sink = Sink()
        island = make_island(tmp_path, durable=True)
        island.execute_statements(
            "USE dv; CREATE TYPE T AS { k: bigint };"
            " CREATE ACTIVE DATASET D(T) PRIMARY KEY k;"
            f' CREATE BROKER B AT "{sink.url}";'
            ' CREATE CONTINUOUS PUSH CHANNEL C() PERIOD duration("PT1S")'
            " { SELECT t FROM D t WHERE is_new(t) };"
        )
        sub_id = island.execute_statements("USE dv; SUBSCRIBE TO C() ON B;")[-1][
            "subscriptionId"
        ]
        island.execute_statements(f'USE dv; UNSUBSCRIBE "{sub_id}"; DROP BROKER B;')
        island.shutdown()
        again = make_island(tmp_path, durable=True)
        try:
            dv = again.catalog.dataverse("dv")
            assert dv.brokers == {}
            assert dv.channels["C"].subscriptions() == []
        finally:
            again.shutdown()
            sink.close()


class TestBridgeLifecycle:
    @pytest.fixture
    def remote_island(self, tmp_path, words_file):
        """The upstream island holding the detection channel."""
        island = make_island(tmp_path, words_file, name="dhs")
        service = IslandService(island, port=0).start()
        island.execute_statements(DHS_DDL)
        island.execute_statements(
            'USE dhs; CREATE CONTINUOUS PUSH CHANNEL ThreateningTweetsAt(area_name)'
            ' PERIOD duration("PT0.2S") {'
            "  SELECT t.area_name, t.text, t.location, t.threatening_rating,"
            "    t.user_registered_weapon FROM Tweets t"
            "  WHERE t.area_name = area_name"
            "    AND t.threatening_rating > 0 AND is_new(t) };"
        )
        yield island, service
        service.stop()
        island.shutdown()

    def local_island(self, tmp_path, remote_port, feed_port, name="ocsd"):
        island = make_island(tmp_path, name=name)
        island.execute_statements(
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
              "bad-host" : "127.0.0.1:{remote_port}",
              "bad-channel" : "ThreateningTweetsAt",
              "bad-channel-parameters": "\\"OC\\";\\"UCI\\"",
              "bad-dataverse": "dhs",
              "dynamic": false }};
            CONNECT FEED LocalThreateningTweetFeed
              TO DATASET LocalThreateningTweets;
            """
        )
        return island

    def remote_catalog(self, remote):
        status = remote.status()
        dv = status["dataverses"]["dhs"]
        subs = [
            s for s in dv["channels"]["ThreateningTweetsAt"]["subscriptions"]
        ]
        return dv["brokers"], subs

    def test_start_creates_remote_broker_and_two_subscriptions(self, tmp_path, remote_island):
        remote, remote_service = remote_island
        feed_port = free_port()
        local = self.local_island(tmp_path, remote_service.port, feed_port)
        try:
            local.execute_statements("USE ocsd; START FEED LocalThreateningTweetFeed;")
            brokers, subs = self.remote_catalog(remote)
            assert list(brokers) == ["bridge_ocsd_LocalThreateningTweetFeed"]
            assert brokers["bridge_ocsd_LocalThreateningTweetFeed"]["type"] == "BAD"
            assert brokers["bridge_ocsd_LocalThreateningTweetFeed"]["endpoint"] == (
                f"http://127.0.0.1:{feed_port}/"
            )
            assert sorted(s["arguments"][0] for s in subs) == ["OC", "UCI"]

            local.execute_statements("USE ocsd; STOP FEED LocalThreateningTweetFeed;")
            brokers, subs = self.remote_catalog(remote)
            assert brokers == {} and subs == []

            # start/stop/start settles on exactly one broker, two subscriptions
            local.execute_statements("USE ocsd; START FEED LocalThreateningTweetFeed;")
            brokers, subs = self.remote_catalog(remote)
            assert len(brokers) == 1 and len(subs) == 2
        finally:
            local.shutdown()

    def test_tweets_flow_across_the_bridge(self, tmp_path, remote_island):
        remote, remote_service = remote_island
        feed_port = free_port()
        local = self.local_island(tmp_path, remote_service.port, feed_port)
        try:
            local.execute_statements("USE ocsd; START FEED LocalThreateningTweetFeed;")
            remote.execute_statements(
                "USE dhs; INSERT INTO WeaponRegistrations"
                ' ({"uid": 73, "weapon_name": "AR10"});'
            )
            remote.execute_statements(
                "USE dhs; INSERT INTO Tweets ({"
                '"tid": 1, "uid": 73, "area_name": "UCI",'
                '"text": "Saul fires AK47", '
                '"location": point("33.6,-117.8"), "threatening_rating": 1,'
                '"user_registered_weapon": ["AR10"]});'
            )
            channel = remote.catalog.dataverse("dhs").channels["ThreateningTweetsAt"]
            channel.execute(remote.now_ms())
            remote.hub.flush(5)
            stored = local.catalog.get_dataset("ocsd", "LocalThreateningTweets")
            deadline = time.time() + 5
            while stored.count() < 1 and time.time() < deadline:
                time.sleep(0.02)
            envelope = stored.scan()[0].value
            assert envelope["channelName"] == "ThreateningTweetsAt"
            assert envelope["results"][0]["result"]["text"] == "Saul fires AK47"

            # no-compute-when-stopped: after stop, new tweets produce nothing here
            local.execute_statements("USE ocsd; STOP FEED LocalThreateningTweetFeed;")
            remote.execute_statements(
                "USE dhs; INSERT INTO Tweets ({"
                '"tid": 2, "uid": 73, "area_name": "UCI",'
                '"text": "Todd fires AK47",'
                '"location": point("33.6,-117.8"), "threatening_rating": 1,'
                '"user_registered_weapon": ["AR10"]});'
            )
            channel.execute(remote.now_ms())
            remote.hub.flush(5)
            time.sleep(0.2)
            assert stored.count() == 1
        finally:
            local.shutdown()

    def test_start_fails_atomically_when_remote_unreachable(self, tmp_path):
        feed_port = free_port()
        local = self.local_island(tmp_path, free_port(), feed_port)
        try:
            with pytest.raises(StatementError, match="unreachable"):
                local.execute_statements(
                    "USE ocsd; START FEED LocalThreateningTweetFeed;"
                )
            feed = local.catalog.dataverse("ocsd").feeds["LocalThreateningTweetFeed"]
            assert not feed.running
            assert feed.binding.state == "stopped"
        finally:
            local.shutdown()


class TestIslandExtras:
    def test_channel_period_override(self, tmp_path):
        config = IslandConfig(
            name="exp", data_dir=str(tmp_path / "exp"), durable=False,
            start_timers=False, channel_period_override="PT0.25S",
        )
        island = Island(config).boot()
        try:
            island.execute_statements(
                "USE dv; CREATE TYPE T AS { k: bigint };"
                " CREATE ACTIVE DATASET D(T) PRIMARY KEY k;"
                ' CREATE CONTINUOUS PUSH CHANNEL C() PERIOD duration("PT10S")'
                " { SELECT t FROM D t WHERE is_new(t) };"
            )
            assert island.catalog.dataverse("dv").channels["C"].period_ms == 250
        finally:
            island.shutdown()

    def test_delivery_failures_land_in_queryable_dead_letters(self, tmp_path):
        island = make_island(tmp_path)
        try:
            island.execute_statements(
                "USE dv; CREATE TYPE T AS { k: bigint };"
                " CREATE ACTIVE DATASET D(T) PRIMARY KEY k;"
                ' CREATE BROKER nowhere AT "http://127.0.0.1:9/";'
                ' CREATE CONTINUOUS PUSH CHANNEL C() PERIOD duration("PT1S")'
                " { SELECT t FROM D t WHERE is_new(t) };"
                " SUBSCRIBE TO C() ON nowhere;"
                ' INSERT INTO D ({"k": 1});'
            )
            channel = island.catalog.dataverse("dv").channels["C"]
            channel.execute(island.now_ms())
            island.hub.flush(15)
            deadline = time.time() + 5
            rows = []
            while time.time() < deadline:
                rows = island.execute_statements(
                    "USE dv; FROM __dead_letters d WHERE d.kind = \"delivery_failure\""
                    " SELECT d.broker, d.error;"
                )[-1]["results"]
                if rows:
                    break
                time.sleep(0.05)
            assert rows and rows[0]["broker"] == "nowhere"
        finally:
            island.shutdown()

    def test_cli_island_and_demo_help(self):
        import subprocess, sys

        for args in (["--help"], ["island", "--help"], ["demo", "--help"],
                     ["demo", "delays", "--help"]):
            proc = subprocess.run(
                [sys.executable, "-m", "archipelago.cli", *args],
                capture_output=True, timeout=30,
            )
            assert proc.returncode == 0, proc.stderr


class TestBrokerRegistry:
    def test_remove_in_use_broker_names_blockers(self, tmp_path):
        island = make_island(tmp_path)
        sink = Sink()
        try:
            island.execute_statements(
                "USE dv; CREATE TYPE T AS { k: bigint };"
                " CREATE ACTIVE DATASET D(T) PRIMARY KEY k;"
                f' CREATE BROKER B AT "{sink.url}";'
                ' CREATE CONTINUOUS PUSH CHANNEL C() PERIOD duration("PT1S")'
                " { SELECT t FROM D t WHERE is_new(t) };"
            )
            sub_id = island.execute_statements("USE dv; SUBSCRIBE TO C() ON B;")[-1][
                "subscriptionId"
            ]
            with pytest.raises(StatementError, match=sub_id):
                island.execute_statements("USE dv; DROP BROKER B;")
            island.execute_statements(
                f'USE dv; UNSUBSCRIBE "{sub_id}"; DROP BROKER B;'
            )
            assert island.catalog.dataverse("dv").brokers == {}
        finally:
            sink.close()
            island.shutdown()

    def test_subscribe_to_unknown_broker_fails(self, tmp_path):
        island = make_island(tmp_path)
        try:
            island.execute_statements(
                "USE dv; CREATE TYPE T AS { k: bigint };"
                " CREATE ACTIVE DATASET D(T) PRIMARY KEY k;"
                ' CREATE CONTINUOUS PUSH CHANNEL C() PERIOD duration("PT1S")'
                " { SELECT t FROM D t WHERE is_new(t) };"
            )
            with pytest.raises(StatementError, match="unknown broker"):
                island.execute_statements("USE dv; SUBSCRIBE TO C() ON ghost;")
        finally:
            island.shutdown()


class TestEventsHeartbeat:
    def test_idle_stream_sends_heartbeats(self, tmp_path, monkeypatch):
        from archipelago import service as service_module

        monkeypatch.setattr(service_module, "HEARTBEAT_SECONDS", 0.2)
        island = make_island(tmp_path)
        service = IslandService(island, port=0).start()
        try:
            got = []
            with requests.get(f"{service.base_url}/events", stream=True, timeout=5) as r:
                for line in r.iter_lines(chunk_size=1):
                    got.append(line.decode())
                    if any("heartbeat" in g for g in got):
                        break
            assert any(g.startswith(": heartbeat") for g in got)
        finally:
            service.stop()
            island.shutdown()


class TestBridgeDirtyStop:
    def test_stop_with_remote_down_closes_locally_and_marks_dirty(self, tmp_path, words_file):
        remote = make_island(tmp_path, words_file, name="dhs")
        service = IslandService(remote, port=0).start()
        remote.execute_statements(DHS_DDL)
        remote.execute_statements(
            'USE dhs; CREATE CONTINUOUS PUSH CHANNEL ThreateningTweetsAt(a)'
            ' PERIOD duration("PT1S") { SELECT t FROM Tweets t WHERE is_new(t) };'
        )
        feed_port = free_port()
        local = make_island(tmp_path, name="ocsd")
        try:
            local.execute_statements(
                f"""
                USE ocsd;
                CREATE TYPE L AS {{ channelExecutionEpochTime: bigint,
                  dataverseName: string, channelName: string }};
                CREATE ACTIVE DATASET LocalThreateningTweets(L)
                  PRIMARY KEY channelExecutionEpochTime;
                CREATE FEED F WITH {{
                  "adapter-name": "http_adapter",
                  "addresses": "127.0.0.1:{feed_port}",
                  "address-type": "IP", "type-name": "L", "format": "adm",
                  "bad-host": "127.0.0.1:{service.port}",
                  "bad-channel": "ThreateningTweetsAt",
                  "bad-channel-parameters": "\\"OC\\"",
                  "bad-dataverse": "dhs", "dynamic": false }};
                CONNECT FEED F TO DATASET LocalThreateningTweets;
                START FEED F;
                """
            )
            service.stop()  # remote island goes dark
            local.execute_statements("USE ocsd; STOP FEED F;")
            feed = local.catalog.dataverse("ocsd").feeds["F"]
            assert not feed.running
            assert feed.binding.state == "stopped-dirty"
        finally:
            local.shutdown()
            remote.shutdown()
