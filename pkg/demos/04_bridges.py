"""One island's channel becomes another island's feed.

Two islands run in this process. The downstream island declares a bridge
feed naming the upstream channel; START FEED registers a typed broker
upstream and subscribes, records then flow automatically, and STOP FEED
cleans the remote state up again.
"""

import socket
import tempfile
import time

from archipelago.island import Island, IslandConfig
from archipelago.service import IslandService


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


upstream = Island(IslandConfig(name="upstream", data_dir=tempfile.mkdtemp(),
                               durable=False, start_timers=True)).boot()
upstream_http = IslandService(upstream, port=0).start()
upstream.execute_statements(
    """
    USE hq;
    CREATE TYPE Alert AS { aid: bigint, zone: string };
    CREATE ACTIVE DATASET Alerts(Alert) PRIMARY KEY aid;
    CREATE CONTINUOUS PUSH CHANNEL AlertsIn(zone) PERIOD duration("PT0.3S")
      { SELECT a.aid, a.zone FROM Alerts a WHERE a.zone = zone AND is_new(a) };
    """
)

downstream = Island(IslandConfig(name="branch", data_dir=tempfile.mkdtemp(),
                                 durable=False, start_timers=False)).boot()
feed_port = free_port()
downstream.execute_statements(
    f"""
    USE local;
    CREATE TYPE Incoming AS {{ channelExecutionEpochTime: bigint,
      dataverseName: string, channelName: string }};
    CREATE ACTIVE DATASET IncomingAlerts(Incoming)
      PRIMARY KEY channelExecutionEpochTime;
    CREATE FEED AlertBridge WITH {{
      "adapter-name": "http_adapter", "format": "ADM",
      "addresses": "127.0.0.1:{feed_port}", "address-type": "IP",
      "type-name": "Incoming",
      "bad-host": "127.0.0.1:{upstream_http.port}",
      "bad-channel": "AlertsIn",
      "bad-channel-parameters": "\\"west\\";\\"east\\"",
      "bad-dataverse": "hq",
      "dynamic": false }};
    CONNECT FEED AlertBridge TO DATASET IncomingAlerts;
    START FEED AlertBridge;
    """
)

state = upstream.status()["dataverses"]["hq"]
print("upstream now has broker(s):", list(state["brokers"]))
print("subscription arguments:",
      [s["arguments"] for s in state["channels"]["AlertsIn"]["subscriptions"]])

upstream.execute_statements(
    'USE hq; INSERT INTO Alerts ([{"aid": 1, "zone": "west"},'
    ' {"aid": 2, "zone": "north"}, {"aid": 3, "zone": "east"}]);'
)
stored = downstream.catalog.get_dataset("local", "IncomingAlerts")
deadline = time.time() + 5
while stored.count() == 0 and time.time() < deadline:
    time.sleep(0.05)
envelope = stored.scan()[0].value
print("downstream stored an envelope from",
      envelope["dataverseName"], "/", envelope["channelName"],
      "carrying aids", [i["result"]["aid"] for i in envelope["results"]])

downstream.execute_statements("USE local; STOP FEED AlertBridge;")
state = upstream.status()["dataverses"]["hq"]
print("after STOP FEED, upstream brokers:", list(state["brokers"]),
      "subscriptions:", state["channels"]["AlertsIn"]["subscriptions"])

downstream.shutdown()
upstream_http.stop()
upstream.shutdown()
