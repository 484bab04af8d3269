"""Declaring a catalog and querying it, all through statements.

An island embedded in this process: types, an active dataset, inserts with
typed literals, and ad-hoc queries including a spatially ordered subquery.
"""

import tempfile

from archipelago.island import Island, IslandConfig

island = Island(IslandConfig(name="demo", data_dir=tempfile.mkdtemp(),
                             durable=False, start_timers=False)).boot()

island.execute_statements(
    """
    USE campus;
    CREATE TYPE SecurityStation AS { sid: bigint, location: point };
    CREATE DATASET SecurityStations(SecurityStation) PRIMARY KEY sid;
    INSERT INTO SecurityStations ([
      {"sid": 0, "location": point("33.646866723393266,-117.84170161534618"),
       "name": "Station # 0"},
      {"sid": 1, "location": point("33.64792551859947,-117.84013290702327"),
       "name": "Station # 1"},
      {"sid": 2, "location": point("33.65010,-117.84460"), "name": "Station # 2"}
    ]);
    """
)

result = island.execute_statements(
    """
    USE campus;
    FROM SecurityStations s
    LET dist = spatial_distance(point("33.64921228736088,-117.84181977473024"),
                                s.location)
    SELECT s.name, dist * 100 AS dist_km
    ORDER BY dist;
    """
)
print("stations by distance from the tweet:")
for row in result[-1]["results"]:
    print(f"  {row['name']}: {row['dist_km']:.6f} km")

# Field access on absent attributes filters rows instead of failing.
rows = island.execute_statements(
    "USE campus; SELECT s.sid FROM SecurityStations s WHERE s.closed = true;"
)[-1]["results"]
print("closed stations (none declared a 'closed' field):", rows)

island.shutdown()
