"""The typed data model and its two wire formats.

One record travels the whole pipeline: raw JSON in, typed attributes added
by enrichment, typed text out to broker islands, plain JSON out to everyone
else. This script walks that record through both serializations.
"""

from archipelago.adm import (
    Datetime,
    Point,
    object_merge,
    parse_adm_text,
    serialize_adm,
    to_general_json,
)

RAW = """
{
  "tid": 1593142018123,
  "uid": 73,
  "area_name": "UCI",
  "text": "Saul Goodman builds SKS, and Todd Alquist fires AK47, but Skyler White sells Cabbage.",
  "coordinates": [33.64921228736088, -117.84181977473024],
  "created_at": 1593142018123
}
"""

tweet = parse_adm_text(RAW)
print("raw tweet keys:", list(tweet))

# Enrichment merges typed attributes next to the raw ones.
enriched = object_merge(
    tweet,
    {
        "timestamp": Datetime(tweet["created_at"]),
        "location": Point(*tweet["coordinates"]),
        "threatening_rating": 2,
        "user_registered_weapon": ["AR10", "AK47", "GLOCK21"],
    },
)
print("\ntyped text (for broker islands):")
print(serialize_adm(enriched))

print("\nplain JSON (for general brokers):")
print(to_general_json(enriched))

# The typed form round-trips exactly.
assert parse_adm_text(serialize_adm(enriched)) == enriched
print("\nround-trip: exact")

# Constructor literals parse anywhere JSON values do.
value = parse_adm_text(
    '{"when": datetime("2020-06-26T03:26:58.123Z"),'
    ' "where": point("33.64921228736088,-117.84181977473024"),'
    ' "zone": rectangle("33.648,-117.843 33.649,-117.841"),'
    ' "every": duration("PT10S")}'
)
print("\nconstructor literals:", {k: type(v).__name__ for k, v in value.items()})
