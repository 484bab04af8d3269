"""archipelago: desk-scale federated active-data islands.

Each island ingests streams through feeds, evaluates parameterized
continuous channels on a period, pushes notification envelopes to broker
endpoints, and can bridge to other islands so that one island's channel
becomes another island's feed.
"""

from archipelago.adm import (
    Datetime,
    Duration,
    Point,
    Rectangle,
    Value,
    object_merge,
    parse_adm_text,
    serialize_adm,
    to_general_json,
)

__all__ = [
    "Datetime",
    "Duration",
    "Point",
    "Rectangle",
    "Value",
    "object_merge",
    "parse_adm_text",
    "serialize_adm",
    "to_general_json",
]

__version__ = "0.1.0"
