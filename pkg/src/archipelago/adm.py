"""Semi-structured data model with two wire formats.

Values are plain Python where possible (None/bool/int/float/str/list/dict)
plus small frozen classes for the typed extensions (Datetime, Duration,
Point, Rectangle) and ``uuid.UUID``. Objects are dicts and keep insertion
order; all values are immutable by convention and safe to share across
threads.

Two serializations are provided:

* typed text (``serialize_adm`` / ``parse_adm_text``): JSON extended with
  ``datetime("...")``, ``duration("...")``, ``point("...")``,
  ``rectangle("...")`` and ``uuid("...")`` constructor literals;
* plain JSON (``to_general_json``): typed values degrade to strings and
  number arrays so any consumer can decode them.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
import re
import uuid as _uuid
from dataclasses import dataclass
from typing import Union

BIGINT_MIN = -(2**63)
BIGINT_MAX = 2**63 - 1

_EPOCH = _dt.datetime(1970, 1, 1, tzinfo=_dt.timezone.utc)
# datetime.datetime covers years 1..9999; clamp epoch millis accordingly
DATETIME_MIN_MS = -62135596800000
DATETIME_MAX_MS = 253402300799999


class AdmError(ValueError):
    """Base error for data-model violations."""


class AdmSyntaxError(AdmError):
    """Malformed typed text, with 1-based line/column."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} at line {line}, column {col}")
        self.line = line
        self.col = col


class MergeConflictError(AdmError):
    """Same key bound to conflicting non-object values in a merge."""


@dataclass(frozen=True, slots=True)
class Datetime:
    """UTC instant at millisecond precision (epoch millis)."""

    millis: int

    def __post_init__(self):
        if not (DATETIME_MIN_MS <= self.millis <= DATETIME_MAX_MS):
            raise AdmError(f"datetime out of supported range: {self.millis} ms")

    @classmethod
    def from_text(cls, text: str) -> "Datetime":
        m = re.fullmatch(
            r"(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,3}))?Z", text
        )
        if not m:
            raise AdmError(f"malformed datetime text: {text!r}")
        y, mo, d, h, mi, s = (int(g) for g in m.groups()[:6])
        ms = int((m.group(7) or "0").ljust(3, "0"))
        try:
            moment = _dt.datetime(y, mo, d, h, mi, s, tzinfo=_dt.timezone.utc)
        except ValueError as exc:
            raise AdmError(f"invalid datetime {text!r}: {exc}") from None
        delta = moment - _EPOCH
        return cls((delta.days * 86400 + delta.seconds) * 1000 + ms)

    def to_text(self) -> str:
        secs, ms = divmod(self.millis, 1000)
        moment = _EPOCH + _dt.timedelta(seconds=secs)
        return (
            f"{moment.year:04d}-{moment.month:02d}-{moment.day:02d}"
            f"T{moment.hour:02d}:{moment.minute:02d}:{moment.second:02d}.{ms:03d}Z"
        )

    def __lt__(self, other: "Datetime") -> bool:
        return self.millis < other.millis

    def __le__(self, other: "Datetime") -> bool:
        return self.millis <= other.millis


_DURATION_RE = re.compile(
    r"(-)?P(?:(\d+)Y)?(?:(\d+)M)?(?:(\d+)W)?(?:(\d+)D)?"
    r"(?:T(?:(\d+)H)?(?:(\d+)M)?(?:(\d+)(?:\.(\d{1,3}))?S)?)?"
)


@dataclass(frozen=True, slots=True)
class Duration:
    """ISO-8601 duration split into calendar months and exact millis."""

    months: int = 0
    millis: int = 0

    def __post_init__(self):
        if (self.months > 0 and self.millis < 0) or (self.months < 0 and self.millis > 0):
            raise AdmError("mixed-sign duration")

    @classmethod
    def from_text(cls, text: str) -> "Duration":
        m = _DURATION_RE.fullmatch(text)
        if not m or (text.endswith("T")) or m.group(0) in ("P", "-P"):
            raise AdmError(f"malformed duration text: {text!r}")
        neg, y, mo, w, d, h, mi, s, frac = m.groups()
        if all(g is None for g in (y, mo, w, d, h, mi, s)):
            raise AdmError(f"malformed duration text: {text!r}")
        months = int(y or 0) * 12 + int(mo or 0)
        secs = (int(w or 0) * 7 + int(d or 0)) * 86400 + int(h or 0) * 3600
        secs += int(mi or 0) * 60 + int(s or 0)
        millis = secs * 1000 + int((frac or "0").ljust(3, "0"))
        if neg:
            months, millis = -months, -millis
        return cls(months, millis)

    def to_text(self) -> str:
        sign = "-" if (self.months < 0 or self.millis < 0) else ""
        months, millis = abs(self.months), abs(self.millis)
        years, months = divmod(months, 12)
        days, rem = divmod(millis, 86400000)
        hours, rem = divmod(rem, 3600000)
        minutes, rem = divmod(rem, 60000)
        secs, ms = divmod(rem, 1000)
        date = "".join(
            f"{n}{u}" for n, u in ((years, "Y"), (months, "M"), (days, "D")) if n
        )
        sec_text = f"{secs}.{ms:03d}S" if ms else (f"{secs}S" if secs else "")
        time = "".join(
            f"{n}{u}" for n, u in ((hours, "H"), (minutes, "M")) if n
        ) + sec_text
        if not date and not time:
            return sign + "PT0S"
        return sign + "P" + date + ("T" + time if time else "")


@dataclass(frozen=True, slots=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise AdmError("point coordinates must be finite")


@dataclass(frozen=True, slots=True)
class Rectangle:
    """Axis-aligned rectangle, corners normalized to (min, min)-(max, max)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for c in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(c):
                raise AdmError("rectangle coordinates must be finite")
        if self.x1 > self.x2:
            lo, hi = self.x2, self.x1
            object.__setattr__(self, "x1", lo)
            object.__setattr__(self, "x2", hi)
        if self.y1 > self.y2:
            lo, hi = self.y2, self.y1
            object.__setattr__(self, "y1", lo)
            object.__setattr__(self, "y2", hi)

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "Rectangle":
        return cls(x1, y1, x2, y2)

    def contains(self, p: Point) -> bool:
        return self.x1 <= p.x <= self.x2 and self.y1 <= p.y <= self.y2


Value = Union[
    None, bool, int, float, str, Datetime, Duration, Point, Rectangle, _uuid.UUID, list, dict
]

_TAGS = {
    type(None): "null",
    bool: "boolean",
    int: "bigint",
    float: "double",
    str: "string",
    Datetime: "datetime",
    Duration: "duration",
    Point: "point",
    Rectangle: "rectangle",
    _uuid.UUID: "uuid",
    list: "array",
    dict: "object",
}


def tag_of(v: Value) -> str:
    """Type tag of a value ('null', 'boolean', 'bigint', ...)."""
    try:
        return _TAGS[type(v)]
    except KeyError:
        raise AdmError(f"not a data-model value: {type(v).__name__}") from None


_UUID_RE = re.compile(r"[0-9a-fA-F]{8}(-[0-9a-fA-F]{4}){3}-[0-9a-fA-F]{12}")
_FLOAT = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_POINT_RE = re.compile(rf"\s*({_FLOAT})\s*,\s*({_FLOAT})\s*")
_RECT_RE = re.compile(
    rf"\s*({_FLOAT})\s*,\s*({_FLOAT})\s+({_FLOAT})\s*,\s*({_FLOAT})\s*"
)


def parse_point_text(text: str) -> Point:
    m = _POINT_RE.fullmatch(text)
    if not m:
        raise AdmError(f"malformed point text: {text!r}")
    return Point(float(m.group(1)), float(m.group(2)))


def parse_rectangle_text(text: str) -> Rectangle:
    m = _RECT_RE.fullmatch(text)
    if not m:
        raise AdmError(f"malformed rectangle text: {text!r}")
    x1, y1, x2, y2 = (float(g) for g in m.groups())
    return Rectangle.from_corners(x1, y1, x2, y2)


def parse_uuid_text(text: str) -> _uuid.UUID:
    if not _UUID_RE.fullmatch(text):
        raise AdmError(f"malformed uuid text: {text!r}")
    return _uuid.UUID(text)


_CONSTRUCTORS = {
    "datetime": Datetime.from_text,
    "duration": Duration.from_text,
    "point": parse_point_text,
    "rectangle": parse_rectangle_text,
    "uuid": parse_uuid_text,
}

_ESCAPES = {'"': '"', "\\": "\\", "/": "/", "b": "\b", "f": "\f", "n": "\n", "r": "\r", "t": "\t"}

_NUMBER_RE = re.compile(r"-?(?:0|[1-9]\d*)(\.\d+)?([eE][-+]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class _TextCursor:
    """Character cursor with line/column tracking for error messages."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def line_col(self, pos: int | None = None) -> tuple[int, int]:
        pos = self.pos if pos is None else pos
        line = self.text.count("\n", 0, pos) + 1
        col = pos - (self.text.rfind("\n", 0, pos) + 1) + 1
        return line, col

    def error(self, message: str, pos: int | None = None) -> AdmSyntaxError:
        line, col = self.line_col(pos)
        return AdmSyntaxError(message, line, col)

    def skip_ws(self):
        text, n = self.text, len(self.text)
        while self.pos < n and text[self.pos] in " \t\r\n":
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str):
        if self.peek() != ch:
            raise self.error(f"expected {ch!r}")
        self.pos += 1


def _parse_string(cur: _TextCursor) -> str:
    cur.expect('"')
    out = []
    text = cur.text
    while True:
        if cur.pos >= len(text):
            raise cur.error("unterminated string")
        ch = text[cur.pos]
        if ch == '"':
            cur.pos += 1
            return "".join(out)
        if ch == "\\":
            cur.pos += 1
            if cur.pos >= len(text):
                raise cur.error("unterminated escape")
            esc = text[cur.pos]
            if esc in _ESCAPES:
                out.append(_ESCAPES[esc])
                cur.pos += 1
            elif esc == "u":
                hexs = text[cur.pos + 1 : cur.pos + 5]
                if len(hexs) != 4 or any(c not in "0123456789abcdefABCDEF" for c in hexs):
                    raise cur.error("malformed \\u escape")
                out.append(chr(int(hexs, 16)))
                cur.pos += 5
            else:
                raise cur.error(f"bad escape \\{esc}")
        elif ord(ch) < 0x20:
            raise cur.error("raw control character in string")
        else:
            out.append(ch)
            cur.pos += 1


def _parse_value(cur: _TextCursor) -> Value:
    cur.skip_ws()
    ch = cur.peek()
    if ch == "":
        raise cur.error("unexpected end of input")
    if ch == "{":
        cur.pos += 1
        obj: dict[str, Value] = {}
        cur.skip_ws()
        if cur.peek() == "}":
            cur.pos += 1
            return obj
        while True:
            cur.skip_ws()
            key_pos = cur.pos
            key = _parse_string(cur)
            if key in obj:
                raise cur.error(f"duplicate object key {key!r}", key_pos)
            cur.skip_ws()
            cur.expect(":")
            obj[key] = _parse_value(cur)
            cur.skip_ws()
            if cur.peek() == ",":
                cur.pos += 1
                continue
            cur.expect("}")
            return obj
    if ch == "[":
        cur.pos += 1
        arr: list[Value] = []
        cur.skip_ws()
        if cur.peek() == "]":
            cur.pos += 1
            return arr
        while True:
            arr.append(_parse_value(cur))
            cur.skip_ws()
            if cur.peek() == ",":
                cur.pos += 1
                continue
            cur.expect("]")
            return arr
    if ch == '"':
        return _parse_string(cur)
    m = _NUMBER_RE.match(cur.text, cur.pos)
    if m and (ch == "-" or ch.isdigit()):
        cur.pos = m.end()
        if m.group(1) or m.group(2):
            val = float(m.group(0))
            if not math.isfinite(val):
                raise cur.error("double literal out of range", m.start())
            return val
        n = int(m.group(0))
        if not (BIGINT_MIN <= n <= BIGINT_MAX):
            raise cur.error("integer literal outside 64-bit range", m.start())
        return n
    m = _IDENT_RE.match(cur.text, cur.pos)
    if m:
        word = m.group(0)
        start = cur.pos
        cur.pos = m.end()
        if word == "true":
            return True
        if word == "false":
            return False
        if word == "null":
            return None
        cur.skip_ws()
        if cur.peek() != "(":
            raise cur.error(f"unexpected identifier {word!r}", start)
        ctor = _CONSTRUCTORS.get(word)
        if ctor is None:
            raise cur.error(f"unknown constructor {word!r}", start)
        cur.pos += 1
        cur.skip_ws()
        arg_pos = cur.pos
        arg = _parse_string(cur)
        cur.skip_ws()
        cur.expect(")")
        try:
            return ctor(arg)
        except AdmError as exc:
            raise cur.error(str(exc), arg_pos) from None
    raise cur.error(f"unexpected character {ch!r}")


def parse_adm_text(text: str) -> Value:
    """Parse typed text (JSON plus constructor literals) into a value."""
    cur = _TextCursor(text)
    value = _parse_value(cur)
    cur.skip_ws()
    if cur.pos != len(cur.text):
        raise cur.error("trailing data after value")
    return value


def format_double(x: float) -> str:
    """Shortest text that round-trips the double exactly."""
    if not math.isfinite(x):
        raise AdmError("cannot serialize non-finite double")
    return repr(x)


def _escape_string(s: str) -> str:
    # json.dumps applies the same escaping rules both wire formats share
    return json.dumps(s, ensure_ascii=False)


def _write_adm(v: Value, out: list) -> None:
    if v is None:
        out.append("null")
    elif v is True:
        out.append("true")
    elif v is False:
        out.append("false")
    elif type(v) is int:
        if not (BIGINT_MIN <= v <= BIGINT_MAX):
            raise AdmError("integer outside 64-bit range")
        out.append(str(v))
    elif type(v) is float:
        out.append(format_double(v))
    elif type(v) is str:
        out.append(_escape_string(v))
    elif type(v) is Datetime:
        out.append(f'datetime("{v.to_text()}")')
    elif type(v) is Duration:
        out.append(f'duration("{v.to_text()}")')
    elif type(v) is Point:
        out.append(f'point("{format_double(v.x)},{format_double(v.y)}")')
    elif type(v) is Rectangle:
        out.append(
            f'rectangle("{format_double(v.x1)},{format_double(v.y1)} '
            f'{format_double(v.x2)},{format_double(v.y2)}")'
        )
    elif type(v) is _uuid.UUID:
        out.append(f'uuid("{v}")')
    elif type(v) is list:
        out.append("[")
        for i, item in enumerate(v):
            if i:
                out.append(",")
            _write_adm(item, out)
        out.append("]")
    elif type(v) is dict:
        out.append("{")
        for i, (key, item) in enumerate(v.items()):
            if i:
                out.append(",")
            if type(key) is not str:
                raise AdmError("object keys must be strings")
            out.append(_escape_string(key))
            out.append(":")
            _write_adm(item, out)
        out.append("}")
    else:
        raise AdmError(f"not a data-model value: {type(v).__name__}")


def serialize_adm(v: Value) -> str:
    """Canonical typed text: compact, insertion-ordered keys, shortest doubles."""
    out: list[str] = []
    _write_adm(v, out)
    return "".join(out)


def _jsonable(v: Value):
    t = type(v)
    if t is Datetime:
        return v.to_text()
    if t is Duration:
        return v.to_text()
    if t is Point:
        return [v.x, v.y]
    if t is Rectangle:
        return [v.x1, v.y1, v.x2, v.y2]
    if t is _uuid.UUID:
        return str(v)
    if t is list:
        return [_jsonable(item) for item in v]
    if t is dict:
        return {k: _jsonable(item) for k, item in v.items()}
    if t in (type(None), bool, int, float, str):
        return v
    raise AdmError(f"not a data-model value: {type(v).__name__}")


def to_general_json(v: Value) -> str:
    """Plain-JSON encoding: typed values degrade to strings and arrays."""
    return json.dumps(_jsonable(v), ensure_ascii=False, separators=(",", ":"))


def object_merge(a: Value, b: Value) -> dict:
    """Merge two objects; same-key values must both be objects (merged
    recursively), anything else is a conflict."""
    if type(a) is not dict or type(b) is not dict:
        raise AdmError("object_merge arguments must be objects")
    out: dict[str, Value] = {}
    for key, av in a.items():
        if key in b:
            bv = b[key]
            if type(av) is dict and type(bv) is dict:
                out[key] = object_merge(av, bv)
            else:
                raise MergeConflictError(f"conflicting values for key {key!r}")
        else:
            out[key] = av
    for key, bv in b.items():
        if key not in a:
            out[key] = bv
    return out
