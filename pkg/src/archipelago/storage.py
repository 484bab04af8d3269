"""Catalog and dataset storage.

Datasets are in-memory tables backed by an append-only log so acknowledged
inserts survive a crash. Every committed record gets a monotonically
increasing per-dataset sequence number; a replaced record (primary-key
upsert) is tombstoned and the replacement gets a fresh number, which is what
continuous channels build their new-records watermarks on.

On-disk layout under the data directory:

    datasets/<dataverse>.<dataset>.snap     compacted state (one per dataset)
    datasets/<dataverse>.<dataset>.wal.<g>  log generation g (see snapshot header)
    watermarks.json                         per-channel, per-dataset bounds
"""

from __future__ import annotations

import json
import os
import threading
import uuid as _uuid
from dataclasses import dataclass, field

from archipelago.adm import (
    Datetime,
    Duration,
    Point,
    Rectangle,
    Value,
    parse_adm_text,
    serialize_adm,
)


class StorageError(Exception):
    pass


class DuplicateEntityError(StorageError):
    pass


class UnknownEntityError(StorageError):
    pass


class TypeMismatchError(StorageError):
    pass


_TYPE_ALIASES = {"int": "bigint", "integer": "bigint", "int64": "bigint"}

_TAG_CHECKS = {
    "bigint": lambda v: type(v) is int,
    "double": lambda v: type(v) is float or type(v) is int,
    "string": lambda v: type(v) is str,
    "boolean": lambda v: type(v) is bool,
    "datetime": lambda v: type(v) is Datetime,
    "duration": lambda v: type(v) is Duration,
    "point": lambda v: type(v) is Point,
    "rectangle": lambda v: type(v) is Rectangle,
    "uuid": lambda v: type(v) is _uuid.UUID,
    "array": lambda v: type(v) is list,
    "object": lambda v: type(v) is dict,
}

_SCALAR_KEY_TAGS = ("bigint", "double", "string", "boolean", "datetime", "uuid")


def normalize_type_name(name: str) -> str:
    lowered = name.lower()
    lowered = _TYPE_ALIASES.get(lowered, lowered)
    if lowered not in _TAG_CHECKS:
        raise TypeMismatchError(f"unknown field type {name!r}")
    return lowered


@dataclass(frozen=True)
class FieldSpec:
    name: str
    tag: str
    optional: bool = False


@dataclass(frozen=True)
class TypeDef:
    name: str
    fields: tuple
    open: bool = True

    def __post_init__(self):
        names = [f.name for f in self.fields]
        if len(names) != len(set(names)):
            raise StorageError(f"duplicate field names in type {self.name!r}")


@dataclass(frozen=True)
class DatasetRecord:
    seqno: int
    value: dict
    pkey: Value


class Dataset:
    """One table: insert/upsert, seqno-bounded scans, log recovery.

    Writes serialize on an internal lock. Live records sit in an
    insertion-ordered map keyed by seqno (ascending, because an upsert
    tombstones the old seqno and appends a fresh one), so a scan is a short
    copy under the lock plus a range filter, independent of how many
    versions were ever replaced.
    """

    def __init__(
        self,
        dataverse: str,
        name: str,
        typedef: TypeDef,
        pkey: str,
        active: bool = False,
        autogenerated: bool = False,
        directory: str | None = None,
        durable: bool = True,
    ):
        declared = {f.name for f in typedef.fields}
        if pkey not in declared and not autogenerated:
            raise StorageError(f"primary key {pkey!r} is not a declared field")
        self.dataverse = dataverse
        self.name = name
        self.typedef = typedef
        self.pkey = pkey
        self.active = active
        self.autogenerated = autogenerated
        self.durable = durable
        self._alive: dict = {}  # seqno -> DatasetRecord, ascending
        self._next_seqno = 0
        self._pkey_index: dict = {}
        # _io_lock serializes log appends (and is held across the memory
        # commit so log order equals seqno order); _write_lock guards the
        # in-memory maps and is held only for short mutations and copies,
        # so scans never wait on an fsync.
        self._io_lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._wal_file = None
        self._wal_entries = 0
        self._generation = 0
        self._directory = directory
        if directory is not None:
            os.makedirs(directory, exist_ok=True)
            self._recover()
            self._open_wal()

    # -- paths and recovery ----------------------------------------------------

    def _base_path(self) -> str:
        return os.path.join(self._directory, f"{self.dataverse}.{self.name}")

    def _wal_path(self, generation: int) -> str:
        return f"{self._base_path()}.wal.{generation}"

    def _snap_path(self) -> str:
        return f"{self._base_path()}.snap"

    def _recover(self) -> None:
        snap = self._snap_path()
        if os.path.exists(snap):
            with open(snap, "rb") as f:
                header = json.loads(f.readline())
                self._generation = header["generation"]
                self._next_seqno = header["max_seqno"]
                for payload in _read_log_entries(f):
                    entry = parse_adm_text(payload.decode("utf-8"))
                    seqno = entry["seqno"]
                    record = DatasetRecord(seqno, entry["value"], entry["value"].get(self.pkey))
                    self._alive[seqno] = record
                    self._pkey_index[record.pkey] = seqno
        wal = self._wal_path(self._generation)
        if os.path.exists(wal):
            with open(wal, "rb") as f:
                for payload in _read_log_entries(f):
                    value = parse_adm_text(payload.decode("utf-8"))
                    self._apply(value)

    def _open_wal(self) -> None:
        self._wal_file = open(self._wal_path(self._generation), "ab")

    # -- write path --------------------------------------------------------------

    def _validate(self, value: Value) -> dict:
        if type(value) is not dict:
            raise TypeMismatchError(
                f"{self.dataverse}.{self.name}: records must be objects"
            )
        coerced = None
        for spec in self.typedef.fields:
            if spec.name not in value:
                if spec.optional or (self.autogenerated and spec.name == self.pkey):
                    continue
                raise TypeMismatchError(
                    f"{self.dataverse}.{self.name}: missing declared field {spec.name!r}"
                )
            got = value[spec.name]
            if spec.optional and got is None:
                continue
            if not _TAG_CHECKS[spec.tag](got):
                raise TypeMismatchError(
                    f"{self.dataverse}.{self.name}: field {spec.name!r} expects "
                    f"{spec.tag}, got {type(got).__name__}"
                )
            if spec.tag == "double" and type(got) is int:
                if coerced is None:
                    coerced = dict(value)
                coerced[spec.name] = float(got)
        value = coerced if coerced is not None else value
        if self.autogenerated and self.pkey not in value:
            value = dict(value)
            value[self.pkey] = _uuid.uuid4()
        if self.pkey not in value:
            raise TypeMismatchError(
                f"{self.dataverse}.{self.name}: record lacks primary key {self.pkey!r}"
            )
        return value

    def _apply(self, value: dict) -> int:
        """Append to memory (caller holds the write lock or is recovering)."""
        seqno = self._next_seqno + 1
        pkey_value = value[self.pkey]
        old = self._pkey_index.get(pkey_value)
        if old is not None:
            del self._alive[old]  # tombstone the replaced version
        self._alive[seqno] = DatasetRecord(seqno, value, pkey_value)
        self._pkey_index[pkey_value] = seqno
        self._next_seqno = seqno  # published last: readers never see a gap
        return seqno

    def insert(self, values: list) -> list:
        """Validate, durably log, then commit records; returns their seqnos."""
        if not values:
            return []
        prepared = [self._validate(v) for v in values]
        with self._io_lock:
            if self._wal_file is not None:
                chunks = []
                for value in prepared:
                    payload = serialize_adm(value).encode("utf-8")
                    chunks.append(b"%d\n%s\n" % (len(payload), payload))
                self._wal_file.write(b"".join(chunks))
                self._wal_file.flush()
                if self.durable:
                    os.fsync(self._wal_file.fileno())
                self._wal_entries += len(prepared)
            with self._write_lock:
                return [self._apply(value) for value in prepared]

    # -- read path ---------------------------------------------------------------

    def snapshot_seqno(self) -> int:
        return self._next_seqno

    def scan(self, low_exclusive: int = 0, high_inclusive: int | None = None) -> list:
        """Records with low < seqno <= high, in seqno order."""
        with self._write_lock:
            records = list(self._alive.values())
        high = self._next_seqno if high_inclusive is None else high_inclusive
        return [r for r in records if low_exclusive < r.seqno <= high]

    def get(self, pkey_value: Value) -> DatasetRecord | None:
        with self._write_lock:
            seqno = self._pkey_index.get(pkey_value)
            return self._alive.get(seqno) if seqno is not None else None

    def count(self) -> int:
        with self._write_lock:
            return len(self._alive)

    # -- maintenance ---------------------------------------------------------------

    def compact(self) -> None:
        """Write a snapshot of live records and switch to a fresh log."""
        if self._directory is None:
            return
        with self._io_lock:  # holds off all writers; memory is frozen
            new_gen = self._generation + 1
            tmp = self._snap_path() + ".tmp"
            with open(tmp, "wb") as f:
                header = {"generation": new_gen, "max_seqno": self._next_seqno}
                f.write(json.dumps(header).encode() + b"\n")
                for record in self._alive.values():
                    payload = serialize_adm(
                        {"seqno": record.seqno, "value": record.value}
                    ).encode("utf-8")
                    f.write(b"%d\n%s\n" % (len(payload), payload))
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, self._snap_path())
            old_wal, old_gen = self._wal_file, self._generation
            self._generation = new_gen
            self._open_wal()
            self._wal_entries = 0
            if old_wal is not None:
                old_wal.close()
                try:
                    os.remove(self._wal_path(old_gen))
                except OSError:
                    pass

    def close(self) -> None:
        with self._io_lock:
            if self._wal_file is not None:
                self._wal_file.close()
                self._wal_file = None


def _read_log_entries(f):
    while True:
        line = f.readline()
        if not line:
            return
        try:
            length = int(line)
        except ValueError:
            return  # torn tail; ignore the partial entry
        payload = f.read(length)
        if len(payload) < length:
            return
        f.readline()  # trailing newline
        yield payload


# -- catalog ----------------------------------------------------------------------


@dataclass
class Dataverse:
    name: str
    types: dict = field(default_factory=dict)
    datasets: dict = field(default_factory=dict)
    feeds: dict = field(default_factory=dict)
    channels: dict = field(default_factory=dict)
    brokers: dict = field(default_factory=dict)
    functions: dict = field(default_factory=dict)


class Catalog:
    """Named entities grouped by dataverse. Mutations serialize globally."""

    def __init__(self, data_dir: str | None = None, durable: bool = True):
        self.lock = threading.RLock()
        self.data_dir = data_dir
        self.durable = durable
        self._dataverses: dict[str, Dataverse] = {}

    def dataverse(self, name: str, create: bool = False) -> Dataverse:
        with self.lock:
            dv = self._dataverses.get(name)
            if dv is None:
                if not create:
                    raise UnknownEntityError(f"unknown dataverse {name!r}")
                dv = Dataverse(name)
                self._dataverses[name] = dv
            return dv

    def dataverses(self) -> list:
        with self.lock:
            return list(self._dataverses.values())

    def create_type(self, dv_name: str, typedef: TypeDef) -> None:
        with self.lock:
            dv = self.dataverse(dv_name, create=True)
            if typedef.name in dv.types:
                raise DuplicateEntityError(f"type {typedef.name!r} already exists")
            dv.types[typedef.name] = typedef

    def create_dataset(
        self, dv_name: str, name: str, type_name: str, pkey: str,
        active: bool, autogenerated: bool,
    ) -> Dataset:
        with self.lock:
            dv = self.dataverse(dv_name, create=True)
            if name in dv.datasets:
                raise DuplicateEntityError(f"dataset {name!r} already exists")
            typedef = dv.types.get(type_name)
            if typedef is None:
                raise UnknownEntityError(f"unknown type {type_name!r}")
            directory = (
                os.path.join(self.data_dir, "datasets") if self.data_dir else None
            )
            dataset = Dataset(
                dv_name, name, typedef, pkey, active, autogenerated,
                directory=directory, durable=self.durable,
            )
            dv.datasets[name] = dataset
            return dataset

    def get_dataset(self, dv_name: str, name: str) -> Dataset:
        dv = self.dataverse(dv_name)
        dataset = dv.datasets.get(name)
        if dataset is None:
            raise UnknownEntityError(f"unknown dataset {dv_name}.{name}")
        return dataset

    def close(self) -> None:
        with self.lock:
            for dv in self._dataverses.values():
                for dataset in dv.datasets.values():
                    dataset.close()


class WatermarkStore:
    """Per-(channel, dataset) sequence bounds, atomically rewritten on advance."""

    def __init__(self, path: str | None):
        self._path = path
        self._lock = threading.Lock()
        self._state: dict[str, dict[str, int]] = {}
        if path and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as f:
                self._state = json.load(f)

    def get(self, channel_key: str) -> dict:
        with self._lock:
            return dict(self._state.get(channel_key, {}))

    def advance(self, channel_key: str, bounds: dict) -> None:
        with self._lock:
            current = self._state.setdefault(channel_key, {})
            for ds_key, seq in bounds.items():
                if seq < current.get(ds_key, 0):
                    raise StorageError(
                        f"watermark for {channel_key}/{ds_key} may not decrease"
                    )
                current[ds_key] = seq
            self._flush()

    def forget(self, channel_key: str) -> None:
        with self._lock:
            self._state.pop(channel_key, None)
            self._flush()

    def _flush(self) -> None:
        if not self._path:
            return
        tmp = self._path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(self._state, f)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self._path)
