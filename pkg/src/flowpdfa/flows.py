"""Loading and validating labeled NetFlow CSV exports."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field, fields
from typing import Iterable, Mapping

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "flows/1"

BENIGN = "benign"
MALICIOUS = "malicious"

_BENIGN_TOKENS = {"benign", "normal", "0", "false", "background"}
_MALICIOUS_TOKENS = {"malicious", "attack", "1", "true", "anomaly", "anomalous"}

_DURATION_SCALE = {"ms": 1.0, "s": 1000.0, "us": 1e-3, "ns": 1e-6}
_TIMESTAMP_SCALE = {"ms": 1.0, "s": 1000.0, "us": 1e-3, "ns": 1e-6}

# protocols whose flows carry port numbers
_PORTED = {"TCP", "UDP", "SCTP"}

REQUIRED_FIELDS = (
    "timestamp_start",
    "src_host",
    "dst_host",
    "protocol",
    "bytes_total",
    "duration_ms",
    "label",
)
OPTIONAL_FIELDS = ("flow_id", "src_port", "dst_port")


class DataError(ValueError):
    """Raised when input data cannot be used."""


@dataclass(frozen=True)
class FlowRecord:
    flow_id: int
    timestamp_start: int
    src_host: str
    dst_host: str
    src_port: int | None
    dst_port: int | None
    protocol: str
    bytes_total: int
    duration_ms: float
    label: str

    @property
    def malicious(self) -> bool:
        return self.label == MALICIOUS


@dataclass
class Dataset:
    records: list[FlowRecord]
    source_path: str = ""
    schema_version: str = SCHEMA_VERSION
    rejected: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def time_range(self) -> tuple[int, int]:
        ts = [r.timestamp_start for r in self.records]
        return min(ts), max(ts)

    def subset(self, records: Iterable[FlowRecord]) -> "Dataset":
        return Dataset(list(records), self.source_path, self.schema_version)


@dataclass(frozen=True)
class ColumnSchema:
    """Maps canonical field names to source column names.

    ``duration_unit`` and ``timestamp_unit`` describe the source columns;
    both are normalized to milliseconds on load.
    """

    columns: Mapping[str, str] = field(default_factory=dict)
    delimiter: str = ","
    duration_unit: str = "ms"
    timestamp_unit: str = "ms"
    max_reject_fraction: float = 0.01

    def column(self, name: str) -> str:
        return self.columns.get(name, name)

    @classmethod
    def from_mapping(cls, cfg: Mapping | None) -> "ColumnSchema":
        if not cfg:
            return cls()
        cfg = dict(cfg)
        known = {f.name for f in fields(cls)}
        extra = set(cfg) - known
        if extra:
            raise DataError(f"unknown schema keys: {sorted(extra)}")
        return cls(**cfg)


def parse_label(token: str) -> str:
    t = token.strip().lower()
    if t in _BENIGN_TOKENS:
        return BENIGN
    if t in _MALICIOUS_TOKENS:
        return MALICIOUS
    raise ValueError(f"unknown label {token!r}")


def _parse_port(raw: str | None, name: str) -> int | None:
    if raw is None or raw.strip() == "":
        return None
    port = int(float(raw))
    if not 0 <= port <= 65535:
        raise ValueError(f"{name} out of range: {port}")
    return port


def _parse_row(row: dict, schema: ColumnSchema, ordinal: int) -> FlowRecord:
    def get(name):
        col = schema.column(name)
        value = row.get(col)
        if value is None:
            return None
        return value.strip()

    raw_id = get("flow_id")
    flow_id = int(raw_id) if raw_id not in (None, "") else ordinal

    ts = float(get("timestamp_start")) * _TIMESTAMP_SCALE[schema.timestamp_unit]
    protocol = get("protocol").upper()
    if not protocol:
        raise ValueError("empty protocol")

    bytes_total = int(float(get("bytes_total")))
    if bytes_total < 0:
        raise ValueError(f"bytes_total negative: {bytes_total}")
    duration = float(get("duration_ms")) * _DURATION_SCALE[schema.duration_unit]
    if not duration >= 0:  # also rejects NaN
        raise ValueError(f"duration negative: {duration}")

    src_port = _parse_port(get("src_port"), "src_port")
    dst_port = _parse_port(get("dst_port"), "dst_port")
    if protocol in _PORTED and (src_port is None) != (dst_port is None):
        raise ValueError("only one port present for ported protocol")

    src, dst = get("src_host"), get("dst_host")
    if not src or not dst:
        raise ValueError("empty host")

    return FlowRecord(
        flow_id=flow_id,
        timestamp_start=int(round(ts)),
        src_host=src,
        dst_host=dst,
        src_port=src_port,
        dst_port=dst_port,
        protocol=protocol,
        bytes_total=bytes_total,
        duration_ms=duration,
        label=parse_label(get("label")),
    )


def load_flows(path: str | os.PathLike, schema: ColumnSchema | Mapping | None = None) -> Dataset:
    """Parse a delimited flow export into a validated :class:`Dataset`.

    Bad rows are collected as ``(line_number, reason)`` pairs in
    ``Dataset.rejected``. Loading fails if more than
    ``schema.max_reject_fraction`` of the data rows are rejected.
    """
    if not isinstance(schema, ColumnSchema):
        schema = ColumnSchema.from_mapping(schema)
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)

    records: list[FlowRecord] = []
    rejected: list[tuple[int, str]] = []
    seen_ids: set[int] = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=schema.delimiter)
        header = reader.fieldnames or []
        missing = [f for f in REQUIRED_FIELDS if schema.column(f) not in header]
        if missing:
            raise DataError(f"{path}: missing required columns {missing}")
        n_rows = 0
        for n_rows, row in enumerate(reader, start=1):
            line = reader.line_num
            try:
                rec = _parse_row(row, schema, ordinal=n_rows - 1)
                if rec.flow_id in seen_ids:
                    raise ValueError(f"duplicate flow_id {rec.flow_id}")
            except (ValueError, TypeError, AttributeError, KeyError) as exc:
                rejected.append((line, str(exc)))
                continue
            seen_ids.add(rec.flow_id)
            records.append(rec)

    if rejected:
        logger.warning("%s: rejected %d of %d rows", path, len(rejected), n_rows)
    if n_rows and len(rejected) > schema.max_reject_fraction * n_rows:
        raise DataError(
            f"{path}: {len(rejected)} of {n_rows} rows rejected "
            f"(limit {schema.max_reject_fraction:.1%})\n" + format_report(rejected)
        )
    if not records:
        raise DataError(f"{path}: no valid flow records")
    return Dataset(records, source_path=path, rejected=rejected)


def format_report(rejected: Iterable[tuple[int, str]]) -> str:
    return "".join(f"line {line}: {reason}\n" for line, reason in rejected)


def write_flows(ds: Dataset | Iterable[FlowRecord], path: str | os.PathLike) -> None:
    """Write records using the canonical column names (milliseconds)."""
    names = [f.name for f in fields(FlowRecord)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in ds:
            row = []
            for n in names:
                v = getattr(r, n)
                row.append("" if v is None else repr(v) if isinstance(v, float) else v)
            w.writerow(row)


def split_train_test(ds: Dataset, boundary: int) -> tuple[Dataset, Dataset]:
    """Split at ``boundary`` (epoch ms): train is strictly before it.

    Training data must be benign only.
    """
    lo, hi = ds.time_range()
    if not lo <= boundary <= hi + 1:
        raise DataError(f"boundary {boundary} outside dataset range [{lo}, {hi}]")
    train = [r for r in ds.records if r.timestamp_start < boundary]
    test = [r for r in ds.records if r.timestamp_start >= boundary]
    if not train:
        raise DataError("empty train partition")
    if not test:
        raise DataError("empty test partition")
    bad = sum(r.malicious for r in train)
    if bad:
        raise DataError(f"train partition contains {bad} malicious flows")
    return ds.subset(train), ds.subset(test)
