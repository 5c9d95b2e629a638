"""Cutting encoded flow streams into fixed-length symbolic traces."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

from .encoding import EncoderModel
from .flows import BENIGN, MALICIOUS, DataError, Dataset, FlowRecord
from .sorting import GLOBAL_KEY, SortingLevel, group_flows

DEFAULT_WINDOW = 10
DEFAULT_STRIDE = 1

__all__ = [
    "SortingLevel", "SymbolicTrace", "build_traces", "export_traces", "import_traces",
    "trace_fingerprint", "GLOBAL_KEY",
]


@dataclass
class SymbolicTrace:
    symbols: list[str]
    group_key: str = GLOBAL_KEY
    flow_ids: list[int] = field(default_factory=list)
    label: str = BENIGN
    first_timestamp: int = 0
    fingerprint: str = ""

    @property
    def malicious(self) -> bool:
        return self.label == MALICIOUS

    def __len__(self) -> int:
        return len(self.symbols)


def trace_fingerprint(model: EncoderModel, level: SortingLevel | str, window: int, stride: int) -> str:
    """Identifies the encoder and windowing a trace was produced with."""
    blob = json.dumps([model.fingerprint(), SortingLevel(level).value, window, stride])
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def windows(group: list[FlowRecord], symbols: list[str], window: int, stride: int):
    for start in range(0, len(group) - window + 1, stride):
        yield group[start:start + window], symbols[start:start + window]


def build_traces(ds: Dataset | list[FlowRecord], model: EncoderModel,
                 level: SortingLevel | str = SortingLevel.TIMESTAMP,
                 window: int = DEFAULT_WINDOW, stride: int = DEFAULT_STRIDE) -> list[SymbolicTrace]:
    """Group, order, encode and window flows into traces.

    A trace is malicious iff any of its flows is. Output is ordered by
    ``(group_key, first_timestamp)``.
    """
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    level = SortingLevel(level)
    if model.scheme == "contextual_frequency" and model.level != level.value:
        raise ValueError(
            f"contextual encoder was fitted on level {model.level!r}, not {level.value!r}"
        )
    fp = trace_fingerprint(model, level, window, stride)
    groups = group_flows(ds, level)
    traces = []
    for key, group in groups.items():
        symbols = model.encode_stream(group)
        for flows, syms in windows(group, symbols, window, stride):
            traces.append(SymbolicTrace(
                symbols=syms,
                group_key=key,
                flow_ids=[f.flow_id for f in flows],
                label=MALICIOUS if any(f.malicious for f in flows) else BENIGN,
                first_timestamp=flows[0].timestamp_start,
                fingerprint=fp,
            ))
    if not traces:
        lengths = ", ".join(f"{k}={len(g)}" for k, g in groups.items())
        raise DataError(f"no group has at least {window} flows ({lengths})")
    traces.sort(key=lambda t: (t.group_key, t.first_timestamp))
    return traces


def symbol_table(traces) -> dict[str, int]:
    return {s: i for i, s in enumerate(sorted({s for t in traces for s in t.symbols}))}


def _sidecars(path) -> tuple[str, str]:
    path = os.fspath(path)
    return path + ".symbols", path + ".meta"


def export_traces(traces: list[SymbolicTrace], path) -> None:
    """Write traces in Abbadingo format.

    Symbols are written as integer ids; the id table goes to
    ``<path>.symbols`` (``id<TAB>symbol``) and per-trace provenance to
    ``<path>.meta`` (JSON lines).
    """
    if not traces:
        raise ValueError("no traces to export")
    table = symbol_table(traces)
    sym_path, meta_path = _sidecars(path)
    with open(path, "w") as fh:
        fh.write(f"{len(traces)} {len(table)}\n")
        for t in traces:
            ids = " ".join(str(table[s]) for s in t.symbols)
            fh.write(f"{int(t.malicious)} {len(t.symbols)} {ids}".rstrip() + "\n")
    with open(sym_path, "w") as fh:
        for s, i in table.items():
            fh.write(f"{i}\t{s}\n")
    with open(meta_path, "w") as fh:
        for t in traces:
            fh.write(json.dumps({
                "group_key": t.group_key,
                "flow_ids": t.flow_ids,
                "first_timestamp": t.first_timestamp,
                "fingerprint": t.fingerprint,
            }, sort_keys=True) + "\n")


def import_traces(path) -> list[SymbolicTrace]:
    sym_path, meta_path = _sidecars(path)
    names: dict[int, str] = {}
    if os.path.exists(sym_path):
        with open(sym_path) as fh:
            for line in fh:
                i, s = line.rstrip("\n").split("\t", 1)
                names[int(i)] = s

    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise DataError(f"{path}: malformed header {header!r}")
        n_traces, alpha = map(int, header)
        traces = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2 or parts[0] not in ("0", "1") or not parts[1].isdigit():
                raise DataError(f"{path}:{lineno}: malformed trace line")
            length = int(parts[1])
            body = parts[2:]
            if len(body) != length:
                raise DataError(f"{path}:{lineno}: declared length {length}, found {len(body)}")
            syms = [names.get(int(x), x) if x.isdigit() else x for x in body]
            traces.append(SymbolicTrace(syms, label=MALICIOUS if parts[0] == "1" else BENIGN))
    if len(traces) != n_traces:
        raise DataError(f"{path}: header declares {n_traces} traces, found {len(traces)}")
    if names and len(names) != alpha:
        raise DataError(f"{path}: header declares {alpha} symbols, table has {len(names)}")

    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            metas = [json.loads(line) for line in fh if line.strip()]
        if len(metas) != len(traces):
            raise DataError(f"{meta_path}: {len(metas)} entries for {len(traces)} traces")
        for t, m in zip(traces, metas):
            t.group_key = m["group_key"]
            t.flow_ids = list(m["flow_ids"])
            t.first_timestamp = m["first_timestamp"]
            t.fingerprint = m.get("fingerprint", "")
    return traces
