"""Sorting levels: how flows are grouped into ordered streams."""
from __future__ import annotations

from collections import defaultdict
from enum import Enum
from typing import Iterable

from .flows import FlowRecord

GLOBAL_KEY = "*"


class SortingLevel(str, Enum):
    CONNECTION = "connection"
    SOURCE_HOST = "source_host"
    DESTINATION_HOST = "destination_host"
    TIMESTAMP = "timestamp"

    def key(self, flow: FlowRecord) -> str:
        if self is SortingLevel.CONNECTION:
            # ports deliberately excluded
            return f"{flow.src_host}|{flow.dst_host}|{flow.protocol}"
        if self is SortingLevel.SOURCE_HOST:
            return flow.src_host
        if self is SortingLevel.DESTINATION_HOST:
            return flow.dst_host
        return GLOBAL_KEY


def group_flows(flows: Iterable[FlowRecord], level: SortingLevel | str) -> dict[str, list[FlowRecord]]:
    """Group flows by ``level`` and order each group by (timestamp, flow_id).

    Returned dict is ordered by group key.
    """
    level = SortingLevel(level)
    groups: dict[str, list[FlowRecord]] = defaultdict(list)
    for f in flows:
        groups[level.key(f)].append(f)
    return {
        k: sorted(groups[k], key=lambda f: (f.timestamp_start, f.flow_id))
        for k in sorted(groups)
    }
