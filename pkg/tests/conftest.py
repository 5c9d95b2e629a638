import csv

import pytest

from flowpdfa.flows import BENIGN, MALICIOUS, Dataset, FlowRecord
from flowpdfa.pdfa import from_probabilities

HEADER = ["flow_id", "timestamp_start", "src_host", "dst_host", "src_port", "dst_port",
          "protocol", "bytes_total", "duration_ms", "label"]


def flow(i, ts=None, src="10.0.0.1", dst="10.0.0.2", proto="TCP", nbytes=100, dur=1.0,
         label=BENIGN, sport=40000, dport=80):
    return FlowRecord(i, ts if ts is not None else 1000 * i, src, dst, sport, dport, proto,
                      nbytes, float(dur), label)


@pytest.fixture
def make_flow():
    return flow


@pytest.fixture
def write_csv(tmp_path):
    def _write(rows, name="flows.csv", header=HEADER, delimiter=","):
        path = tmp_path / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter=delimiter)
            w.writerow(header)
            w.writerows(rows)
        return path
    return _write


@pytest.fixture
def ten_flows():
    """Ten benign flows, one per second, two connections."""
    recs = [flow(i, src="10.0.0.1" if i % 2 else "10.0.0.3", nbytes=100 * (i + 1), dur=i)
            for i in range(10)]
    return Dataset(recs)


@pytest.fixture
def worked_example():
    """The four-step example machine: A(aaab) = 0.75 * 0.8 * 0.8 * 0.2."""
    return from_probabilities(
        "ab",
        {0: {"a": 1, "b": 0}, 1: {"a": 1, "b": 2}, 2: {}},
        {0: {"a": 0.75, "b": 0.25}, 1: {"a": 0.8, "b": 0.2}, 2: {}},
        final_probs={0: 0.0, 1: 0.0, 2: 1.0},
    )


def sample_fixed(gen, n, length, seed=0):
    """``n`` fixed-length traces drawn from a PDFA without finals."""
    import numpy as np
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        q, seq = gen.start, []
        for _ in range(length):
            syms = sorted(gen.symbol_probs[q])
            a = syms[rng.choice(len(syms), p=[gen.symbol_probs[q][s] for s in syms])]
            seq.append(a)
            q = gen.delta[q][a]
        out.append(seq)
    return out


def align(learned, gen):
    """Map learned states to generator states by shortest access string."""
    seen = {learned.start: gen.start}
    queue = [learned.start]
    while queue:
        q = queue.pop(0)
        for a in sorted(learned.delta[q]):
            t = learned.delta[q][a]
            if t not in seen:
                seen[t] = gen.delta[seen[q]][a]
                queue.append(t)
    return seen


# -- acceptance reporting ------------------------------------------------------

_CRITERIA: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one (part of an) acceptance result."""
    recorded = []

    def record(n, ok, detail):
        recorded.append(n)
        _CRITERIA.setdefault(n, []).append((bool(ok), detail))
        return ok

    yield record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        parts = _CRITERIA[n]
        ok = all(p for p, _ in parts)
        tr.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  " + "; ".join(d for _, d in parts))
