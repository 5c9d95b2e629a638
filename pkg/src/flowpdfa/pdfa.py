"""Probabilistic deterministic finite automata and prefix tree acceptors."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .flows import DataError

DEFAULT_SMOOTHING = 1.0


@dataclass
class Pdfa:
    """A PDFA; with tree-shaped transitions it doubles as a PTA.

    ``symbol_probs`` holds probabilities of symbols that have a transition;
    ``default_probs[q]`` is the probability each remaining alphabet symbol
    gets at ``q`` (non-zero only under smoothing). Such symbols have no
    successor, so scoring treats them with the floor rule.
    """

    alphabet: list[str]
    start: int = 0
    delta: dict[int, dict[str, int]] = field(default_factory=dict)
    transition_counts: dict[int, dict[str, int]] = field(default_factory=dict)
    state_counts: dict[int, int] = field(default_factory=dict)
    final_counts: dict[int, int] = field(default_factory=dict)
    symbol_probs: dict[int, dict[str, float]] = field(default_factory=dict)
    default_probs: dict[int, float] = field(default_factory=dict)
    final_probs: dict[int, float] = field(default_factory=dict)
    uses_final: bool = False
    smoothing: float = DEFAULT_SMOOTHING
    floor: float | None = None
    fingerprint: str = ""
    config: dict = field(default_factory=dict)
    # incoming (parent, symbol) for states with a single incoming edge
    parent: dict[int, tuple[int, str]] = field(default_factory=dict, repr=False, compare=False)

    @property
    def states(self) -> list[int]:
        return sorted(self.delta)

    def __len__(self) -> int:
        return len(self.delta)

    @property
    def n_transitions(self) -> int:
        return sum(len(d) for d in self.delta.values())

    def out_total(self, q: int) -> int:
        return sum(self.transition_counts.get(q, {}).values())

    def symbol_prob(self, q: int, a: str) -> float:
        p = self.symbol_probs.get(q, {}).get(a)
        if p is not None:
            return p
        return self.default_probs.get(q, 0.0) if a in self.alphabet else 0.0

    def final_prob(self, q: int) -> float:
        return self.final_probs.get(q, 0.0) if self.uses_final else 0.0

    def outgoing_mass(self, q: int) -> float:
        probs = self.symbol_probs.get(q, {})
        n_other = len(self.alphabet) - len(probs)
        return sum(probs.values()) + n_other * self.default_probs.get(q, 0.0)

    def floor_probability(self) -> float:
        if self.floor is not None:
            return self.floor
        top = max(self.state_counts.values(), default=0)
        return 1.0 / (top + len(self.alphabet) + 1)

    def copy(self) -> "Pdfa":
        return Pdfa.from_dict(self.to_dict(), keep_parent=self.parent)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        states = []
        for q in self.states:
            states.append({
                "id": q,
                "count": self.state_counts.get(q, 0),
                "final_count": self.final_counts.get(q, 0),
                "final_prob": self.final_probs.get(q, 0.0),
                "default_prob": self.default_probs.get(q, 0.0),
                "transitions": [
                    {
                        "symbol": a,
                        "target": t,
                        "count": self.transition_counts.get(q, {}).get(a, 0),
                        "prob": self.symbol_probs.get(q, {}).get(a, 0.0),
                    }
                    for a, t in sorted(self.delta[q].items())
                ],
            })
        return {
            "alphabet": list(self.alphabet),
            "start": self.start,
            "uses_final": self.uses_final,
            "smoothing": self.smoothing,
            "floor": self.floor,
            "fingerprint": self.fingerprint,
            "config": self.config,
            "states": states,
        }

    @classmethod
    def from_dict(cls, d: Mapping, keep_parent: Mapping | None = None) -> "Pdfa":
        m = cls(
            alphabet=list(d["alphabet"]),
            start=int(d["start"]),
            uses_final=bool(d["uses_final"]),
            smoothing=float(d["smoothing"]),
            floor=d.get("floor"),
            fingerprint=d.get("fingerprint", ""),
            config=dict(d.get("config", {})),
        )
        for s in d["states"]:
            q = int(s["id"])
            m.delta[q] = {}
            m.transition_counts[q] = {}
            m.symbol_probs[q] = {}
            m.state_counts[q] = int(s["count"])
            m.final_counts[q] = int(s["final_count"])
            m.final_probs[q] = float(s["final_prob"])
            m.default_probs[q] = float(s["default_prob"])
            for t in s["transitions"]:
                m.delta[q][t["symbol"]] = int(t["target"])
                m.transition_counts[q][t["symbol"]] = int(t["count"])
                m.symbol_probs[q][t["symbol"]] = float(t["prob"])
        if keep_parent is not None:
            m.parent = dict(keep_parent)
        else:
            m.parent = _single_parents(m)
        return m

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Pdfa":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _single_parents(m: Pdfa) -> dict[int, tuple[int, str]]:
    incoming: dict[int, list[tuple[int, str]]] = {}
    for q in m.states:
        for a, t in sorted(m.delta[q].items()):
            incoming.setdefault(t, []).append((q, a))
    return {t: e[0] for t, e in incoming.items() if len(e) == 1}


def from_probabilities(alphabet: Sequence[str], delta: Mapping[int, Mapping[str, int]],
                       symbol_probs: Mapping[int, Mapping[str, float]],
                       final_probs: Mapping[int, float] | None = None, start: int = 0) -> Pdfa:
    """Build a PDFA directly from its transition and probability tables."""
    states = sorted(set(delta) | {t for d in delta.values() for t in d.values()} | {start})
    m = Pdfa(alphabet=sorted(alphabet), start=start, uses_final=final_probs is not None,
             smoothing=0.0)
    for q in states:
        m.delta[q] = dict(delta.get(q, {}))
        m.transition_counts[q] = {a: 0 for a in m.delta[q]}
        m.state_counts[q] = 0
        m.final_counts[q] = 0
        m.symbol_probs[q] = {a: float(symbol_probs[q][a]) for a in m.delta[q]}
        m.default_probs[q] = 0.0
        m.final_probs[q] = float((final_probs or {}).get(q, 0.0))
    m.parent = _single_parents(m)
    return m


def _symbols(t) -> Sequence[str]:
    return t.symbols if hasattr(t, "symbols") else t


def build_pta(traces: Iterable, uses_final: bool = False) -> Pdfa:
    """Prefix tree acceptor with exact empirical counts.

    ``traces`` are :class:`~flowpdfa.traces.SymbolicTrace` objects or plain
    symbol sequences. Labeled malicious traces are refused.
    """
    traces = list(traces)
    if not traces:
        raise DataError("no training traces")
    fps = set()
    for t in traces:
        if getattr(t, "malicious", False):
            raise DataError("malicious trace in training input")
        fps.add(getattr(t, "fingerprint", ""))
    if len(fps) > 1:
        raise DataError("training traces come from different encoders/windowings")

    m = Pdfa(alphabet=sorted({a for t in traces for a in _symbols(t)}), uses_final=uses_final)
    m.fingerprint = fps.pop()
    root = m.start
    m.delta[root], m.transition_counts[root] = {}, {}
    m.state_counts[root] = m.final_counts[root] = 0
    next_id = 1
    for t in traces:
        q = root
        m.state_counts[q] += 1
        for a in _symbols(t):
            nxt = m.delta[q].get(a)
            if nxt is None:
                nxt = next_id
                next_id += 1
                m.delta[q][a] = nxt
                m.transition_counts[q][a] = 0
                m.delta[nxt], m.transition_counts[nxt] = {}, {}
                m.state_counts[nxt] = m.final_counts[nxt] = 0
                m.parent[nxt] = (q, a)
            m.transition_counts[q][a] += 1
            q = nxt
            m.state_counts[q] += 1
        m.final_counts[q] += 1
    return m


def estimate_probs(m: Pdfa, smoothing: float = DEFAULT_SMOOTHING) -> Pdfa:
    """Fill in probabilities from counts with additive smoothing (in place).

    With final probabilities the denominator is the state count; without,
    only outgoing counts are used so each state's symbol mass sums to one.
    """
    a = float(smoothing)
    k = len(m.alphabet) + (1 if m.uses_final else 0)
    m.smoothing = a
    for q in m.states:
        counts = m.transition_counts.get(q, {})
        if m.uses_final:
            n = m.state_counts.get(q, 0)
            fin = m.final_counts.get(q, 0)
        else:
            n = sum(counts.values())
            fin = 0
        den = n + a * k
        if den <= 0:
            m.symbol_probs[q] = {s: 0.0 for s in counts}
            m.default_probs[q] = 0.0
            m.final_probs[q] = 1.0 if m.uses_final else 0.0
            continue
        m.symbol_probs[q] = {s: (c + a) / den for s, c in counts.items()}
        m.default_probs[q] = a / den
        m.final_probs[q] = (fin + a) / den if m.uses_final else 0.0
    return m


def sequence_probability(m: Pdfa, seq: Sequence[str], floor: float | None = None) -> tuple[float, float]:
    """Return ``(probability, log_probability)`` of ``seq`` under ``m``.

    A step without a transition (including out-of-alphabet symbols)
    contributes the floor probability and restarts the walk at the start
    state. ``floor=0`` gives the strict probability.
    """
    eps = m.floor_probability() if floor is None else floor
    log_eps = math.log(eps) if eps > 0 else -math.inf
    q = m.start
    lp = 0.0
    for a in seq:
        nxt = m.delta[q].get(a)
        if nxt is None:
            lp += log_eps
            q = m.start
            continue
        p = m.symbol_probs[q][a]
        lp += math.log(p) if p > 0 else -math.inf
        q = nxt
    if m.uses_final:
        f = m.final_probs.get(q, 0.0)
        lp += math.log(f) if f > 0 else -math.inf
    return math.exp(lp), lp


def check_normalization(m: Pdfa, tol: float = 1e-9) -> list[int]:
    """States whose outgoing (plus final) mass is not one."""
    bad = []
    for q in m.states:
        mass = m.outgoing_mass(q)
        if m.uses_final:
            if abs(mass + m.final_prob(q) - 1.0) > tol:
                bad.append(q)
        elif mass > 0 and abs(mass - 1.0) > tol:
            bad.append(q)
    return bad


def reachable(m: Pdfa) -> set[int]:
    seen = {m.start}
    stack = [m.start]
    while stack:
        q = stack.pop()
        for t in m.delta[q].values():
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return seen


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def to_dot(m: Pdfa) -> str:
    lines = ["digraph pdfa {", "  rankdir=LR;", '  node [shape=circle];',
             '  __start [shape=point];', f"  __start -> q{m.start};"]
    for q in m.states:
        label = f"{q}\\nF={m.final_prob(q):.3f}" if m.uses_final else f"{q}\\nn={m.state_counts.get(q, 0)}"
        lines.append(f'  q{q} [label="{label}"];')
    for q in m.states:
        for a, t in sorted(m.delta[q].items()):
            p = m.symbol_probs.get(q, {}).get(a, 0.0)
            c = m.transition_counts.get(q, {}).get(a, 0)
            lines.append(f'  q{q} -> q{t} [label="{_dot_escape(a)} / {p:.3f} ({c})"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_dot(m: Pdfa, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_dot(m))
