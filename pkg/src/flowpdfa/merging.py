"""Red-blue state merging with an Alergia-style Hoeffding compatibility test."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

from .pdfa import DEFAULT_SMOOTHING, Pdfa, estimate_probs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MergeConfig:
    alpha: float = 0.05
    min_count: int = 10
    max_iterations: int = 1_000_000
    seed: int = 0
    smoothing: float = DEFAULT_SMOOTHING

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.min_count < 1:
            raise ValueError("min_count must be >= 1")


@dataclass(frozen=True)
class MergeDecision:
    red: int
    blue: int
    score: int | None
    accepted: bool


@dataclass
class MergeTrace:
    decisions: list[MergeDecision] = field(default_factory=list)

    def append(self, d: MergeDecision) -> None:
        self.decisions.append(d)

    def accepted(self) -> list[MergeDecision]:
        return [d for d in self.decisions if d.accepted]

    def __len__(self) -> int:
        return len(self.decisions)

    def to_text(self) -> str:
        rows = ["red\tblue\tscore\taccepted"]
        for d in self.decisions:
            score = "-" if d.score is None else str(d.score)
            rows.append(f"{d.red}\t{d.blue}\t{score}\t{int(d.accepted)}")
        return "\n".join(rows) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


def hoeffding_bound(n: int, alpha: float) -> float:
    return math.sqrt(0.5 * math.log(2.0 / alpha)) / math.sqrt(n)


def _evidence(m: Pdfa, q: int) -> tuple[int, dict[str, int]]:
    counts = dict(m.transition_counts.get(q, {}))
    if m.uses_final:
        # reserved key: no encoded symbol starts with a space
        counts[" final"] = m.final_counts.get(q, 0)
        return m.state_counts.get(q, 0), counts
    return sum(counts.values()), counts


def pair_compatible(m: Pdfa, r: int, b: int, cfg: MergeConfig) -> bool:
    """Hoeffding test on the next-symbol (and final) frequencies of two states."""
    nr, fr = _evidence(m, r)
    nb, fb = _evidence(m, b)
    if nr < cfg.min_count or nb < cfg.min_count:
        return True
    bound = hoeffding_bound(nr, cfg.alpha) + hoeffding_bound(nb, cfg.alpha)
    for a in fr.keys() | fb.keys():
        if abs(fr.get(a, 0) / nr - fb.get(a, 0) / nb) > bound:
            return False
    return True


def similarity_test(m: Pdfa, red: int, blue: int, cfg: MergeConfig) -> int | None:
    """Score of merging ``blue`` into ``red``, or None if any induced pair fails.

    Walks the pairs of states a merge would fold together; the score is the
    number of such pairs.
    """
    stack = [(red, blue)]
    score = 0
    while stack:
        r, b = stack.pop()
        if not pair_compatible(m, r, b, cfg):
            return None
        score += 1
        for a, cb in m.delta[b].items():
            cr = m.delta[r].get(a)
            if cr is not None:
                stack.append((cr, cb))
    return score


def _reach(m: Pdfa, q: int) -> set[int]:
    seen = {q}
    stack = [q]
    while stack:
        for t in m.delta[stack.pop()].values():
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return seen


def check_mergeable(m: Pdfa, red: int, blue: int) -> None:
    """Raise ValueError unless ``blue`` roots a tree that can fold into ``red``.

    ``blue`` needs a single incoming edge, every state below it must be
    entered only from inside its subtree, and ``red`` must not lie in it.
    """
    if blue == m.start or blue not in m.delta or red not in m.delta:
        raise ValueError(f"cannot merge {blue} into {red}")
    if blue not in m.parent:
        raise ValueError(f"state {blue} does not have a unique incoming edge")
    sub = _reach(m, blue)
    if red in sub:
        raise ValueError(f"state {blue} reaches {red}; merge would corrupt the fold")
    for q in sub - {blue}:
        if q not in m.parent or m.parent[q][0] not in sub:
            raise ValueError(f"subtree of {blue} is entered from outside at {q}")
    if m.parent[blue][0] in sub:
        raise ValueError(f"state {blue} lies on a cycle")


def merge_and_fold(m: Pdfa, red: int, blue: int) -> Pdfa:
    """Merge ``blue`` into ``red`` in place and fold to restore determinism.

    See :func:`check_mergeable` for the precondition.
    """
    check_mergeable(m, red, blue)

    p, a = m.parent.pop(blue)
    m.delta[p][a] = red
    # red now has at least two incoming edges
    m.parent.pop(red, None)
    stack = [(red, blue)]
    while stack:
        r, b = stack.pop()
        m.state_counts[r] += m.state_counts.pop(b)
        m.final_counts[r] += m.final_counts.pop(b)
        for s, cb in m.delta[b].items():
            m.transition_counts[r][s] = m.transition_counts[r].get(s, 0) + m.transition_counts[b][s]
            cr = m.delta[r].get(s)
            if cr is None:
                m.delta[r][s] = cb
                m.parent[cb] = (r, s)
            else:
                m.parent.pop(cb, None)
                stack.append((cr, cb))
        for table in (m.delta, m.transition_counts, m.symbol_probs, m.default_probs, m.final_probs):
            table.pop(b, None)
        m.parent.pop(b, None)
    return m


def blue_states(m: Pdfa, red: set[int]) -> list[int]:
    return sorted({t for r in red for t in m.delta[r].values() if t not in red})


def learn(pta: Pdfa, cfg: MergeConfig | None = None,
          test: Callable[[Pdfa, int, int, MergeConfig], int | None] = similarity_test,
          ) -> tuple[Pdfa, MergeTrace]:
    """Learn a PDFA from ``pta`` with the red-blue framework.

    Each round picks the blue state with the largest count (ties: lowest id)
    and merges it into the red state with the best passing score (ties:
    lowest id), or promotes it to red. ``pta`` is left untouched.
    """
    cfg = cfg or MergeConfig()
    m = pta.copy()
    red = {m.start}
    log = MergeTrace()
    iterations = 0
    while True:
        blues = blue_states(m, red)
        if not blues:
            break
        if iterations >= cfg.max_iterations:
            logger.warning("merge iteration cap %d reached; returning current model", cfg.max_iterations)
            break
        iterations += 1
        b = max(blues, key=lambda q: (m.state_counts[q], -q))
        best_red, best_score = None, None
        scored = []
        for r in sorted(red):
            s = test(m, r, b, cfg)
            scored.append((r, s))
            if s is not None and (best_score is None or s > best_score):
                best_red, best_score = r, s
        for r, s in scored:
            log.append(MergeDecision(r, b, s, r == best_red))
        if best_red is None:
            red.add(b)
        else:
            merge_and_fold(m, best_red, b)

    estimate_probs(m, cfg.smoothing)
    m.config = dict(m.config, learner=asdict(cfg))
    return m, log


def replay(pta: Pdfa, trace: MergeTrace, smoothing: float = DEFAULT_SMOOTHING) -> Pdfa:
    """Re-apply the accepted merges of ``trace`` to a copy of ``pta``."""
    m = pta.copy()
    for d in trace.accepted():
        merge_and_fold(m, d.red, d.blue)
    return estimate_probs(m, smoothing)
