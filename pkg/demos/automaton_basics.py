"""
Automaton basics
================

Build a small PDFA by hand, score a sequence, then learn one back from
sampled traces.
"""

import numpy as np

from flowpdfa import build_pta, learn, sequence_probability, to_dot
from flowpdfa.merging import MergeConfig
from flowpdfa.pdfa import from_probabilities

# three states; q2 is the only accepting one
m = from_probabilities(
    "ab",
    {0: {"a": 1, "b": 0}, 1: {"a": 1, "b": 2}, 2: {}},
    {0: {"a": 0.75, "b": 0.25}, 1: {"a": 0.8, "b": 0.2}, 2: {}},
    final_probs={0: 0.0, 1: 0.0, 2: 1.0},
)
p, logp = sequence_probability(m, "aaab", floor=0)
print(f"P(aaab) = {p:.3f}  (log {logp:.3f})")

# a two-state source without final probabilities
source = from_probabilities("ab", {0: {"a": 0, "b": 1}, 1: {"a": 0, "b": 1}},
                            {0: {"a": 0.7, "b": 0.3}, 1: {"a": 0.2, "b": 0.8}})
rng = np.random.default_rng(0)
traces = []
for _ in range(10_000):
    q, seq = 0, []
    for _ in range(10):
        a = "a" if rng.random() < source.symbol_probs[q]["a"] else "b"
        seq.append(a)
        q = source.delta[q][a]
    traces.append(seq)

pta = build_pta(traces)
model, merges = learn(pta, MergeConfig(alpha=0.05, min_count=10))
print(f"PTA states: {len(pta)}, learned states: {len(model)}, merges: {len(merges.accepted())}")
print(to_dot(model))
