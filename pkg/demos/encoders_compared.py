"""
Three ways to turn flows into symbols
=====================================

Percentile bins, frequent values plus percentile bins for the rest, and
clusters of values that appear next to similar neighbours.
"""

from collections import Counter

from flowpdfa import fit_encoder
from flowpdfa.flows import split_train_test
from flowpdfa.sorting import group_flows
from flowpdfa.synthetic import generate

flows, boundary = generate(users=10, minutes=20, seed=2)
train, test = split_train_test(flows, boundary)
print(f"{len(train)} training flows, {len(test)} test flows")

for scheme in ("percentile", "frequency", "contextual_frequency"):
    enc = fit_encoder(train, scheme, level="timestamp")
    stream = group_flows(test, "timestamp")["*"]
    symbols = enc.encode_stream(stream)
    unseen = sum(not enc.in_alphabet(s) for s in symbols)
    top = Counter(symbols).most_common(3)
    print(f"{scheme:>22}: |alphabet| = {len(enc.alphabet):3d}, "
          f"unseen test symbols = {unseen:4d}, most common {top}")
