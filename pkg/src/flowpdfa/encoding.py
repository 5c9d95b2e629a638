"""Symbol encoders mapping a flow to ``PROTOCOL_BYTES_DURATION``.

Three schemes are provided:

* percentile -- each numeric feature is binned at its training percentiles;
* frequency -- frequent values get their own code, the rest are binned;
* contextual_frequency -- values are clustered by the distribution of the
  values that precede and follow them in the sorted flow stream.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .flows import Dataset, FlowRecord
from .kmeans import kmeans
from .sorting import SortingLevel, group_flows

logger = logging.getLogger(__name__)

FEATURES = ("bytes_total", "duration_ms")
SCHEMES = ("percentile", "frequency", "contextual_frequency")

DEFAULT_BINS = 10
DEFAULT_MIN_FRACTION = 0.005
DEFAULT_CONTEXT_BINS = 10
DEFAULT_CLUSTERS = 15
DEFAULT_MAX_ITER = 100


def _num(v):
    # keep ints as ints so JSON output is stable and readable
    f = float(v)
    return int(f) if f.is_integer() else f


@dataclass
class PercentileCodebook:
    """Bins ``(-inf, e0], (e0, e1], ..., (e_last, inf)``."""

    feature: str
    bin_edges: list[float]

    @property
    def n_bins(self) -> int:
        return len(self.bin_edges) + 1

    def code(self, value: float) -> int:
        return int(np.searchsorted(self.bin_edges, value, side="left"))

    def codes(self, values) -> np.ndarray:
        return np.searchsorted(self.bin_edges, np.asarray(values, dtype=float), side="left")

    def to_dict(self) -> dict:
        return {"feature": self.feature, "bin_edges": [_num(e) for e in self.bin_edges]}

    @classmethod
    def from_dict(cls, d: dict) -> "PercentileCodebook":
        return cls(d["feature"], [float(e) for e in d["bin_edges"]])


def fit_percentile_codebook(feature: str, values, bins: int) -> PercentileCodebook:
    if bins < 2:
        raise ValueError("need at least 2 bins")
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return PercentileCodebook(feature, [])
    qs = [100.0 * i / bins for i in range(1, bins)]
    edges = np.unique(np.percentile(values, qs))
    if values.min() == values.max():
        logger.warning("feature %s is constant; using a single bin", feature)
        edges = np.array([])
    return PercentileCodebook(feature, [float(e) for e in edges])


@dataclass
class FrequencyCodebook:
    """Frequent values get codes ``0..m-1``; rare values ``m + bin``."""

    feature: str
    frequent_values: dict[float, int]
    threshold: int
    rare_bins: PercentileCodebook

    def code(self, value: float) -> int:
        c = self.frequent_values.get(float(value))
        if c is not None:
            return c
        return len(self.frequent_values) + self.rare_bins.code(value)

    def rare_codes(self) -> range:
        m = len(self.frequent_values)
        return range(m, m + self.rare_bins.n_bins)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "frequent_values": [[_num(v), c] for v, c in sorted(self.frequent_values.items())],
            "rare_bins": self.rare_bins.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrequencyCodebook":
        return cls(
            d["feature"],
            {float(v): int(c) for v, c in d["frequent_values"]},
            int(d["threshold"]),
            PercentileCodebook.from_dict(d["rare_bins"]),
        )


def fit_frequency_codebook(feature: str, values, threshold: int, rare_bins: int) -> FrequencyCodebook:
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    counts = Counter(float(v) for v in values)
    frequent = sorted(v for v, c in counts.items() if c >= threshold)
    codes = {v: i for i, v in enumerate(frequent)}
    rare = [v for v in values if float(v) not in codes]
    return FrequencyCodebook(feature, codes, threshold, fit_percentile_codebook(feature, rare, rare_bins))


@dataclass
class ContextualCodebook:
    """Cluster label per raw value, from its previous/next-value histograms.

    ``context_bins`` quantizes neighbour values; a value's context row is the
    histogram of its previous neighbours followed by that of its next
    neighbours. Values never seen at fit time go to the nearest centroid of
    the context vector built from the neighbours at hand.
    """

    feature: str
    context_bins: PercentileCodebook
    values: list[float]
    labels: list[int]
    centroids: np.ndarray
    normalize: bool = True
    _index: dict[float, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {float(v): int(c) for v, c in zip(self.values, self.labels)}
        self.centroids = np.asarray(self.centroids, dtype=float)

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def context_vector(self, prev: float | None, nxt: float | None) -> np.ndarray:
        p = self.context_bins.n_bins
        vec = np.zeros(2 * p)
        if prev is not None:
            vec[self.context_bins.code(prev)] = 1.0
        if nxt is not None:
            vec[p + self.context_bins.code(nxt)] = 1.0
        return vec

    def nearest(self, vec: np.ndarray) -> int:
        return int(((self.centroids - vec) ** 2).sum(axis=1).argmin())

    def code(self, value: float, prev: float | None = None, nxt: float | None = None) -> int:
        c = self._index.get(float(value))
        if c is not None:
            return c
        return self.nearest(self.context_vector(prev, nxt))

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "normalize": self.normalize,
            "context_bins": self.context_bins.to_dict(),
            "values": [_num(v) for v in self.values],
            "labels": [int(c) for c in self.labels],
            "centroids": [[float(x) for x in row] for row in self.centroids],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ContextualCodebook":
        return cls(
            d["feature"],
            PercentileCodebook.from_dict(d["context_bins"]),
            [float(v) for v in d["values"]],
            [int(c) for c in d["labels"]],
            np.array(d["centroids"], dtype=float).reshape(len(d["centroids"]), -1),
            bool(d["normalize"]),
        )


def context_matrix(streams: Iterable[Sequence[float]], bins: PercentileCodebook,
                   normalize: bool = True) -> tuple[list[float], np.ndarray]:
    """Previous/next neighbour histograms for each distinct value.

    Neighbours never cross stream boundaries. Returns the sorted distinct
    values and the matching ``(n_values, 2 * n_bins)`` matrix.
    """
    streams = [list(map(float, s)) for s in streams]
    values = sorted({v for s in streams for v in s})
    index = {v: i for i, v in enumerate(values)}
    p = bins.n_bins
    M = np.zeros((len(values), 2 * p))
    for s in streams:
        if not s:
            continue
        codes = bins.codes(s)
        rows = np.array([index[v] for v in s])
        np.add.at(M, (rows[1:], codes[:-1]), 1.0)
        np.add.at(M, (rows[:-1], p + codes[1:]), 1.0)
    if normalize:
        for half in (slice(0, p), slice(p, 2 * p)):
            tot = M[:, half].sum(axis=1, keepdims=True)
            np.divide(M[:, half], tot, out=M[:, half], where=tot > 0)
    return values, M


def fit_contextual_codebook(feature: str, streams: Sequence[Sequence[float]], context_bins: int,
                            clusters: int, seed: int, normalize: bool = True,
                            max_iter: int = DEFAULT_MAX_ITER) -> ContextualCodebook:
    if clusters < 2 or context_bins < 2:
        raise ValueError("need at least 2 clusters and 2 context bins")
    all_values = [v for s in streams for v in s]
    bins = fit_percentile_codebook(feature, all_values, context_bins)
    values, M = context_matrix(streams, bins, normalize)
    n = len(values)
    if clusters > n:
        raise ValueError(f"{feature}: {clusters} clusters requested but only {n} distinct values")
    if clusters == n:
        labels = np.arange(n)
        centroids = M.copy()
    else:
        raw, centroids = kmeans(M, clusters, seed=seed, max_iter=max_iter)
        # renumber clusters by their smallest member value
        order = []
        for c in raw:
            if c not in order:
                order.append(c)
        order += [c for c in range(clusters) if c not in order]
        remap = {old: new for new, old in enumerate(order)}
        labels = np.array([remap[c] for c in raw])
        centroids = centroids[order]
    return ContextualCodebook(feature, bins, values, labels.tolist(), centroids, normalize)


@dataclass
class EncoderModel:
    scheme: str
    codebooks: dict
    alphabet: frozenset = frozenset()
    level: str | None = None
    params: dict = field(default_factory=dict)

    def feature_codes(self, flow: FlowRecord, context: tuple | None = None) -> tuple[int, int]:
        prev, nxt = context if context is not None else (None, None)
        out = []
        for feat in FEATURES:
            v = getattr(flow, feat)
            cb = self.codebooks[feat]
            if isinstance(cb, ContextualCodebook):
                out.append(cb.code(
                    v,
                    getattr(prev, feat) if prev is not None else None,
                    getattr(nxt, feat) if nxt is not None else None,
                ))
            else:
                out.append(cb.code(v))
        return out[0], out[1]

    def encode_flow(self, flow: FlowRecord, context: tuple | None = None) -> str:
        """Symbol for one flow; ``context`` is ``(previous_flow, next_flow)``."""
        b, d = self.feature_codes(flow, context)
        return f"{flow.protocol}_{b}_{d}"

    def encode_stream(self, flows: Sequence[FlowRecord]) -> list[str]:
        n = len(flows)
        return [
            self.encode_flow(f, (flows[i - 1] if i else None, flows[i + 1] if i + 1 < n else None))
            for i, f in enumerate(flows)
        ]

    def in_alphabet(self, symbol: str) -> bool:
        return symbol in self.alphabet

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "level": self.level,
            "params": self.params,
            "codebooks": {k: cb.to_dict() for k, cb in sorted(self.codebooks.items())},
            "alphabet": sorted(self.alphabet),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderModel":
        kind = {
            "percentile": PercentileCodebook,
            "frequency": FrequencyCodebook,
            "contextual_frequency": ContextualCodebook,
        }[d["scheme"]]
        return cls(
            d["scheme"],
            {k: kind.from_dict(v) for k, v in d["codebooks"].items()},
            frozenset(d["alphabet"]),
            d.get("level"),
            dict(d.get("params", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "EncoderModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _finish(model: EncoderModel, flows: Dataset | Sequence[FlowRecord]) -> EncoderModel:
    if model.scheme == "contextual_frequency":
        symbols = set()
        for group in group_flows(flows, model.level).values():
            symbols.update(model.encode_stream(group))
    else:
        symbols = {model.encode_flow(f) for f in flows}
    model.alphabet = frozenset(symbols)
    return model


def _check_nonempty(flows):
    if len(flows) == 0:
        raise ValueError("no training flows")


def fit_percentile(flows: Dataset | Sequence[FlowRecord], bins: int = DEFAULT_BINS) -> EncoderModel:
    _check_nonempty(flows)
    books = {
        feat: fit_percentile_codebook(feat, [getattr(f, feat) for f in flows], bins)
        for feat in FEATURES
    }
    return _finish(EncoderModel("percentile", books, params={"bins": bins}), flows)


def fit_frequency(flows: Dataset | Sequence[FlowRecord], threshold: int | None = None,
                  rare_bins: int = DEFAULT_BINS,
                  min_fraction: float = DEFAULT_MIN_FRACTION) -> EncoderModel:
    """Frequency encoder. Without an explicit ``threshold`` a value is frequent
    when it covers at least ``min_fraction`` of the training flows."""
    _check_nonempty(flows)
    if threshold is None:
        threshold = max(1, math.ceil(min_fraction * len(flows)))
    books = {
        feat: fit_frequency_codebook(feat, [getattr(f, feat) for f in flows], threshold, rare_bins)
        for feat in FEATURES
    }
    params = {"threshold": threshold, "rare_bins": rare_bins}
    return _finish(EncoderModel("frequency", books, params=params), flows)


def fit_contextual(flows: Dataset | Sequence[FlowRecord], level: SortingLevel | str = SortingLevel.TIMESTAMP,
                   context_bins: int = DEFAULT_CONTEXT_BINS, clusters: int = DEFAULT_CLUSTERS,
                   seed: int = 0, normalize: bool = True,
                   max_iter: int = DEFAULT_MAX_ITER) -> EncoderModel:
    """Contextual frequency encoder.

    Flows are grouped and ordered by ``level``; each group is one stream, so
    use the same level when building traces.
    """
    _check_nonempty(flows)
    level = SortingLevel(level)
    groups = list(group_flows(flows, level).values())
    books = {}
    for feat in FEATURES:
        streams = [[getattr(f, feat) for f in g] for g in groups]
        books[feat] = fit_contextual_codebook(feat, streams, context_bins, clusters, seed,
                                              normalize, max_iter)
    params = {"context_bins": context_bins, "clusters": clusters, "seed": seed,
              "normalize": normalize, "max_iter": max_iter}
    return _finish(EncoderModel("contextual_frequency", books, level=level.value, params=params), flows)


def fit_encoder(flows, scheme: str, level: SortingLevel | str = SortingLevel.TIMESTAMP,
                **params) -> EncoderModel:
    if scheme == "percentile":
        return fit_percentile(flows, **params)
    if scheme == "frequency":
        return fit_frequency(flows, **params)
    if scheme == "contextual_frequency":
        return fit_contextual(flows, level, **params)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def encode_flow(model: EncoderModel, flow: FlowRecord, context: tuple | None = None) -> str:
    return model.encode_flow(flow, context)
