"""Likelihood scoring of traces and alarm thresholds."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .flows import MALICIOUS
from .pdfa import Pdfa, sequence_probability
from .traces import SymbolicTrace

NORMAL = "normal"
ANOMALOUS = "anomalous"
METHODS = ("train_min_margin", "train_percentile", "fixed")

DEFAULT_METHOD = "train_percentile"
DEFAULT_PERCENTILE = 0.1  # percent


class FingerprintError(ValueError):
    """Artifacts produced under different configurations were combined."""


@dataclass(frozen=True)
class Threshold:
    value: float
    method: str = "fixed"
    param: float | None = None


@dataclass
class ScoredTrace:
    trace: SymbolicTrace
    log_likelihood: float
    normalized_score: float
    verdict: str = NORMAL
    threshold_used: float = -np.inf

    @property
    def anomalous(self) -> bool:
        return self.verdict == ANOMALOUS


def verdict(score: float, threshold: float) -> str:
    return ANOMALOUS if score < threshold else NORMAL


def score_traces(m: Pdfa, traces: Sequence[SymbolicTrace],
                 threshold: Threshold | float | None = None) -> list[ScoredTrace]:
    """Score traces by log-likelihood; ``normalized_score`` is per symbol.

    Traces stamped with a fingerprint must match the model's.
    """
    thr = threshold.value if isinstance(threshold, Threshold) else threshold
    out = []
    for t in traces:
        if m.fingerprint and t.fingerprint and t.fingerprint != m.fingerprint:
            raise FingerprintError(
                f"trace fingerprint {t.fingerprint} does not match model {m.fingerprint}"
            )
        _, ll = sequence_probability(m, t.symbols)
        norm = ll / len(t.symbols) if len(t.symbols) else ll
        s = ScoredTrace(t, ll, norm)
        if thr is not None:
            s.verdict = verdict(norm, thr)
            s.threshold_used = thr
        out.append(s)
    return out


def apply_threshold(scored: Sequence[ScoredTrace], threshold: Threshold | float) -> list[ScoredTrace]:
    thr = threshold.value if isinstance(threshold, Threshold) else threshold
    for s in scored:
        s.verdict = verdict(s.normalized_score, thr)
        s.threshold_used = thr
    return list(scored)


def calibrate_threshold(train_scores: Sequence[float], method: str = DEFAULT_METHOD,
                        param: float | None = None) -> Threshold:
    """Alarm threshold from benign training scores only.

    ``train_min_margin``: min score minus ``param``; ``train_percentile``:
    the ``param``-th percentile (0-100); ``fixed``: ``param`` itself.
    """
    if method == "fixed":
        if param is None:
            raise ValueError("fixed threshold needs a value")
        return Threshold(float(param), method, param)
    scores = np.asarray(list(train_scores), dtype=float)
    if scores.size == 0:
        raise ValueError("no training scores")
    if method == "train_min_margin":
        margin = 0.0 if param is None else float(param)
        return Threshold(float(scores.min() - margin), method, margin)
    if method == "train_percentile":
        p = DEFAULT_PERCENTILE if param is None else float(param)
        return Threshold(float(np.percentile(scores, p)), method, p)
    raise ValueError(f"unknown threshold method {method!r}; expected one of {METHODS}")


SCORE_COLUMNS = ("trace_index", "group_key", "first_timestamp", "normalized_score", "label", "verdict")


def write_scores(scored: Sequence[ScoredTrace], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for i, s in enumerate(scored):
            w.writerow([i, s.trace.group_key, s.trace.first_timestamp,
                        repr(float(s.normalized_score)), s.trace.label, s.verdict])


def read_scores(path) -> list[dict]:
    """Rows of a scores file, with typed values."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({
                "trace_index": int(row["trace_index"]),
                "group_key": row["group_key"],
                "first_timestamp": int(row["first_timestamp"]),
                "normalized_score": float(row["normalized_score"]),
                "label": row["label"],
                "verdict": row["verdict"],
            })
    return rows


def likelihood_series(scored: Sequence[ScoredTrace], order: str = "by_index") -> list[tuple]:
    """``(x, negative normalized log-likelihood, label)`` rows for plotting."""
    if order not in ("by_index", "by_timestamp"):
        raise ValueError(f"unknown order {order!r}")
    items = list(scored)
    if order == "by_timestamp":
        items = sorted(items, key=lambda s: (s.trace.first_timestamp, s.trace.group_key))
        return [(s.trace.first_timestamp, -s.normalized_score, s.trace.label) for s in items]
    return [(i, -s.normalized_score, s.trace.label) for i, s in enumerate(items)]


def emit_likelihood_series(scored: Sequence[ScoredTrace], path, order: str = "by_index",
                           svg_path=None, title: str = "") -> None:
    """Write the likelihood series as CSV and optionally an SVG chart.

    Higher y means lower likelihood; malicious traces are marked in red.
    """
    rows = likelihood_series(scored, order)
    x_name = "trace_index" if order == "by_index" else "first_timestamp"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([x_name, "neg_normalized_loglik", "label"])
        for x, y, lab in rows:
            w.writerow([x, repr(float(y)), lab])
    if svg_path is not None:
        render_svg(rows, svg_path, x_name, title)


def render_svg(rows, path, x_name: str = "trace_index", title: str = "") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "flowpdfa"
    x = np.array([r[0] for r in rows], dtype=float)
    y = np.array([r[1] for r in rows], dtype=float)
    bad = np.array([r[2] == MALICIOUS for r in rows], dtype=bool)
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(x, y, lw=0.6, color="tab:blue")
    if bad.any():
        ax.scatter(x[bad], y[bad], s=4, color="tab:red", zorder=3, label="malicious")
        ax.legend(loc="upper right")
    ax.set_xlabel(x_name)
    ax.set_ylabel("-log likelihood / symbol")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(os.fspath(path), format="svg", metadata={"Date": None})
    plt.close(fig)
