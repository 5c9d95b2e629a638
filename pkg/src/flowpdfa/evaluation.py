"""Detection metrics and the isolation-forest baseline."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.ensemble import IsolationForest as _SkIsolationForest

from .detector import ANOMALOUS, NORMAL, ScoredTrace
from .encoding import EncoderModel
from .flows import BENIGN, MALICIOUS, DataError, Dataset, FlowRecord
from .traces import SymbolicTrace

LEVEL_NAMES = {
    "connection": "Connection",
    "source_host": "Source Host",
    "destination_host": "Destination Host",
    "timestamp": "Timestamp",
}
SCHEME_NAMES = {
    "percentile": "Percentile",
    "frequency": "Frequency",
    "contextual_frequency": "Contextual Frequency",
}


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    balanced_accuracy: float
    f1: float
    f1_undefined: bool = False
    method: str = "pdfa"
    encoding: str = ""
    level: str = ""
    fingerprint: str = ""

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0


def metrics_from_confusion(tp: int, fp: int, tn: int, fn: int, **tags) -> MetricsReport:
    """Malicious is the positive class.

    Balanced accuracy averages the recall of the classes that are present.
    F1 is reported as 0 (and flagged) when it is undefined.
    """
    rates = []
    if tp + fn:
        rates.append(tp / (tp + fn))
    if tn + fp:
        rates.append(tn / (tn + fp))
    bal = float(np.mean(rates)) if rates else 0.0
    denom = 2 * tp + fp + fn
    undefined = denom == 0
    f1 = 0.0 if undefined else 2 * tp / denom
    return MetricsReport(tp, fp, tn, fn, bal, f1, undefined, **tags)


def confusion(labels: Iterable[str], predictions: Iterable[str]) -> tuple[int, int, int, int]:
    tp = fp = tn = fn = 0
    for lab, pred in zip(labels, predictions, strict=True):
        if lab not in (BENIGN, MALICIOUS):
            raise DataError(f"unlabeled trace (label={lab!r})")
        if pred not in (NORMAL, ANOMALOUS):
            raise DataError(f"trace without verdict ({pred!r})")
        pos = pred == ANOMALOUS
        if lab == MALICIOUS:
            tp += pos
            fn += not pos
        else:
            fp += pos
            tn += not pos
    return tp, fp, tn, fn


def compute_metrics(scored: Sequence[ScoredTrace], **tags) -> MetricsReport:
    tp, fp, tn, fn = confusion((s.trace.label for s in scored), (s.verdict for s in scored))
    return metrics_from_confusion(tp, fp, tn, fn, **tags)


# -- isolation forest baseline --------------------------------------------

def c_factor(n: int) -> float:
    """Average path length of an unsuccessful BST search over ``n`` points."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + np.euler_gamma) - 2.0 * (n - 1) / n


@dataclass
class IsolationForest:
    n_estimators: int = 100
    subsample_size: int = 256
    seed: int = 0
    features: str = "raw"
    protocols: list[str] = field(default_factory=list)
    encoder: EncoderModel | None = field(default=None, repr=False)
    model: _SkIsolationForest | None = field(default=None, repr=False)

    def feature_matrix(self, flows: Iterable[FlowRecord]) -> np.ndarray:
        codes = {p: i for i, p in enumerate(self.protocols)}
        rows = []
        for f in flows:
            proto = codes.get(f.protocol, len(codes))
            if self.features == "encoded":
                b, d = self.encoder.feature_codes(f)
                rows.append((proto, b, d))
            else:
                rows.append((proto, f.bytes_total, f.duration_ms))
        return np.array(rows, dtype=float).reshape(-1, 3)

    def anomaly_scores(self, flows: Iterable[FlowRecord]) -> np.ndarray:
        """``2 ** (-E[path length] / c(subsample))``, in (0, 1]."""
        return -self.model.score_samples(self.feature_matrix(flows))


def train_isolation_forest(flows: Dataset | Sequence[FlowRecord], n_estimators: int = 100,
                           subsample_size: int = 256, seed: int = 0, features: str = "raw",
                           encoder: EncoderModel | None = None) -> IsolationForest:
    flows = list(flows)
    if not flows:
        raise DataError("no training flows")
    if any(f.malicious for f in flows):
        raise DataError("isolation forest must be trained on benign flows")
    if features not in ("raw", "encoded"):
        raise ValueError(f"unknown feature mode {features!r}")
    if features == "encoded" and encoder is None:
        raise ValueError("encoded features need an encoder")
    forest = IsolationForest(n_estimators, min(subsample_size, len(flows)), seed, features,
                             sorted({f.protocol for f in flows}), encoder)
    forest.model = _SkIsolationForest(
        n_estimators=n_estimators,
        max_samples=forest.subsample_size,
        random_state=seed,
    ).fit(forest.feature_matrix(flows))
    return forest


def score_isolation_forest(forest: IsolationForest, flows: Dataset | Sequence[FlowRecord],
                           contamination: float = 0.01) -> dict[int, bool]:
    """Flag the ``contamination`` fraction of ``flows`` with the highest score.

    Returns ``flow_id -> flagged``.
    """
    if not 0 <= contamination <= 1:
        raise ValueError("contamination must be in [0, 1]")
    flows = list(flows)
    scores = forest.anomaly_scores(flows)
    k = int(round(contamination * len(flows)))
    order = np.argsort(-scores, kind="stable")
    flagged = np.zeros(len(flows), dtype=bool)
    flagged[order[:k]] = True
    return {f.flow_id: bool(x) for f, x in zip(flows, flagged)}


def lift_to_traces(traces: Sequence[SymbolicTrace], flagged: dict[int, bool]) -> list[ScoredTrace]:
    """A trace is anomalous iff any of its flows was flagged."""
    out = []
    for t in traces:
        hit = any(flagged.get(i, False) for i in t.flow_ids)
        out.append(ScoredTrace(t, math.nan, math.nan, ANOMALOUS if hit else NORMAL, math.nan))
    return out


# -- reporting ---------------------------------------------------------------

def report_rows(reports: Sequence[MetricsReport]) -> list[dict]:
    return [dict(asdict(r), precision=r.precision, recall=r.recall) for r in reports]


def write_report(reports: Sequence[MetricsReport], json_path, table_path=None) -> None:
    with open(json_path, "w") as fh:
        json.dump(report_rows(reports), fh, indent=1, sort_keys=True)
        fh.write("\n")
    if table_path is not None:
        with open(table_path, "w") as fh:
            fh.write(format_table(reports))


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Plain-text table: method, encoding, sorting level, metrics."""
    header = ("Method", "Encoding", "Sorting Level", "Balanced Accuracy", "F1 Score")
    rows = []
    for r in reports:
        method = "Isolation Forest" if r.method == "iforest" else "PDFA"
        enc = "N/A" if r.method == "iforest" else SCHEME_NAMES.get(r.encoding, r.encoding)
        f1 = f"{r.f1:.4f}" + ("*" if r.f1_undefined else "")
        rows.append((method, enc, LEVEL_NAMES.get(r.level, r.level), f"{r.balanced_accuracy:.3f}", f1))
    widths = [max(len(x) for x in col) for col in zip(header, *rows)]
    line = "-+-".join("-" * w for w in widths)
    fmt = " | ".join("{:<%d}" % w for w in widths)
    out = [fmt.format(*header), line] + [fmt.format(*r) for r in rows]
    if any(r.f1_undefined for r in reports):
        out.append("* F1 undefined (no positives predicted or present); reported as 0")
    return "\n".join(out) + "\n"
