"""End-to-end pipeline driven by one config: encode, learn, score, evaluate."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import encoding
from .detector import (FingerprintError, Threshold, apply_threshold, calibrate_threshold,
                       emit_likelihood_series, read_scores, score_traces, write_scores)
from .evaluation import (MetricsReport, compute_metrics, confusion, lift_to_traces,
                         metrics_from_confusion, score_isolation_forest, train_isolation_forest,
                         write_report)
from .flows import DataError, Dataset, load_flows, split_train_test
from .merging import MergeConfig, learn
from .pdfa import Pdfa, build_pta
from .sorting import SortingLevel
from .traces import build_traces, export_traces

logger = logging.getLogger(__name__)

DEFAULTS: dict[str, Any] = {
    "data": None,
    "test_data": None,
    "schema": {},
    "split_boundary": None,
    "seed": 0,
    "encoder": {
        "scheme": "contextual_frequency",
        "bins": encoding.DEFAULT_BINS,
        "threshold": None,
        "min_fraction": encoding.DEFAULT_MIN_FRACTION,
        "rare_bins": encoding.DEFAULT_BINS,
        "context_bins": encoding.DEFAULT_CONTEXT_BINS,
        "clusters": encoding.DEFAULT_CLUSTERS,
        "normalize": True,
        "max_iter": encoding.DEFAULT_MAX_ITER,
    },
    "level": "timestamp",
    "window": 10,
    "stride": 1,
    "model": {
        "alpha": 0.05,
        "min_count": 10,
        "max_iterations": 1_000_000,
        "smoothing": 1.0,
        "uses_final": False,
        "floor": None,
    },
    "threshold": {"method": "train_percentile", "param": 0.1},
    "baseline": {
        "enabled": True,
        "n_estimators": 100,
        "subsample_size": 256,
        "contamination": 0.01,
        "features": "raw",
    },
    "plots": {"svg": False, "order": "by_index"},
    "output_dir": "out",
}

# config keys that do not change any artifact
_UNFINGERPRINTED = ("output_dir", "plots")


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise DataError(f"unknown config key {k!r}")
        if isinstance(base[k], dict) and k != "schema":
            if not isinstance(v, Mapping):
                raise DataError(f"config key {k!r} must be a mapping")
            out[k] = _merge(base[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PipelineConfig:
    values: dict

    @classmethod
    def from_mapping(cls, cfg: Mapping | None = None, base_dir: str | os.PathLike | None = None) -> "PipelineConfig":
        vals = _merge(DEFAULTS, cfg or {})
        if base_dir is not None:
            for key in ("data", "test_data"):
                if vals[key] and not os.path.isabs(vals[key]):
                    vals[key] = os.path.normpath(os.path.join(base_dir, vals[key]))
        SortingLevel(vals["level"])
        if vals["encoder"]["scheme"] not in encoding.SCHEMES:
            raise DataError(f"unknown encoder scheme {vals['encoder']['scheme']!r}")
        return cls(vals)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        return cls.from_mapping(raw, base_dir=os.path.dirname(os.path.abspath(path)))

    def with_overrides(self, **over) -> "PipelineConfig":
        vals = copy.deepcopy(self.values)
        for dotted, v in over.items():
            node = vals
            *head, last = dotted.split(".")
            for h in head:
                node = node[h]
            if last not in node:
                raise DataError(f"unknown config key {dotted!r}")
            node[last] = v
        return PipelineConfig.from_mapping(vals)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["output_dir"])

    def fingerprint(self) -> str:
        vals = {k: v for k, v in self.values.items() if k not in _UNFINGERPRINTED}
        # dataset paths matter by content, not by how they were spelled
        for key in ("data", "test_data"):
            if vals.get(key):
                vals[key] = _file_digest(vals[key])
        blob = json.dumps(vals, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def encoder_params(self) -> dict:
        e = self.values["encoder"]
        scheme = e["scheme"]
        if scheme == "percentile":
            return {"bins": e["bins"]}
        if scheme == "frequency":
            return {"threshold": e["threshold"], "rare_bins": e["rare_bins"],
                    "min_fraction": e["min_fraction"]}
        return {"context_bins": e["context_bins"], "clusters": e["clusters"],
                "seed": self.values["seed"], "normalize": e["normalize"], "max_iter": e["max_iter"]}

    def merge_config(self) -> MergeConfig:
        m = self.values["model"]
        return MergeConfig(alpha=m["alpha"], min_count=m["min_count"],
                           max_iterations=m["max_iterations"], seed=self.values["seed"],
                           smoothing=m["smoothing"])


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- data -------------------------------------------------------------------

def load_partitions(cfg: PipelineConfig) -> tuple[Dataset, Dataset]:
    if not cfg["data"]:
        raise DataError("config has no 'data' path")
    ds = load_flows(cfg["data"], cfg["schema"])
    if cfg["test_data"]:
        test = load_flows(cfg["test_data"], cfg["schema"])
        if cfg["split_boundary"] is not None:
            ds, _ = split_train_test(ds, int(cfg["split_boundary"]))
        if any(r.malicious for r in ds):
            raise DataError("training data contains malicious flows")
        return ds, test
    if cfg["split_boundary"] is None:
        raise DataError("config needs 'split_boundary' or 'test_data'")
    return split_train_test(ds, int(cfg["split_boundary"]))


# -- stages -----------------------------------------------------------------

def fit_encoder(cfg: PipelineConfig, train: Dataset) -> encoding.EncoderModel:
    return encoding.fit_encoder(train, cfg["encoder"]["scheme"], cfg["level"], **cfg.encoder_params())


def make_traces(cfg: PipelineConfig, flows: Dataset, enc: encoding.EncoderModel):
    return build_traces(flows, enc, cfg["level"], cfg["window"], cfg["stride"])


def learn_model(cfg: PipelineConfig, traces) -> tuple[Pdfa, Any, Pdfa]:
    pta = build_pta(traces, uses_final=cfg["model"]["uses_final"])
    model, log = learn(pta, cfg.merge_config())
    model.floor = cfg["model"]["floor"]
    return model, log, pta


@dataclass
class TrainResult:
    encoder: encoding.EncoderModel
    model: Pdfa
    pta_states: int
    threshold: Threshold
    train_scored: list
    train: Dataset
    merges: Any


def train(cfg: PipelineConfig, train_flows: Dataset | None = None) -> TrainResult:
    if train_flows is None:
        train_flows, _ = load_partitions(cfg)
    enc = fit_encoder(cfg, train_flows)
    traces = make_traces(cfg, train_flows, enc)
    model, log, pta = learn_model(cfg, traces)
    model.config = dict(model.config, fingerprint=cfg.fingerprint(), encoder=cfg["encoder"]["scheme"],
                        level=cfg["level"], window=cfg["window"], stride=cfg["stride"],
                        seed=cfg["seed"])
    scored = score_traces(model, traces)
    t = cfg["threshold"]
    thr = calibrate_threshold([s.normalized_score for s in scored], t["method"], t["param"])
    apply_threshold(scored, thr)
    return TrainResult(enc, model, len(pta), thr, scored, train_flows, log)


def score(cfg: PipelineConfig, result: TrainResult, test_flows: Dataset):
    traces = make_traces(cfg, test_flows, result.encoder)
    return score_traces(result.model, traces, result.threshold)


def evaluate(cfg: PipelineConfig, scored, tags: Mapping | None = None) -> MetricsReport:
    tags = dict(tags or {})
    tags.setdefault("encoding", cfg["encoder"]["scheme"])
    tags.setdefault("level", cfg["level"])
    return compute_metrics(scored, fingerprint=cfg.fingerprint(), **tags)


def baseline(cfg: PipelineConfig, train_flows: Dataset, test_flows: Dataset, test_traces,
             encoder: encoding.EncoderModel | None = None) -> MetricsReport:
    b = cfg["baseline"]
    forest = train_isolation_forest(train_flows, b["n_estimators"], b["subsample_size"],
                                    cfg["seed"], b["features"], encoder)
    flagged = score_isolation_forest(forest, test_flows, b["contamination"])
    lifted = lift_to_traces(test_traces, flagged)
    return compute_metrics(lifted, method="iforest", encoding="", level=cfg["level"],
                           fingerprint=cfg.fingerprint())


# -- file artifacts -----------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_manifest(out: Path) -> dict:
    p = out / "manifest.json"
    if not p.exists():
        raise DataError(f"{p} not found; run 'train' first")
    return json.loads(p.read_text())


def check_fingerprint(cfg: PipelineConfig, found: str, what: str) -> None:
    if found != cfg.fingerprint():
        raise FingerprintError(f"{what} was produced under config {found}, current config is {cfg.fingerprint()}")


def run_train(cfg: PipelineConfig) -> TrainResult:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    res = train(cfg)
    fp = cfg.fingerprint()
    enc = res.encoder.to_dict()
    enc["fingerprint"] = fp
    _write_json(out / "encoder.json", enc)
    res.model.save(out / "model.json")
    res.merges.save(out / "merges.tsv")
    write_scores(res.train_scored, out / "train_scores.csv")
    _write_json(out / "manifest.json", {
        "fingerprint": fp,
        "threshold": {"value": res.threshold.value, "method": res.threshold.method,
                      "param": res.threshold.param},
        "pta_states": res.pta_states,
        "model_states": len(res.model),
        "config": cfg.values,
    })
    return res


def load_trained(cfg: PipelineConfig) -> TrainResult:
    out = cfg.output_dir
    man = _read_manifest(out)
    check_fingerprint(cfg, man["fingerprint"], "manifest.json")
    enc_d = json.loads((out / "encoder.json").read_text())
    check_fingerprint(cfg, enc_d.pop("fingerprint", ""), "encoder.json")
    model = Pdfa.load(out / "model.json")
    check_fingerprint(cfg, model.config.get("fingerprint", ""), "model.json")
    t = man["threshold"]
    thr = Threshold(t["value"], t["method"], t["param"])
    return TrainResult(encoding.EncoderModel.from_dict(enc_d), model, man["pta_states"], thr, [], None, None)


def run_score(cfg: PipelineConfig) -> list:
    out = cfg.output_dir
    res = load_trained(cfg)
    train_flows, test_flows = load_partitions(cfg)
    scored = score(cfg, res, test_flows)
    write_scores(scored, out / "scores.csv")
    svg = cfg["plots"]["svg"]
    order = cfg["plots"]["order"]
    train_scored = score_traces(res.model, make_traces(cfg, train_flows, res.encoder), res.threshold)
    for name, items in (("train", train_scored), ("test", scored)):
        emit_likelihood_series(items, out / f"likelihood_{name}.csv", order,
                               svg_path=out / f"likelihood_{name}.svg" if svg else None,
                               title=f"{cfg['encoder']['scheme']} / {cfg['level']} / {name}")
    return scored


def run_eval(cfg: PipelineConfig, with_baseline: bool | None = None) -> list[MetricsReport]:
    out = cfg.output_dir
    man = _read_manifest(out)
    check_fingerprint(cfg, man["fingerprint"], "manifest.json")
    path = out / "scores.csv"
    if not path.exists():
        raise DataError(f"{path} not found; run 'score' first")
    rows = read_scores(path)
    tp, fp, tn, fn = confusion([r["label"] for r in rows], [r["verdict"] for r in rows])
    reports = [metrics_from_confusion(tp, fp, tn, fn, encoding=cfg["encoder"]["scheme"],
                                      level=cfg["level"], fingerprint=cfg.fingerprint())]
    if with_baseline if with_baseline is not None else cfg["baseline"]["enabled"]:
        train_flows, test_flows = load_partitions(cfg)
        enc = load_trained(cfg).encoder
        reports.append(baseline(cfg, train_flows, test_flows, make_traces(cfg, test_flows, enc), enc))
    write_report(reports, out / "report.json", out / "report.txt")
    return reports


def run_sweep(cfg: PipelineConfig, schemes=encoding.SCHEMES, levels=tuple(l.value for l in SortingLevel)) -> list[MetricsReport]:
    """Every encoding x sorting level, plus one baseline row per level."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    train_flows, test_flows = load_partitions(cfg)
    pdfa_rows, base_rows = [], []
    for scheme in schemes:
        for level in levels:
            sub = cfg.with_overrides(**{"encoder.scheme": scheme, "level": level,
                                        "output_dir": str(out / f"{scheme}-{level}")})
            logger.info("sweep: %s / %s", scheme, level)
            sub.output_dir.mkdir(parents=True, exist_ok=True)
            res = train(sub, train_flows)
            scored = score(sub, res, test_flows)
            write_scores(scored, sub.output_dir / "scores.csv")
            pdfa_rows.append(evaluate(sub, scored))
            if cfg["baseline"]["enabled"] and scheme == schemes[0]:
                base_rows.append(baseline(sub, train_flows, test_flows, [s.trace for s in scored],
                                          res.encoder))
    reports = pdfa_rows + base_rows
    write_report(reports, out / "report.json", out / "report.txt")
    return reports


def run_export_traces(cfg: PipelineConfig, partition: str, path) -> int:
    out = cfg.output_dir
    if (out / "encoder.json").exists():
        enc = load_trained(cfg).encoder
        train_flows, test_flows = load_partitions(cfg)
    else:
        train_flows, test_flows = load_partitions(cfg)
        enc = fit_encoder(cfg, train_flows)
    flows = train_flows if partition == "train" else test_flows
    traces = make_traces(cfg, flows, enc)
    export_traces(traces, path)
    return len(traces)
