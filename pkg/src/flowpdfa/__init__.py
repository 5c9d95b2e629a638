"""Learning PDFAs from NetFlow records to flag anomalous cluster traffic."""
from .detector import ScoredTrace, Threshold, calibrate_threshold, score_traces
from .encoding import EncoderModel, encode_flow, fit_contextual, fit_encoder, fit_frequency, fit_percentile
from .evaluation import MetricsReport, compute_metrics, score_isolation_forest, train_isolation_forest
from .flows import ColumnSchema, DataError, Dataset, FlowRecord, load_flows, split_train_test
from .merging import MergeConfig, learn, merge_and_fold, similarity_test
from .pdfa import Pdfa, build_pta, estimate_probs, export_dot, sequence_probability, to_dot
from .sorting import SortingLevel
from .traces import SymbolicTrace, build_traces, export_traces, import_traces

__version__ = "0.1.0"
