"""Near-memory offload advisor.

Predicts whether an application is worth offloading to a near-memory
computing device using only counters collected on the host.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, ModelError, NmpoError  # noqa: E402
from .ingest import PerfProfile, RunRecord, RunSpec, load_corpus, parse_perf_csv, parse_ramulator_stats  # noqa: E402
from .metrics import (  # noqa: E402
    MachineRoofline,
    OffloadLabel,
    Region,
    compute_edp_speedup,
    derive_features,
    label_decision,
    roofline_classify,
)
from .pipeline import ModelBundle, PipelineConfig, load_model, predict_offload, save_model, train_pipeline  # noqa: E402

__all__ = [
    "ConfigError", "DataError", "MachineRoofline", "ModelBundle", "ModelError", "NmpoError",
    "OffloadLabel", "PerfProfile", "PipelineConfig", "Region", "RunRecord", "RunSpec",
    "compute_edp_speedup", "derive_features", "label_decision", "load_corpus", "load_model",
    "parse_perf_csv", "parse_ramulator_stats", "predict_offload", "roofline_classify",
    "save_model", "train_pipeline",
]
