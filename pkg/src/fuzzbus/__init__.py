"""fuzzbus: many input producers, one persistent executor, minimal bytes on the wire."""

from .coverage import (
    ClassifiedMap,
    CoverageMap,
    CumulativeMap,
    NoveltyLevel,
    checksum,
    classify,
    has_new_bits,
    trace_edge,
)
from .protocol import ConfigMessage, Fault, FeedbackRecord, Frame, MsgType
from .campaign import (
    CampaignConfig,
    CampaignResult,
    experiment_sweep,
    geometric_mean,
    predict_throughput,
    run_campaign,
    speedup,
)

__version__ = "0.1.0"

__all__ = [
    "CampaignConfig",
    "CampaignResult",
    "ClassifiedMap",
    "ConfigMessage",
    "CoverageMap",
    "CumulativeMap",
    "Fault",
    "FeedbackRecord",
    "Frame",
    "MsgType",
    "NoveltyLevel",
    "checksum",
    "classify",
    "experiment_sweep",
    "geometric_mean",
    "has_new_bits",
    "predict_throughput",
    "run_campaign",
    "speedup",
    "trace_edge",
]
