"""Splitting, protocols, training, metrics and embeddings for domain generalisation experiments."""

from recapdet.harness.experiment import ProtocolResult, assemble, audit_leakage, run_protocol
from recapdet.harness.metrics import MetricsReport, auc_pairs, auc_trapezoid, compute_metrics, roc_curve
from recapdet.harness.splits import ExperimentProtocol, SplitSpec, build_protocols, split_8_1_1
from recapdet.harness.training import DomainAdvConfig, TrainConfig, TrainRun, evaluate, score, train
from recapdet.harness.tsne import silhouette, tsne_embed

__all__ = [
    "DomainAdvConfig", "ExperimentProtocol", "MetricsReport", "ProtocolResult", "SplitSpec", "TrainConfig",
    "TrainRun", "assemble", "audit_leakage", "auc_pairs", "auc_trapezoid", "build_protocols", "compute_metrics",
    "evaluate", "roc_curve", "run_protocol", "score", "silhouette", "split_8_1_1", "train", "tsne_embed",
]
