"""Jointly meta-learned per-label training weights and prediction thresholds
for multi-label classification."""

from .classifier import MLPClassifier, predict_labels, weighted_cross_entropy
from .data import LabelVocab, MultiLabelDataset, SynthConfig, load_dataset, synth_generate
from .metaln import MetaConfig, MetaParams, extract_final_policies, train_meta
from .metrics import MetricsReport, evaluate
from .policies import PolicyFile, PolicyPair

__version__ = "0.1.0"

__all__ = [
    "LabelVocab",
    "MLPClassifier",
    "MetaConfig",
    "MetaParams",
    "MetricsReport",
    "MultiLabelDataset",
    "PolicyFile",
    "PolicyPair",
    "SynthConfig",
    "evaluate",
    "extract_final_policies",
    "load_dataset",
    "predict_labels",
    "synth_generate",
    "train_meta",
    "weighted_cross_entropy",
]
