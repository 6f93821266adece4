"""Claim denial prediction with gated, multi-task embedding networks."""

from .estimator import DeepClaimClassifier
from .featurize import ClaimVectorizer, Vocabulary, build_vocab, vectorize
from .ingest import ClaimRecord, DenialCodeSet, RemittanceRecord, join_and_label
from .model import ModelConfig, VARIANTS
from .synth import SynthConfig, generate

__all__ = [
    "ClaimRecord",
    "ClaimVectorizer",
    "DeepClaimClassifier",
    "DenialCodeSet",
    "ModelConfig",
    "RemittanceRecord",
    "SynthConfig",
    "VARIANTS",
    "Vocabulary",
    "build_vocab",
    "generate",
    "join_and_label",
    "vectorize",
]

__version__ = "0.1.0"
