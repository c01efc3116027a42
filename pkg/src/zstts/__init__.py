"""Zero-shot TTS speaker conditioning from layer-weighted pseudo-SSL features, in numpy."""

__version__ = "0.1.0"

from .acoustic import AcousticModel, ModelConfig, length_regulate, phoneme_sequence, to_frames
from .corpus import CorpusConfig, CorpusModel, generate_corpus, load_manifest, split
from .embedding import LayerWeights, SSLEmbedder, baseline_stats_embedding, weighted_sum
from .evaluation import (
    duration_rmse_ms,
    export_layer_weights,
    mel_mae,
    run_objective_eval,
    run_rhythm_transfer_eval,
    speaking_rate,
)
from .features import ExtractorConfig, RepresentationStack, Waveform, extract, load_external, save_external
from .numerics import adam_step, grad_check, noam_lr, softmax
from .training import TrainConfig, compute_loss, load_model, resume, train

__all__ = [
    "AcousticModel",
    "CorpusConfig",
    "CorpusModel",
    "ExtractorConfig",
    "LayerWeights",
    "ModelConfig",
    "RepresentationStack",
    "SSLEmbedder",
    "TrainConfig",
    "Waveform",
    "adam_step",
    "baseline_stats_embedding",
    "compute_loss",
    "duration_rmse_ms",
    "export_layer_weights",
    "extract",
    "generate_corpus",
    "grad_check",
    "length_regulate",
    "load_external",
    "load_manifest",
    "load_model",
    "mel_mae",
    "noam_lr",
    "phoneme_sequence",
    "resume",
    "run_objective_eval",
    "run_rhythm_transfer_eval",
    "save_external",
    "softmax",
    "speaking_rate",
    "split",
    "to_frames",
    "train",
    "weighted_sum",
]
