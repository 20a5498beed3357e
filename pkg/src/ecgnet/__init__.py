"""ecgnet: multi-task 12-lead ECG classification built on a numpy autodiff engine."""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, backward, tape_scope
from .data import (Dataset, EcgRecord, LabelVocabulary, ResampleConfig,
                   batch_iterator, default_vocabulary, extract_labels,
                   load_dataset, resample_dataset, save_dataset, split_dataset)
from .experiment import (DataSpec, ExperimentSpec, ModelDef,
                         run_comparison_experiment)
from .metrics import (ConfusionCounts, MetricsTable, confusion_counts,
                      evaluate_model, f1_from_counts)
from .model import (Model, ModelConfig, build_model, forward, l2_penalty,
                    predict_labels)
from .optim import AdamState, adam_step
from .synth import (BeatTemplate, NoiseConfig, RhythmSpec, beat_waveform,
                    estimate_heart_rate, generate_dataset, rr_sequence,
                    synthesize_record)
from .train import (TrainConfig, TrainHistory, load_checkpoint, run_training,
                    save_checkpoint)

__all__ = [
    "Tape", "Tensor", "backward", "tape_scope",
    "Dataset", "EcgRecord", "LabelVocabulary", "ResampleConfig",
    "batch_iterator", "default_vocabulary", "extract_labels", "load_dataset",
    "resample_dataset", "save_dataset", "split_dataset",
    "DataSpec", "ExperimentSpec", "ModelDef", "run_comparison_experiment",
    "ConfusionCounts", "MetricsTable", "confusion_counts", "evaluate_model",
    "f1_from_counts",
    "Model", "ModelConfig", "build_model", "forward", "l2_penalty",
    "predict_labels",
    "AdamState", "adam_step",
    "BeatTemplate", "NoiseConfig", "RhythmSpec", "beat_waveform",
    "estimate_heart_rate", "generate_dataset", "rr_sequence",
    "synthesize_record",
    "TrainConfig", "TrainHistory", "load_checkpoint", "run_training",
    "save_checkpoint",
    "__version__",
]
