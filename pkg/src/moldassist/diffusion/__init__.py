from .schedule import NoiseSchedule, make_schedule, forward_sample
from .types import (
    EnvCondition,
    ProcessParams,
    Normalizer,
    PARAM_NAMES,
    ENV_NAMES,
)
from .net import DenoiserNet
from .train import TrainConfig, DiffusionModel, train
from .sample import guided_epsilon, sample, generate_candidates
from .checkpoint import save_checkpoint, load_checkpoint
from .synth import make_synthetic_dataset, SYNTH_TRUTH

__all__ = [
    "NoiseSchedule", "make_schedule", "forward_sample",
    "EnvCondition", "ProcessParams", "Normalizer", "PARAM_NAMES", "ENV_NAMES",
    "DenoiserNet", "TrainConfig", "DiffusionModel", "train",
    "guided_epsilon", "sample", "generate_candidates",
    "save_checkpoint", "load_checkpoint",
    "make_synthetic_dataset", "SYNTH_TRUTH",
]
