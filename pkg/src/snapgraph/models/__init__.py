from .architectures import (
    ARCHITECTURES,
    DEFAULT_HIDDEN,
    DEFAULT_LR,
    GCRN,
    VGRNN,
    DySAT,
    ROLAND,
    ModelConfig,
    SeqInputs,
    TemporalModel,
    build,
    gaussian_kl,
    prepare_sequence,
)
from .negatives import NegativeSample, historical_negatives, sample_negatives
from .training import (
    EpochRecord,
    ModelPredictor,
    RedgeBankPredictor,
    TrainedModel,
    TrainingError,
    elbo_loss,
    evaluate,
    mse_loss,
    positive_errors,
    train,
)

__all__ = [
    "ARCHITECTURES",
    "DEFAULT_HIDDEN",
    "DEFAULT_LR",
    "GCRN",
    "VGRNN",
    "DySAT",
    "ROLAND",
    "ModelConfig",
    "SeqInputs",
    "TemporalModel",
    "build",
    "gaussian_kl",
    "prepare_sequence",
    "NegativeSample",
    "historical_negatives",
    "sample_negatives",
    "EpochRecord",
    "ModelPredictor",
    "RedgeBankPredictor",
    "TrainedModel",
    "TrainingError",
    "elbo_loss",
    "evaluate",
    "mse_loss",
    "positive_errors",
    "train",
]
