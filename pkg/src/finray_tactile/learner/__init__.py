from .gradcheck import grad_check, grad_check_reduced
from .model import (
    ModelConfig,
    RegressionModel,
    build_model,
    reduced_config,
)
from .serialize import (
    ModelFormatError,
    ModelTruncatedError,
    ModelVersionError,
    NotAModelError,
    load_model,
    save_model,
)
from .train import (
    Adam,
    EvalResult,
    SGD,
    TrainConfig,
    TrainingDivergedError,
    evaluate,
    train,
    write_loss_csv,
)

__all__ = [
    "Adam",
    "EvalResult",
    "ModelConfig",
    "ModelFormatError",
    "ModelTruncatedError",
    "ModelVersionError",
    "NotAModelError",
    "RegressionModel",
    "SGD",
    "TrainConfig",
    "TrainingDivergedError",
    "build_model",
    "evaluate",
    "grad_check",
    "grad_check_reduced",
    "load_model",
    "reduced_config",
    "save_model",
    "train",
    "write_loss_csv",
]
