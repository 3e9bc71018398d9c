"""Information-bottleneck detector with disentangled local blocks, plus an
exact discrete information oracle used to check the underlying bound."""

from .oracle import DiscreteJoint, verify_theorem
from .model import ModelConfig, full_forward, init_model, predict_proba
from .synth import DEFAULT_SHIFT, DEFAULT_SPEC, FactorSpec, Shift, generate_dataset
from .train import DataConfig, RunConfig, TrainConfig, run_experiment, train

__version__ = "0.1.0"

__all__ = [
    "DiscreteJoint", "verify_theorem", "ModelConfig", "full_forward", "init_model", "predict_proba",
    "DEFAULT_SHIFT", "DEFAULT_SPEC", "FactorSpec", "Shift", "generate_dataset",
    "DataConfig", "RunConfig", "TrainConfig", "run_experiment", "train",
]
