"""Minimal numpy CNN engine: cell templates, training and evaluation."""

from .network import (
    NumericError,
    SearchSpaceSpec,
    SpecError,
    Network,
    build_network,
    count_macs,
    count_parameters,
)
from .training import (
    SGD,
    DivergenceError,
    TrainConfig,
    TrainSummary,
    evaluate,
    predict,
    train,
    train_step,
)
