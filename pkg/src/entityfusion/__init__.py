"""Multimodal ICU outcome prediction from hourly time series and note entities."""

from .models import Model, ModelConfig, ModelKind, build
from .training import MetricsReport, TrainSpec, run_protocol, train

__all__ = ["Model", "ModelConfig", "ModelKind", "build", "MetricsReport", "TrainSpec", "run_protocol", "train"]
__version__ = "0.1.0"
