"""Registration networks."""

from typing import Any

from lessnet.core.errors import ConfigError
from lessnet.domain.config import BaselineConfig, ModelConfig
from lessnet.domain.models.base import LayerSpec, Parameter, ParameterSet, RegistrationModel
from lessnet.domain.models.baseline import EncoderDecoder, baseline_forward
from lessnet.domain.models.lessnet import LessNet


def build_model(kind: str, config: dict[str, Any]) -> RegistrationModel:
    """Instantiate a model from a checkpoint header.

    Raises:
        ConfigError: If the kind is unknown
    """
    if kind == LessNet.kind:
        return LessNet(ModelConfig.model_validate(config))
    if kind == EncoderDecoder.kind:
        return EncoderDecoder(BaselineConfig.model_validate(config))
    raise ConfigError(f"unknown model kind {kind!r}, expected 'lessnet' or 'baseline'")


__all__ = [
    "EncoderDecoder",
    "LayerSpec",
    "LessNet",
    "Parameter",
    "ParameterSet",
    "RegistrationModel",
    "baseline_forward",
    "build_model",
]
