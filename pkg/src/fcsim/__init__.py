"""Heralded photon source in a fiber cavity: model, simulator, estimators."""

__version__ = "0.1.0"

from .config import (
    DetectorParams,
    ExperimentConfig,
    FiberCavityParams,
    NoiseParams,
    PulseParams,
    SourceParams,
    ValidatedConfig,
    WavelengthScheme,
    config_hash,
    derived_survival,
    load_config,
    save_config,
    validate_config,
)
from .errors import FcsimError

__all__ = [
    "DetectorParams",
    "ExperimentConfig",
    "FcsimError",
    "FiberCavityParams",
    "NoiseParams",
    "PulseParams",
    "SourceParams",
    "ValidatedConfig",
    "WavelengthScheme",
    "config_hash",
    "derived_survival",
    "load_config",
    "save_config",
    "validate_config",
    "default_config_path",
]


def default_config_path(name: str = "primary_cavity"):
    """Path to a packaged config ('primary_cavity' or 'alternate_cavity')."""
    from importlib.resources import files

    return files("fcsim").joinpath("data", f"{name}.json")
