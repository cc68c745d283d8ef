"""Capacity bounds, Blahut-Arimoto and autoencoder transceivers for a fading 2-mode IM/DD link."""

from .channel import ComponentSpec, ConfigError, LinkConfig, MEASURED_COMPONENTS

__all__ = ["ComponentSpec", "ConfigError", "LinkConfig", "MEASURED_COMPONENTS"]
__version__ = "0.1.0"
