"""Reliability models for memory systems: codecs, fault models, protection
schemes and a Monte-Carlo lifetime engine."""

__version__ = "0.1.0"

__all__ = ["__version__"]
