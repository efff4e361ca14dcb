"""Panoptic symbol spotting on vector drawings via point-set transformers."""

__version__ = "0.1.0"
