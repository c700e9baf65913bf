"""Utility functions and helpers for LatentForge"""
from .helpers import derive_seed, make_rng, wrap_angle
from .logging_config import setup_logging

__all__ = ['derive_seed', 'make_rng', 'wrap_angle', 'setup_logging']
