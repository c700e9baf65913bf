"""Configuration package for LatentForge"""
from .settings import Config

__all__ = ['Config']
