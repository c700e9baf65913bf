"""Core infrastructure for LatentForge: autodiff tensors, parameters and errors"""
from .exceptions import LatentForgeError
from .tensor import ComputeGraph, Tensor, backward
from .params import ParamStore

__all__ = ['LatentForgeError', 'ComputeGraph', 'Tensor', 'backward', 'ParamStore']
