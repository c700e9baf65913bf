"""
Finite-difference gradient oracle

Used by the test-suite to cross-check `backward`. Run inside
`default_dtype(np.float64)`: float32 cannot resolve central differences to
the 1e-4 relative tolerance the checks use.
"""
import logging
from typing import Callable, Dict, Union

import numpy as np

from core.exceptions import UsageError
from core.params import ParamStore
from core.tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)

Objective = Callable[[ParamStore], Union[Tensor, float]]


def _evaluate(f: Objective, params: ParamStore) -> float:
    with no_grad():
        value = f(params)
    return value.item() if isinstance(value, Tensor) else float(value)


def finite_difference_gradient(f: Objective, params: ParamStore, eps: float = 1e-3) -> Dict[str, np.ndarray]:
    """Central-difference estimate (f(p+eps) - f(p-eps)) / (2 eps) for every scalar parameter"""
    if eps <= 0:
        raise UsageError("eps must be positive")
    estimates = {}
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        grad = np.zeros(flat.size, dtype=np.float64)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            upper = _evaluate(f, params)
            flat[i] = original - eps
            lower = _evaluate(f, params)
            flat[i] = original
            grad[i] = (upper - lower) / (2.0 * eps)
        estimates[name] = grad.reshape(tensor.shape)
    return estimates


def analytic_gradient(f: Objective, params: ParamStore) -> Dict[str, np.ndarray]:
    """Gradient of f via one backward pass"""
    params.zero_grad()
    loss = f(params)
    backward(loss)
    return {name: np.array(g, dtype=np.float64) for name, g in zip(params, params.grads())}


def compare_gradients(f: Objective, params: ParamStore, eps: float = 1e-3,
                      rtol: float = 1e-4, atol: float = 1e-6) -> Dict[str, float]:
    """Worst elementwise mismatch per parameter, scaled so that <= 1 means agreement

    An element agrees when |analytic - numeric| <= atol + rtol * max(|analytic|, |numeric|).
    """
    analytic = analytic_gradient(f, params)
    numeric = finite_difference_gradient(f, params, eps)
    report = {}
    for name in params:
        a, n = analytic[name], numeric[name]
        tolerance = atol + rtol * np.maximum(np.abs(a), np.abs(n))
        report[name] = float(np.max(np.abs(a - n) / tolerance)) if a.size else 0.0
    worst = max(report.values()) if report else 0.0
    logger.debug(f"Gradient check over {params.count} parameters, worst ratio {worst:.3f}")
    return report
