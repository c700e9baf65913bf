"""
Sampling and divergence terms shared by every ELBO variant

Latent layout: (theta, dx, dy, z...) with theta present under rotation
invariance and (dx, dy) under translation invariance. All KL functions
return one value per sample (summed over the dimensions they are given);
batch averaging is left to the objectives.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.special import i0e

from config.schemas import PriorConfig
from core.exceptions import DimensionError, DivergenceError, UsageError
from core import tensor as T
from core.tensor import Tensor
from utils.helpers import make_rng

logger = logging.getLogger(__name__)

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
LOG_2PI = float(np.log(2.0 * np.pi))


def latent_slices(prior: PriorConfig) -> Dict[str, slice]:
    """Column ranges of theta, translation and z in the latent layout"""
    slices = {}
    offset = 0
    if prior.has_rotation:
        slices['theta'] = slice(offset, offset + 1)
        offset += 1
    if prior.has_translation:
        slices['trans'] = slice(offset, offset + 2)
        offset += 2
    slices['z'] = slice(offset, offset + prior.k)
    return slices


@dataclass
class LatentStats:
    """Gaussian posterior parameters over the latent layout (B×D), plus class logits when discrete"""
    mean: Tensor
    log_var: Tensor
    class_logits: Optional[Tensor] = None

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape or self.mean.ndim != 2:
            raise DimensionError(f"mean {self.mean.shape} and log_var {self.log_var.shape} must be equal B×D shapes")

    @property
    def batch_size(self) -> int:
        return self.mean.shape[0]

    @property
    def width(self) -> int:
        return self.mean.shape[1]

    def columns(self, cols: slice) -> 'LatentStats':
        return LatentStats(self.mean[:, cols], self.log_var[:, cols])

    def select(self, part: str, prior: PriorConfig) -> 'LatentStats':
        """Restrict to 'theta', 'trans' or 'z' columns of the layout"""
        slices = latent_slices(prior)
        if part not in slices:
            raise UsageError(f"Latent layout for invariance '{prior.invariance}' has no '{part}' dimensions")
        return self.columns(slices[part])


def clamped_log_var(log_var: Tensor) -> Tensor:
    return T.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX)


def sample_normal_reparam(stats: LatentStats, noise_seed: Optional[int] = None,
                          noise: Optional[np.ndarray] = None) -> Tensor:
    """z = mean + exp(0.5 log_var) * eps with eps ~ N(0, I)

    `noise` fixes eps explicitly; otherwise it is drawn from `noise_seed`.
    """
    if noise is None:
        noise = make_rng(0 if noise_seed is None else noise_seed, 'reparam').standard_normal(stats.mean.shape)
    noise = np.asarray(noise)
    if noise.shape != stats.mean.shape:
        raise DimensionError(f"noise {noise.shape} does not match stats {stats.mean.shape}")
    std = T.exp(T.scale(clamped_log_var(stats.log_var), 0.5))
    return stats.mean + std * Tensor(noise)


def kl_normal_std(stats: LatentStats) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) per sample"""
    log_var = clamped_log_var(stats.log_var)
    terms = T.square(stats.mean) + T.exp(log_var) - 1.0 - log_var
    return T.scale(terms.sum(axis=1), 0.5)


def kl_translation(stats: LatentStats, sigma_s: float) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, sigma_s^2)) per sample, summed over dx and dy"""
    if sigma_s <= 0:
        raise UsageError("sigma_s must be positive")
    log_var = clamped_log_var(stats.log_var)
    prior_var = float(sigma_s) ** 2
    terms = (T.scale(T.square(stats.mean) + T.exp(log_var), 1.0 / (2.0 * prior_var))
             - T.scale(log_var, 0.5) + (float(np.log(sigma_s)) - 0.5))
    return terms.sum(axis=1)


def von_mises_log_normalizer(kappa: float) -> float:
    """log(2 pi I0(kappa)), with I0 from the exponentially scaled Bessel series"""
    return LOG_2PI + float(np.log(i0e(kappa))) + float(kappa)


def kl_angle(stats: LatentStats, kappa: float = 0.0) -> Tensor:
    """KL between the Gaussian angle posterior and the circular prior, per sample

    kappa == 0 is the uniform density 1/(2 pi); kappa > 0 a von Mises M(0, kappa),
    using E_q[cos theta] = cos(mu) exp(-sigma^2 / 2). The value is floored at 0:
    once the posterior entropy exceeds the prior's it is as spread as the prior.
    """
    if kappa < 0:
        raise UsageError("kappa must be non-negative")
    log_var = clamped_log_var(stats.log_var)
    neg_entropy = T.scale(log_var, -0.5) - 0.5 * (LOG_2PI + 1.0)
    if kappa == 0:
        kl = neg_entropy + LOG_2PI
    else:
        expected_cos = T.cos(stats.mean) * T.exp(T.scale(T.exp(log_var), -0.5))
        kl = neg_entropy - T.scale(expected_cos, float(kappa)) + von_mises_log_normalizer(kappa)
    return T.relu(kl).sum(axis=1)


def kl_categorical(class_probs: Tensor, lam: Sequence[float]) -> Tensor:
    """sum_c q_c log(q_c / lambda_c) per sample, with 0 log 0 = 0"""
    lam = np.asarray(lam, dtype=np.float64)
    if class_probs.ndim != 2 or class_probs.shape[1] != lam.size:
        raise DimensionError(f"class_probs {class_probs.shape} does not match {lam.size} prior classes")
    row_sums = class_probs.data.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-5):
        raise UsageError("class_probs rows must sum to 1")
    impossible = (lam == 0) & np.any(class_probs.data > 0, axis=0)
    if np.any(impossible):
        raise DivergenceError(f"prior assigns zero mass to classes {np.flatnonzero(impossible).tolist()} the posterior uses")
    log_lam = np.where(lam > 0, np.log(np.where(lam > 0, lam, 1.0)), 0.0)
    log_q = T.log(T.clip(class_probs, 1e-12, 1.0))
    return (class_probs * (log_q - Tensor(log_lam))).sum(axis=1)


def sample_gumbel_softmax(class_logits: Tensor, temperature: float, noise_seed: Optional[int] = None) -> Tensor:
    """Relaxed one-hot sample softmax((logits + g) / temperature), g ~ Gumbel(0, 1)"""
    if temperature <= 0:
        raise UsageError("temperature must be positive")
    rng = make_rng(0 if noise_seed is None else noise_seed, 'gumbel')
    uniform = rng.uniform(np.finfo(np.float32).tiny, 1.0, size=class_logits.shape)
    gumbel = -np.log(-np.log(uniform))
    return T.softmax_rows(T.scale(class_logits + Tensor(gumbel), 1.0 / temperature))
