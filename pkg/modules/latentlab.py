"""
Latent-space analysis: decoded grids, class traversals, scatter and angle
exports, clustering metrics and PNG mosaics

All exports use posterior means; nothing here samples.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from PIL import Image
from scipy.signal import find_peaks
from sklearn.cluster import KMeans

from config.schemas import EvalReport, LatentGridSpec
from config.settings import Config
from core.exceptions import DataError, DimensionError, UsageError
from core.params import ParamStore
from core.tensor import no_grad
from modules import models as M
from modules.stochastic import latent_slices
from modules.synthdata import ImageBatch
from modules.trainer import Checkpoint
from utils.helpers import circular_correlation, wrap_angle

logger = logging.getLogger(__name__)

CHUNK = 256


# --- decoding ---------------------------------------------------------------------------

def _decode_rows(ckpt: Checkpoint, params: ParamStore, latents: np.ndarray,
                 condition: Optional[np.ndarray]) -> np.ndarray:
    """Decode layout rows in parallel chunks; returns N×H×W"""
    cfg = ckpt.model
    chunks = [slice(start, start + CHUNK) for start in range(0, len(latents), CHUNK)]

    def work(part: slice) -> np.ndarray:
        with no_grad():
            cond = None if condition is None else condition[part]
            return M.decode_latents(cfg, params, latents[part], cond).data

    with ThreadPoolExecutor(max_workers=Config.worker_count()) as pool:
        decoded = list(pool.map(work, chunks))
    return np.concatenate(decoded).reshape(len(latents), cfg.image_size, cfg.image_size)


def _class_condition(ckpt: Checkpoint, count: int, class_id: Optional[int]) -> Optional[np.ndarray]:
    cfg = ckpt.model
    if not M.conditions_decoder(cfg):
        if class_id is not None:
            raise UsageError(f"{cfg.variant} decoder is not class conditional")
        return None
    if class_id is None:
        raise UsageError(f"{cfg.variant} decoder needs a class condition")
    if not 0 <= class_id < cfg.num_classes:
        raise UsageError(f"class {class_id} outside [0, {cfg.num_classes})")
    return M.one_hot(np.full(count, class_id), cfg.num_classes)


def _layout_rows(ckpt: Checkpoint, z: np.ndarray) -> np.ndarray:
    """Embed N×k z values into layout rows with angle and translations at 0"""
    prior = ckpt.model.prior
    rows = np.zeros((z.shape[0], prior.width))
    rows[:, latent_slices(prior)['z']] = z
    return rows


def decoded_latent_grid(ckpt: Checkpoint, spec: LatentGridSpec) -> np.ndarray:
    """steps×steps decoded tiles, shape (steps, steps, H, W)

    Tile [r, c] decodes dims[0] = xs[c] and dims[1] = ys[r]; every other z is
    held at its frozen value (default 0) and angle/translations at 0.
    """
    k = ckpt.model.k
    for dim in (*spec.dims, *spec.frozen):
        if not 0 <= dim < k:
            raise DimensionError(f"latent index {dim} out of range for k={k}")
    xs = np.linspace(*spec.range_x, spec.steps)
    ys = np.linspace(*spec.range_y, spec.steps)
    z = np.zeros((spec.steps * spec.steps, k))
    for dim, value in spec.frozen.items():
        z[:, dim] = value
    yy, xx = np.meshgrid(ys, xs, indexing='ij')
    z[:, spec.dims[0]] = xx.reshape(-1)
    z[:, spec.dims[1]] = yy.reshape(-1)
    condition = _class_condition(ckpt, len(z), spec.class_condition)
    tiles = _decode_rows(ckpt, ckpt.params(), _layout_rows(ckpt, z), condition)
    return tiles.reshape(spec.steps, spec.steps, *tiles.shape[1:])


def traverse_manifold(ckpt: Checkpoint, varied_dim: int, class_count: Optional[int] = None,
                      value_range: Tuple[float, float] = (-1.5, 1.5), steps: int = 5) -> np.ndarray:
    """Tiles (classes, steps, H, W): one row per class, one column per value of z[varied_dim]"""
    cfg = ckpt.model
    if not M.conditions_decoder(cfg):
        raise UsageError(f"{cfg.variant} has no class-conditional decoder to traverse")
    class_count = cfg.num_classes if class_count is None else class_count
    if not 1 <= class_count <= cfg.num_classes:
        raise UsageError(f"class_count must lie in [1, {cfg.num_classes}]")
    if not 0 <= varied_dim < cfg.k:
        raise DimensionError(f"latent index {varied_dim} out of range for k={cfg.k}")
    if steps < 2 or not value_range[0] < value_range[1]:
        raise UsageError("traversal needs steps >= 2 and lo < hi")
    values = np.linspace(value_range[0], value_range[1], steps)
    z = np.zeros((class_count * steps, cfg.k))
    z[:, varied_dim] = np.tile(values, class_count)
    condition = M.one_hot(np.repeat(np.arange(class_count), steps), cfg.num_classes)
    tiles = _decode_rows(ckpt, ckpt.params(), _layout_rows(ckpt, z), condition)
    return tiles.reshape(class_count, steps, *tiles.shape[1:])


# --- encoding exports ---------------------------------------------------------------------

def encode_means(ckpt: Checkpoint, batch: ImageBatch, params: Optional[ParamStore] = None
                 ) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Posterior means (N×D layout rows) and class probabilities when the model has a classifier

    Conditional encoders use the batch labels, or the classifier's
    predictions when the batch is unlabeled (ssrVAE).
    """
    cfg = ckpt.model
    params = params or ckpt.params()
    means, probs = [], []
    with no_grad():
        for start in range(0, len(batch), CHUNK):
            part = batch.subset(np.arange(start, min(start + CHUNK, len(batch))))
            p = M.classify(cfg, params, part).data if cfg.variant in ('ssrVAE', 'jrVAE') else None
            condition = None
            if M.conditions_encoder(cfg):
                if part.labels is not None:
                    condition = M.one_hot(part.labels, cfg.num_classes)
                elif p is not None:
                    condition = p
                else:
                    raise UsageError(f"{cfg.variant} needs labels to encode")
            means.append(M.encode(cfg, params, part, condition).mean.data.astype(np.float64))
            if p is not None:
                probs.append(p.astype(np.float64))
    width = cfg.latent_width
    mean = np.concatenate(means) if means else np.zeros((0, width))
    return mean, (np.concatenate(probs) if probs else None)


def latent_scatter_export(ckpt: Checkpoint, batch: ImageBatch) -> pd.DataFrame:
    """One row per image: idx, z1..zk, theta, dx, dy, pred, label, gt_angle, gt_shear"""
    cfg = ckpt.model
    means, probs = encode_means(ckpt, batch)
    slices = latent_slices(cfg.prior)
    n = len(batch)
    frame = pd.DataFrame({'idx': np.arange(n)})
    for j in range(cfg.k):
        frame[f'z{j + 1}'] = means[:, slices['z'].start + j]
    frame['theta'] = means[:, slices['theta'].start] if 'theta' in slices else np.nan
    frame['dx'] = means[:, slices['trans'].start] if 'trans' in slices else np.nan
    frame['dy'] = means[:, slices['trans'].start + 1] if 'trans' in slices else np.nan
    frame['pred'] = pd.array(probs.argmax(axis=1) if probs is not None else [pd.NA] * n, dtype='Int64')
    frame['label'] = pd.array(batch.labels if batch.labels is not None else [pd.NA] * n, dtype='Int64')
    frame['gt_angle'] = batch.meta[:, 0] if batch.meta is not None else np.nan
    frame['gt_shear'] = batch.meta[:, 1] if batch.meta is not None else np.nan
    return frame


def write_table(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, na_rep='', float_format='%.9g')
    except OSError as e:
        raise DataError(f"Cannot write {path}: {e}")


def angle_recovery(frame: pd.DataFrame) -> Dict[int, float]:
    """Per-label |circular correlation| between encoded theta and the ground-truth angle (degrees)

    The sign is dropped: a model may encode the rotation with either handedness.
    """
    if frame['theta'].isna().all() or frame['gt_angle'].isna().all():
        raise UsageError("angle recovery needs encoded theta and ground-truth angles")
    scores = {}
    for label, rows in frame.dropna(subset=['label']).groupby('label'):
        if len(rows) < 2:
            continue
        truth = np.radians(rows['gt_angle'].to_numpy())
        scores[int(label)] = abs(circular_correlation(rows['theta'].to_numpy(), truth))
    return scores


def angle_histogram(ckpt: Checkpoint, batch: ImageBatch, bins: int = 60) -> pd.DataFrame:
    """Counts of encoded theta wrapped to [-pi, pi), `bins` uniform bins"""
    if not ckpt.model.prior.has_rotation:
        raise UsageError(f"{ckpt.model.variant} with invariance '{ckpt.model.prior.invariance}' encodes no angle")
    means, _ = encode_means(ckpt, batch)
    return theta_histogram(means[:, latent_slices(ckpt.model.prior)['theta'].start], bins)


def theta_histogram(theta: np.ndarray, bins: int = 60) -> pd.DataFrame:
    if bins < 1:
        raise UsageError("bins must be positive")
    width = 2 * np.pi / bins
    index = np.floor((wrap_angle(theta) + np.pi) / width).astype(np.int64)
    counts = np.bincount(np.clip(index, 0, bins - 1), minlength=bins)
    edges = -np.pi + width * np.arange(bins + 1)
    return pd.DataFrame({'bin_lo': edges[:-1], 'bin_hi': edges[1:], 'count': counts})


def histogram_modes(counts: Sequence[int], prominence_factor: float = 3.0) -> np.ndarray:
    """Bin indices of circular peaks whose prominence exceeds prominence_factor × median count"""
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.size
    threshold = max(prominence_factor * float(np.median(counts)), 1e-12)
    tiled = np.concatenate([counts, counts, counts])
    peaks, _ = find_peaks(tiled, prominence=threshold)
    return np.unique(peaks[(peaks >= n) & (peaks < 2 * n)] - n)


# --- metrics --------------------------------------------------------------------------------

def cluster_accuracy(predicted: Sequence[int], truth: Sequence[int]) -> Tuple[float, Dict[int, int]]:
    """Accuracy after mapping every predicted cluster to its majority true label"""
    predicted = np.asarray(predicted, dtype=np.int64).reshape(-1)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    if predicted.size != truth.size:
        raise UsageError(f"{predicted.size} predictions for {truth.size} labels")
    if predicted.size == 0:
        raise UsageError("cluster_accuracy needs at least one sample")
    table = pd.crosstab(predicted, truth)
    mapping = {int(cluster): int(row.idxmax()) for cluster, row in table.iterrows()}
    mapped = np.array([mapping[p] for p in predicted])
    return float(np.mean(mapped == truth)), mapping


def confusion(predicted: Sequence[int], truth: Sequence[int], num_classes: int,
              mapping: Optional[Dict[int, int]] = None) -> EvalReport:
    """Row-normalized confusion matrix (rows = truth); zero-support rows stay all zero"""
    predicted = np.asarray(predicted, dtype=np.int64).reshape(-1)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    if predicted.size != truth.size:
        raise UsageError(f"{predicted.size} predictions for {truth.size} labels")
    for name, values in (('predicted', predicted), ('truth', truth)):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise UsageError(f"{name} labels must lie in [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes))
    np.add.at(counts, (truth, predicted), 1)
    support = counts.sum(axis=1)
    matrix = np.divide(counts, support[:, None], out=np.zeros_like(counts), where=support[:, None] > 0)
    per_class = [float(matrix[c, c]) if support[c] else None for c in range(num_classes)]
    accuracy = float(np.trace(counts) / support.sum()) if support.sum() else 0.0
    return EvalReport(confusion=matrix.tolist(), accuracy=accuracy, per_class_accuracy=per_class,
                      support=support.astype(int).tolist(), mapping=mapping or {})


def kmeans_purity(features: np.ndarray, truth: Sequence[int], n_clusters: int = 4, seed: int = 0
                  ) -> Tuple[float, Dict[int, int], np.ndarray]:
    """k-means on the features, scored by majority-mapped accuracy; returns (purity, mapping, clusters)"""
    features = np.asarray(features, dtype=np.float64)
    clusters = KMeans(n_clusters=n_clusters, n_init=10, random_state=seed).fit_predict(features)
    purity, mapping = cluster_accuracy(clusters, truth)
    return purity, mapping, clusters


def nearest_template(images: np.ndarray, templates: np.ndarray) -> np.ndarray:
    """Index of the template with the smallest MSE for every image"""
    images = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    templates = np.asarray(templates, dtype=np.float64).reshape(len(templates), -1)
    if images.shape[1] != templates.shape[1]:
        raise DimensionError("images and templates differ in size")
    distances = ((images[:, None, :] - templates[None, :, :]) ** 2).mean(axis=2)
    return distances.argmin(axis=1)


def psnr(reference: np.ndarray, estimate: np.ndarray, peak: float = 1.0) -> float:
    """Mean per-image peak signal-to-noise ratio in dB"""
    reference = np.asarray(reference, dtype=np.float64).reshape(len(reference), -1)
    estimate = np.asarray(estimate, dtype=np.float64).reshape(len(estimate), -1)
    if reference.shape != estimate.shape:
        raise DimensionError("reference and estimate differ in shape")
    mse = np.maximum(((reference - estimate) ** 2).mean(axis=1), 1e-12)
    return float(np.mean(10.0 * np.log10(peak * peak / mse)))


def evaluate(ckpt: Checkpoint, batch: ImageBatch, seed: int = 0) -> EvalReport:
    """Classification report on a labeled batch

    ssrVAE is scored directly on its classifier, jrVAE by majority-mapping
    argmax q(y|x), every other variant by k-means on the posterior z means.
    """
    if batch.labels is None:
        raise UsageError("evaluation needs a labeled batch")
    cfg = ckpt.model
    num_classes = max(batch.num_classes, cfg.num_classes)
    unlabeled = ImageBatch(images=batch.images, meta=batch.meta)
    means, probs = encode_means(ckpt, unlabeled if cfg.variant == 'ssrVAE' else batch)
    if cfg.variant == 'ssrVAE':
        return confusion(probs.argmax(axis=1), batch.labels, num_classes,
                         {c: c for c in range(cfg.num_classes)})
    if cfg.variant == 'jrVAE':
        clusters = probs.argmax(axis=1)
    else:
        z = means[:, latent_slices(cfg.prior)['z']]
        clusters = KMeans(n_clusters=batch.num_classes, n_init=10, random_state=seed).fit_predict(z)
    _, mapping = cluster_accuracy(clusters, batch.labels)
    mapped = np.array([mapping[c] for c in clusters])
    return confusion(mapped, batch.labels, num_classes, mapping)


# --- images -----------------------------------------------------------------------------------

def compose_mosaic(tiles: np.ndarray) -> np.ndarray:
    """8-bit mosaic of (rows, cols, H, W) tiles with 1-pixel white separators"""
    tiles = np.asarray(tiles, dtype=np.float64)
    if tiles.ndim != 4:
        raise DimensionError(f"tiles must be rows×cols×H×W, got {tiles.shape}")
    rows, cols, h, w = tiles.shape
    mosaic = np.full((rows * (h + 1) - 1, cols * (w + 1) - 1), 255, dtype=np.uint8)
    pixels = np.rint(np.clip(tiles, 0.0, 1.0) * 255).astype(np.uint8)
    for r in range(rows):
        for c in range(cols):
            mosaic[r * (h + 1):r * (h + 1) + h, c * (w + 1):c * (w + 1) + w] = pixels[r, c]
    return mosaic


def write_png(image: np.ndarray, path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.asarray(image, dtype=np.uint8), mode='L').save(path, format='PNG')
    except OSError as e:
        raise DataError(f"Cannot write {path}: {e}")
