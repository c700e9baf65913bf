"""
Synthetic datasets: suit glyphs, the four cards datasets, rotated digit
batches and corrupted copies for denoising / inpainting runs

Glyphs are procedural (circles, triangles and a rhombus), anti-aliased by
4x4 supersampling, drawn with y pointing up in a [-1, 1]^2 frame.
Transforms shear first, then rotate, about the image center with bilinear
resampling; anything sampled from outside the frame reads as 0.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import affine_transform

from config.schemas import CardsConfig
from config.settings import Config
from core.exceptions import DimensionError, UsageError, ValidationError
from utils.helpers import make_rng

logger = logging.getLogger(__name__)

CLUBS, SPADES, HEARTS, DIAMONDS = 0, 1, 2, 3
SUIT_NAMES = ('clubs', 'spades', 'hearts', 'diamonds')
SUPERSAMPLE = 4

# lobe centers of the club: 120 degrees apart around (0, 0.05)
CLUB_CENTER = (0.0, 0.05)
CLUB_LOBE_RADIUS = 0.24
CLUB_LOBE_OFFSET = 0.27
CLUB_LOBES = tuple(
    (CLUB_CENTER[0] + CLUB_LOBE_OFFSET * np.cos(np.deg2rad(phi)),
     CLUB_CENTER[1] + CLUB_LOBE_OFFSET * np.sin(np.deg2rad(phi)))
    for phi in (90.0, 210.0, 330.0)
)
DIAMOND_HALF_WIDTH = 0.42
DIAMOND_HALF_HEIGHT = 0.62


@dataclass
class ImageBatch:
    """N square grayscale images in [0, 1] with optional labels and ground truth

    meta holds (angle_deg, shear_deg) per image; centers the (row, col) a patch
    was cut around; extras any further per-image arrays (e.g. ring sizes).
    """
    images: np.ndarray
    labels: Optional[np.ndarray] = None
    meta: Optional[np.ndarray] = None
    centers: Optional[np.ndarray] = None
    extras: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        if self.images.ndim != 3 or self.images.shape[1] != self.images.shape[2]:
            raise DimensionError(f"ImageBatch needs N×H×W square images, got {self.images.shape}")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValidationError("pixel values must lie in [0, 1]")
        n = self.images.shape[0]
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if self.labels.size != n:
                raise DimensionError(f"{self.labels.size} labels for {n} images")
            if self.labels.size and self.labels.min() < 0:
                raise ValidationError("labels must be non-negative")
        if self.meta is not None:
            self.meta = np.asarray(self.meta, dtype=np.float32).reshape(-1, 2)
            if self.meta.shape[0] != n:
                raise DimensionError(f"{self.meta.shape[0]} meta rows for {n} images")
        if self.centers is not None:
            self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_size(self) -> int:
        return self.images.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels is not None and self.labels.size else 0

    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)

    def subset(self, indices: Sequence[int]) -> 'ImageBatch':
        indices = np.asarray(indices, dtype=np.int64)
        return ImageBatch(
            images=self.images[indices],
            labels=None if self.labels is None else self.labels[indices],
            meta=None if self.meta is None else self.meta[indices],
            centers=None if self.centers is None else self.centers[indices],
            extras={key: value[indices] for key, value in self.extras.items()},
        )

    @staticmethod
    def concat(batches: Sequence['ImageBatch']) -> 'ImageBatch':
        if not batches:
            raise UsageError("nothing to concatenate")

        def joined(attr):
            parts = [getattr(b, attr) for b in batches]
            if any(p is None for p in parts):
                return None
            return np.concatenate(parts)
        return ImageBatch(images=np.concatenate([b.images for b in batches]),
                          labels=joined('labels'), meta=joined('meta'), centers=joined('centers'))


# --- glyph rasterization ---------------------------------------------------------

def suit_primitives(suit: int) -> List[tuple]:
    """Primitive composition of a suit: ('circle', cx, cy, r), ('triangle', p, q, s), ('rhombus', hx, hy)"""
    if suit == HEARTS:
        return [('circle', -0.25, 0.2, 0.3), ('circle', 0.25, 0.2, 0.3),
                ('triangle', (-0.52, 0.08), (0.52, 0.08), (0.0, -0.62))]
    if suit == SPADES:
        return [('circle', -0.25, -0.12, 0.28), ('circle', 0.25, -0.12, 0.28),
                ('triangle', (-0.51, -0.02), (0.51, -0.02), (0.0, 0.62)),
                ('triangle', (0.0, -0.1), (-0.18, -0.65), (0.18, -0.65))]
    if suit == CLUBS:
        lobes = [('circle', cx, cy, CLUB_LOBE_RADIUS) for cx, cy in CLUB_LOBES]
        return lobes + [('circle', CLUB_CENTER[0], CLUB_CENTER[1], 0.12),
                        ('triangle', (0.0, 0.0), (-0.18, -0.65), (0.18, -0.65))]
    if suit == DIAMONDS:
        return [('rhombus', DIAMOND_HALF_WIDTH, DIAMOND_HALF_HEIGHT)]
    raise ValidationError(f"Unknown suit {suit}; expected 0 (clubs) .. 3 (diamonds)")


def _inside_triangle(x: np.ndarray, y: np.ndarray, p, q, s) -> np.ndarray:
    def edge(a, b):
        return (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0])
    d1, d2, d3 = edge(p, q), edge(q, s), edge(s, p)
    negative = (d1 < 0) | (d2 < 0) | (d3 < 0)
    positive = (d1 > 0) | (d2 > 0) | (d3 > 0)
    return ~(negative & positive)


def _mask(primitives: List[tuple], x: np.ndarray, y: np.ndarray) -> np.ndarray:
    inside = np.zeros(x.shape, dtype=bool)
    for primitive in primitives:
        kind = primitive[0]
        if kind == 'circle':
            _, cx, cy, r = primitive
            inside |= (x - cx) ** 2 + (y - cy) ** 2 <= r * r
        elif kind == 'triangle':
            inside |= _inside_triangle(x, y, *primitive[1:])
        elif kind == 'rhombus':
            _, hx, hy = primitive
            inside |= np.abs(x) / hx + np.abs(y) / hy <= 1.0
    return inside


def rasterize_suit(suit: int, image_size: int = 32, axis_scale: Tuple[float, float] = (1.0, 1.0)) -> np.ndarray:
    """Anti-aliased monochrome glyph centered in an image_size² frame

    axis_scale stretches the glyph along x and y (used to express the
    90-degree diamond degeneracy as a uniaxial rescale).
    """
    if image_size < 24:
        raise ValidationError("image_size must be at least 24")
    n = image_size * SUPERSAMPLE
    ticks = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    x = ticks[None, :] / axis_scale[0]
    y = -ticks[:, None] / axis_scale[1]
    x, y = np.broadcast_arrays(x, y)
    mask = _mask(suit_primitives(suit), x, y).astype(np.float64)
    image = mask.reshape(image_size, SUPERSAMPLE, image_size, SUPERSAMPLE).mean(axis=(1, 3))
    return image.astype(np.float32)


def suit_templates(image_size: int = 32) -> np.ndarray:
    """The four untransformed glyphs, indexed by suit id"""
    return np.stack([rasterize_suit(suit, image_size) for suit in range(4)])


# --- affine resampling ------------------------------------------------------------

def _forward_matrix(angle_deg: float, shear_deg: float) -> np.ndarray:
    """Shear (equal in x and y) followed by counter-clockwise rotation, in y-up coordinates"""
    t = np.tan(np.deg2rad(shear_deg))
    a = np.deg2rad(angle_deg)
    shear = np.array([[1.0, t], [t, 1.0]])
    rotation = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    return rotation @ shear


def affine_image(image: np.ndarray, angle_deg: float = 0.0, shear_deg: float = 0.0) -> np.ndarray:
    """Apply shear then rotation about the image center with bilinear, zero-padded resampling"""
    size = image.shape[0]
    forward = _forward_matrix(angle_deg, shear_deg)
    # (row, col) = (-y, x) relative to the center
    to_xy = np.array([[0.0, 1.0], [-1.0, 0.0]])
    forward_rc = np.linalg.inv(to_xy) @ forward @ to_xy
    inverse_rc = np.linalg.inv(forward_rc)
    center = np.array([(size - 1) / 2.0, (size - 1) / 2.0])
    offset = center - inverse_rc @ center
    out = affine_transform(image.astype(np.float64), inverse_rc, offset=offset, order=1,
                           mode='constant', cval=0.0, prefilter=False)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def rotate_images(images: np.ndarray, angles_deg: Sequence[float]) -> np.ndarray:
    return np.stack([affine_image(img, float(a)) for img, a in zip(images, angles_deg)]) \
        if len(images) else images.copy()


# --- datasets -------------------------------------------------------------------------

def _cards_for_suit(cfg: CardsConfig, suit: int, template: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rng = make_rng(cfg.seed, 'cards', suit)
    angles = rng.uniform(-cfg.alpha_deg, cfg.alpha_deg, size=cfg.count_per_suit).astype(np.float32)
    shears = rng.uniform(-cfg.s_deg, cfg.s_deg, size=cfg.count_per_suit).astype(np.float32)
    images = np.empty((cfg.count_per_suit, cfg.image_size, cfg.image_size), dtype=np.float32)
    for i in range(cfg.count_per_suit):
        images[i] = affine_image(template, float(angles[i]), float(shears[i]))
    return images, np.stack([angles, shears], axis=1)


def make_cards_dataset(cfg: CardsConfig) -> ImageBatch:
    """Sheared and rotated suit glyphs; suit-major order, one RNG stream per suit"""
    templates = {suit: rasterize_suit(suit, cfg.image_size) for suit in cfg.suits}
    with ThreadPoolExecutor(max_workers=Config.worker_count()) as pool:
        parts = list(pool.map(lambda s: _cards_for_suit(cfg, s, templates[s]), cfg.suits))
    images = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, cfg.image_size, cfg.image_size))
    meta = np.concatenate([p[1] for p in parts]) if parts else np.zeros((0, 2))
    labels = np.repeat(np.asarray(cfg.suits, dtype=np.int64), cfg.count_per_suit)
    logger.info(f"Generated {len(labels)} card images (alpha={cfg.alpha_deg}, shear={cfg.s_deg}, seed={cfg.seed})")
    return ImageBatch(images=images, labels=labels, meta=meta)


def rotate_batch(batch: ImageBatch, half_range_deg: float, seed: int) -> ImageBatch:
    """Rotate each image by an independent angle ~ U[-r, r]; the angle is added to meta"""
    rng = make_rng(seed, 'rotate')
    angles = rng.uniform(-half_range_deg, half_range_deg, size=len(batch)).astype(np.float32)
    images = rotate_images(batch.images, angles) if half_range_deg > 0 else batch.images.copy()
    meta = np.zeros((len(batch), 2), dtype=np.float32) if batch.meta is None else batch.meta.copy()
    meta[:, 0] += angles
    return ImageBatch(images=images, labels=batch.labels, meta=meta, centers=batch.centers)


def corrupt(batch: ImageBatch, mode: str, level: float, seed: int) -> ImageBatch:
    """Gaussian noise of std `level` (clipped to [0, 1]) or zeroing a `level` fraction of pixels"""
    rng = make_rng(seed, 'corrupt', mode)
    images = batch.images.copy()
    if mode in ('gaussian_noise', 'noise'):
        if level < 0:
            raise ValidationError("noise sigma must be non-negative")
        if level > 0:
            images = np.clip(images + rng.normal(0.0, level, size=images.shape), 0.0, 1.0)
    elif mode == 'mask':
        if not 0.0 <= level <= 1.0:
            raise ValidationError("mask fraction must lie in [0, 1]")
        pixels = batch.image_size ** 2
        count = int(np.floor(level * pixels))
        flat = images.reshape(len(batch), pixels)
        for row in flat:
            row[rng.choice(pixels, size=count, replace=False)] = 0.0
        images = flat.reshape(images.shape)
    else:
        raise UsageError(f"Unknown corruption mode '{mode}'")
    return ImageBatch(images=images.astype(np.float32), labels=batch.labels, meta=batch.meta,
                      centers=batch.centers)


def split_train_validation(batch: ImageBatch, validation_fraction: float, seed: int) -> Tuple[ImageBatch, ImageBatch]:
    if not 0.0 <= validation_fraction < 1.0:
        raise ValidationError("validation fraction must lie in [0, 1)")
    order = make_rng(seed, 'split').permutation(len(batch))
    cut = int(round(len(batch) * validation_fraction))
    return batch.subset(np.sort(order[cut:])), batch.subset(np.sort(order[:cut]))
