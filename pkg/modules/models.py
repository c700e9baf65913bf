"""
Model family: AE, VAE, rVAE, crVAE, ssrVAE and jrVAE

Encoders are dense MLPs over flattened images (plus a one-hot class for the
conditional variants). Plain AE/VAE decode with a dense MLP; the invariant
variants decode with the spatial generator: every pixel coordinate, rotated
and shifted by the sample's (theta, dx, dy), is embedded separately and
summed with the embedded latent vector before a per-pixel MLP.

Parameter names are stable (`enc.0.W`, `enc.mean.b`, `cls.out.W`,
`dec.coord.W`, ...); their declaration order is fixed by `param_layout`.
"""
import contextlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.schemas import CLASS_VARIANTS, INVARIANT_VARIANTS, VARIANTS, ModelConfig, PriorConfig
from core import tensor as T
from core.exceptions import DimensionError, NumericError, UsageError
from core.params import ParamStore
from core.tensor import Tensor
from modules import stochastic as S
from modules.stochastic import LatentStats
from modules.synthdata import ImageBatch
from utils.helpers import derive_seed, wrap_angle

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7
BREAKDOWN_KEYS = ('loss', 'recon', 'kl_z', 'kl_theta', 'kl_trans', 'kl_cat', 'acc')

Breakdown = Dict[str, float]
Images = Union[ImageBatch, np.ndarray, Tensor]
LayoutEntry = Tuple[str, Tuple[int, ...], int]


# --- configuration helpers ------------------------------------------------------

def default_hidden(variant: str, dataset: str = 'cards-i') -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    """(encoder_hidden, decoder_hidden) used for a variant on a dataset family"""
    if variant == 'jrVAE':
        return (1024,) * 4, (1024,) * 4
    if variant == 'ssrVAE':
        return (128, 128), (256, 256)
    if variant == 'crVAE':
        return (256, 256), (256, 256)
    if variant == 'rVAE':
        wide = dataset in ('cards-ii', 'cards-iv', 'honeycomb')
        return ((512, 512), (512, 512)) if wide else ((256, 256), (256, 256))
    return (256, 256), (256, 256)


def make_model_config(variant: str, image_size: int = 32, k: int = 2, invariance: Optional[str] = None,
                      num_classes: int = 0, encoder_hidden: Optional[Sequence[int]] = None,
                      decoder_hidden: Optional[Sequence[int]] = None, dataset: str = 'cards-i',
                      kappa: float = 0.0, sigma_s: float = 0.1, lam: Optional[Sequence[float]] = None,
                      **overrides) -> ModelConfig:
    """ModelConfig with the per-variant defaults filled in"""
    lookup = {name.lower(): name for name in VARIANTS}
    if variant.lower() not in lookup:
        raise UsageError(f"Unknown variant '{variant}', expected one of {list(VARIANTS)}")
    variant = lookup[variant.lower()]
    if invariance is None:
        invariance = 'rotation+translation' if variant in INVARIANT_VARIANTS else 'none'
    enc_default, dec_default = default_hidden(variant, dataset)
    prior_fields = dict(k=k, invariance=invariance, kappa=kappa, sigma_s=sigma_s, num_classes=num_classes)
    if lam is not None:
        prior_fields['lambda'] = tuple(lam)
    prior = PriorConfig(**prior_fields)
    return ModelConfig(variant=variant, image_size=image_size, k=k, prior=prior, num_classes=num_classes,
                       encoder_hidden=tuple(encoder_hidden or enc_default),
                       decoder_hidden=tuple(decoder_hidden or dec_default), **overrides)


def conditions_encoder(cfg: ModelConfig) -> bool:
    return cfg.variant in ('crVAE', 'ssrVAE')


def conditions_decoder(cfg: ModelConfig) -> bool:
    return cfg.variant in CLASS_VARIANTS


def _mlp_layout(prefix: str, width_in: int, hidden: Sequence[int]) -> Tuple[List[LayoutEntry], int]:
    entries = []
    for i, width in enumerate(hidden):
        entries += [(f'{prefix}.{i}.W', (width_in, width), width_in), (f'{prefix}.{i}.b', (width,), width_in)]
        width_in = width
    return entries, width_in


def param_layout(cfg: ModelConfig) -> List[LayoutEntry]:
    """(name, shape, fan_in) of every parameter in declaration order"""
    entries: List[LayoutEntry] = []
    width_in = cfg.pixels + (cfg.num_classes if conditions_encoder(cfg) else 0)
    trunk, last = _mlp_layout('enc', width_in, cfg.encoder_hidden)
    entries += trunk
    d = cfg.latent_width
    entries += [('enc.mean.W', (last, d), last), ('enc.mean.b', (d,), last)]
    if cfg.variant != 'AE':
        entries += [('enc.logvar.W', (last, d), last), ('enc.logvar.b', (d,), last)]
    if cfg.variant == 'jrVAE':
        entries += [('enc.class.W', (last, cfg.num_classes), last), ('enc.class.b', (cfg.num_classes,), last)]
    if cfg.variant == 'ssrVAE':
        classifier, last_cls = _mlp_layout('cls', cfg.pixels, cfg.encoder_hidden)
        entries += classifier
        entries += [('cls.out.W', (last_cls, cfg.num_classes), last_cls),
                    ('cls.out.b', (cfg.num_classes,), last_cls)]

    condition = cfg.num_classes if conditions_decoder(cfg) else 0
    if cfg.spatial:
        e = cfg.coord_embed_dim
        entries += [('dec.coord.W', (2, e), 2), ('dec.coord.b', (e,), 2),
                    ('dec.latent.W', (cfg.k + condition, e), cfg.k + condition)]
        decoder, last = _mlp_layout('dec', e, cfg.decoder_hidden)
        out = 1
    else:
        decoder, last = _mlp_layout('dec', cfg.k, cfg.decoder_hidden)
        out = cfg.pixels
    entries += decoder
    entries += [('dec.out.W', (last, out), last), ('dec.out.b', (out,), last)]
    return entries


def build_params(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    params = ParamStore(seed)
    for name, shape, fan_in in param_layout(cfg):
        params.declare(name, shape, init='kaiming', fan_in=fan_in)
    logger.debug(f"{cfg.variant}: {len(params)} tensors, {params.count} parameters")
    return params


def parameter_count(cfg: ModelConfig) -> int:
    return int(sum(np.prod(shape) for _, shape, _ in param_layout(cfg)))


# --- latent codes ---------------------------------------------------------------------

@dataclass
class LatentCode:
    """One sample's latent state; theta in radians, y a class index or probability vector"""
    z: np.ndarray
    theta: float = 0.0
    dx: float = 0.0
    dy: float = 0.0
    y: Optional[Union[int, np.ndarray]] = None

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64).reshape(-1)
        if isinstance(self.y, (list, tuple, np.ndarray)):
            self.y = np.asarray(self.y, dtype=np.float64)
            if abs(self.y.sum() - 1.0) > 1e-5 or np.any(self.y < 0):
                raise UsageError("class probabilities must lie on the simplex")

    @property
    def wrapped_theta(self) -> float:
        return float(wrap_angle(self.theta))


def pack_latent(code: LatentCode, prior: PriorConfig) -> np.ndarray:
    """Layout row (theta, dx, dy, z...) for the given prior"""
    if code.z.size != prior.k:
        raise DimensionError(f"code has {code.z.size} z dims, prior expects {prior.k}")
    row = np.zeros(prior.width)
    slices = S.latent_slices(prior)
    if 'theta' in slices:
        row[slices['theta']] = code.theta
    elif code.theta != 0:
        raise UsageError("layout has no angle latent")
    if 'trans' in slices:
        row[slices['trans']] = (code.dx, code.dy)
    elif code.dx != 0 or code.dy != 0:
        raise UsageError("layout has no translation latents")
    row[slices['z']] = code.z
    return row


def unpack_latent(row: np.ndarray, prior: PriorConfig, y=None) -> LatentCode:
    row = np.asarray(row, dtype=np.float64).reshape(-1)
    if row.size != prior.width:
        raise DimensionError(f"row has {row.size} entries, layout width is {prior.width}")
    slices = S.latent_slices(prior)
    theta = float(row[slices['theta']][0]) if 'theta' in slices else 0.0
    dx, dy = (float(v) for v in row[slices['trans']]) if 'trans' in slices else (0.0, 0.0)
    return LatentCode(z=row[slices['z']].copy(), theta=theta, dx=dx, dy=dy, y=y)


# --- inputs ---------------------------------------------------------------------------

def flat_images(cfg: ModelConfig, batch: Images) -> Tensor:
    """Batch as a B×(H·W) tensor"""
    if isinstance(batch, Tensor):
        data = batch.data
    else:
        data = batch.images if isinstance(batch, ImageBatch) else np.asarray(batch)
    data = data.reshape(data.shape[0], -1) if data.ndim > 1 else data.reshape(1, -1)
    if data.shape[1] != cfg.pixels:
        raise DimensionError(f"images have {data.shape[1]} pixels, model expects {cfg.pixels}")
    if data.shape[0] == 0:
        raise UsageError("empty batch")
    return batch if isinstance(batch, Tensor) and batch.shape == data.shape else Tensor(data)


def one_hot(labels: Sequence[int], num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise UsageError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def condition_concat(x: Tensor, condition: Union[Tensor, np.ndarray], num_classes: int) -> Tensor:
    """Append a class vector (one-hot or soft probabilities) to each input row"""
    condition = T.as_tensor(condition)
    if condition.ndim != 2 or condition.shape != (x.shape[0], num_classes):
        raise UsageError(f"class condition must be {x.shape[0]}×{num_classes}, got {condition.shape}")
    return T.concat([x, condition], axis=1)


def _condition(cfg: ModelConfig, batch_size: int, labels=None, class_probs=None) -> Optional[Tensor]:
    if labels is not None and class_probs is not None:
        raise UsageError("give labels or class probabilities, not both")
    if labels is not None:
        labels = np.asarray(labels).reshape(-1)
        if labels.size != batch_size:
            raise UsageError(f"{labels.size} labels for a batch of {batch_size}")
        return Tensor(one_hot(labels, cfg.num_classes))
    if class_probs is not None:
        return T.as_tensor(class_probs)
    return None


@contextlib.contextmanager
def _term(name: str):
    """Name the loss term in any numeric failure raised inside the block"""
    try:
        yield
    except NumericError as e:
        if e.term is not None:
            raise
        raise type(e)(f"{name}: {e}", term=name) from e


# --- encoders ----------------------------------------------------------------------------

def _mlp(params: ParamStore, prefix: str, h: Tensor, depth: int, activation: str) -> Tensor:
    for i in range(depth):
        h = T.forward_dense(h, params[f'{prefix}.{i}.W'], params[f'{prefix}.{i}.b'], activation)
    return h


def class_logits(cfg: ModelConfig, params: ParamStore, batch: Images) -> Tensor:
    """Unnormalized q(y|x): classifier network (ssrVAE) or head on the encoder trunk (jrVAE)"""
    x = flat_images(cfg, batch)
    if cfg.variant == 'ssrVAE':
        h = _mlp(params, 'cls', x, len(cfg.encoder_hidden), cfg.activation)
        return T.forward_dense(h, params['cls.out.W'], params['cls.out.b'])
    if cfg.variant == 'jrVAE':
        h = _mlp(params, 'enc', x, len(cfg.encoder_hidden), cfg.activation)
        return T.forward_dense(h, params['enc.class.W'], params['enc.class.b'])
    raise UsageError(f"{cfg.variant} has no classifier")


def classify(cfg: ModelConfig, params: ParamStore, batch: Images) -> Tensor:
    """B×C class probability rows"""
    return T.softmax_rows(class_logits(cfg, params, batch))


def encode(cfg: ModelConfig, params: ParamStore, batch: Images, one_hot_labels=None) -> LatentStats:
    """Posterior statistics over the full latent layout (theta, dx, dy, z...)

    `one_hot_labels` (one-hot or soft rows) is required by crVAE and ssrVAE
    and rejected by every other variant.
    """
    x = flat_images(cfg, batch)
    if conditions_encoder(cfg):
        if one_hot_labels is None:
            raise UsageError(f"{cfg.variant} encoder needs class labels")
        x = condition_concat(x, one_hot_labels, cfg.num_classes)
    elif one_hot_labels is not None:
        raise UsageError(f"{cfg.variant} encoder does not take class labels")
    h = _mlp(params, 'enc', x, len(cfg.encoder_hidden), cfg.activation)
    mean = T.forward_dense(h, params['enc.mean.W'], params['enc.mean.b'])
    if cfg.variant == 'AE':
        log_var = Tensor(np.zeros(mean.shape))
    else:
        log_var = T.forward_dense(h, params['enc.logvar.W'], params['enc.logvar.b'])
    logits = None
    if cfg.variant == 'jrVAE':
        logits = T.forward_dense(h, params['enc.class.W'], params['enc.class.b'])
    elif cfg.variant == 'ssrVAE':
        logits = class_logits(cfg, params, batch)
    return LatentStats(mean, log_var, logits)


# --- spatial generator ---------------------------------------------------------------------

@dataclass
class CoordinateGrid:
    """H·W pixel coordinates in [-1, 1]², row-major; column 0 is x (left to right), column 1 is y"""
    image_size: int
    coords: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.image_size < 2:
            raise UsageError("coordinate grid needs at least 2 pixels per side")
        ticks = np.linspace(-1.0, 1.0, self.image_size)
        ys, xs = np.meshgrid(ticks[::-1], ticks, indexing='ij')
        self.coords = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)

    def __len__(self) -> int:
        return self.coords.shape[0]


def coordinate_grid(image_size: int) -> CoordinateGrid:
    return CoordinateGrid(image_size)


def _column(value) -> Tensor:
    value = T.as_tensor(value)
    return T.reshape(value, (value.size, 1))


def transform_grid(grid: CoordinateGrid, theta, dx=0.0, dy=0.0) -> Tensor:
    """Rotate then shift every coordinate per sample; returns B×(H·W)×2

    x_t = x · [[cos θ, sin θ], [-sin θ, cos θ]] + (dx, dy)
    """
    theta, dx, dy = _column(theta), _column(dx), _column(dy)
    x0 = Tensor(grid.coords[None, :, 0])
    x1 = Tensor(grid.coords[None, :, 1])
    cos, sin = T.cos(theta), T.sin(theta)
    xt0 = x0 * cos - x1 * sin + dx
    xt1 = x0 * sin + x1 * cos + dy
    b, n = xt0.shape
    return T.concat([T.reshape(xt0, (b, n, 1)), T.reshape(xt1, (b, n, 1))], axis=2)


def spatial_decode(cfg: ModelConfig, params: ParamStore, z: Tensor, grid_t: Union[Tensor, CoordinateGrid],
                   condition=None) -> Tensor:
    """Per-pixel generator: B×k latents and B×N×2 coordinates to B×N intensities"""
    z = T.as_tensor(z)
    if z.ndim != 2 or z.shape[1] != cfg.k:
        raise DimensionError(f"z must be B×{cfg.k}, got {z.shape}")
    b = z.shape[0]
    latent_in = z
    if conditions_decoder(cfg):
        if condition is None:
            raise UsageError(f"{cfg.variant} decoder needs a class condition")
        latent_in = condition_concat(z, condition, cfg.num_classes)
    elif condition is not None:
        raise UsageError(f"{cfg.variant} decoder does not take a class condition")
    e = cfg.coord_embed_dim
    latent_proj = T.reshape(T.matmul(latent_in, params['dec.latent.W']), (b, 1, e))

    coords = Tensor(grid_t.coords[None]) if isinstance(grid_t, CoordinateGrid) else T.as_tensor(grid_t)
    if coords.ndim != 3 or coords.shape[2] != 2 or coords.shape[0] not in (1, b):
        raise DimensionError(f"grid must be B×N×2 or 1×N×2, got {coords.shape}")
    gb, n, _ = coords.shape
    coord_proj = T.forward_dense(T.reshape(coords, (gb * n, 2)), params['dec.coord.W'], params['dec.coord.b'])
    h = T.activate(T.reshape(coord_proj, (gb, n, e)) + latent_proj, cfg.activation)
    h = T.reshape(h, (b * n, e))
    h = _mlp(params, 'dec', h, len(cfg.decoder_hidden), cfg.activation)
    out = T.forward_dense(h, params['dec.out.W'], params['dec.out.b'], 'sigmoid')
    return T.reshape(out, (b, n))


def dense_decode(cfg: ModelConfig, params: ParamStore, z: Tensor) -> Tensor:
    z = T.as_tensor(z)
    if z.ndim != 2 or z.shape[1] != cfg.k:
        raise DimensionError(f"z must be B×{cfg.k}, got {z.shape}")
    h = _mlp(params, 'dec', z, len(cfg.decoder_hidden), cfg.activation)
    return T.forward_dense(h, params['dec.out.W'], params['dec.out.b'], 'sigmoid')


def decode_latents(cfg: ModelConfig, params: ParamStore, latents, condition=None) -> Tensor:
    """Decode full layout rows (theta, dx, dy, z...) to B×(H·W) images"""
    latents = T.as_tensor(latents)
    if latents.ndim == 1:
        latents = T.reshape(latents, (1, latents.size))
    if latents.shape[1] != cfg.latent_width:
        raise DimensionError(f"latents must have {cfg.latent_width} columns, got {latents.shape[1]}")
    slices = S.latent_slices(cfg.prior)
    z = latents[:, slices['z']]
    if not cfg.spatial:
        return dense_decode(cfg, params, z)
    theta = latents[:, slices['theta']] if 'theta' in slices else 0.0
    if 'trans' in slices:
        start = slices['trans'].start
        dx, dy = latents[:, start:start + 1], latents[:, start + 1:start + 2]
    else:
        dx = dy = 0.0
    grid = transform_grid(coordinate_grid(cfg.image_size), theta, dx, dy)
    return spatial_decode(cfg, params, z, grid, condition)


# --- losses ---------------------------------------------------------------------------------

def reconstruction_error(x, x_hat: Tensor, kind: str = 'bce') -> Tensor:
    """Per-sample reconstruction loss summed over pixels"""
    x, x_hat = T.as_tensor(x), T.as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise DimensionError(f"target {x.shape} and reconstruction {x_hat.shape} differ")
    if x.ndim == 1:
        x, x_hat = T.reshape(x, (1, x.size)), T.reshape(x_hat, (1, x_hat.size))
    if kind == 'mse':
        return T.square(x - x_hat).sum(axis=1)
    if kind == 'mae':
        return T.absolute(x - x_hat).sum(axis=1)
    if kind == 'bce':
        if x.data.min() < 0 or x.data.max() > 1:
            raise UsageError("bce targets must lie in [0, 1]")
        p = T.clip(x_hat, BCE_EPS, 1.0 - BCE_EPS)
        likelihood = x * T.log(p) + (1.0 - x) * T.log(1.0 - p)
        return T.neg(likelihood.sum(axis=1))
    raise UsageError(f"Unknown reconstruction loss '{kind}'")


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)"""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size != logits.shape[0]:
        raise UsageError(f"{labels.size} labels for {logits.shape[0]} rows")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise UsageError(f"labels must lie in [0, {logits.shape[1]})")
    picked = T.log_softmax_rows(logits)[np.arange(labels.size), labels]
    return T.neg(picked.mean())


def _breakdown(**terms) -> Breakdown:
    out = {key: float('nan') for key in BREAKDOWN_KEYS}
    for key, value in terms.items():
        out[key] = float(value.item()) if isinstance(value, Tensor) else float(value)
    return out


def _invariant_kls(cfg: ModelConfig, stats: LatentStats) -> Dict[str, Tensor]:
    """Per-sample KL terms of each latent group present in the layout"""
    prior = cfg.prior
    terms = {}
    with _term('kl_z'):
        terms['kl_z'] = S.kl_normal_std(stats.select('z', prior))
    if prior.has_rotation:
        with _term('kl_theta'):
            terms['kl_theta'] = S.kl_angle(stats.select('theta', prior), prior.kappa)
    if prior.has_translation:
        with _term('kl_trans'):
            terms['kl_trans'] = S.kl_translation(stats.select('trans', prior), prior.sigma_s)
    return terms


def ae_loss(cfg: ModelConfig, params: ParamStore, batch: Images, targets: Optional[Images] = None
            ) -> Tuple[Tensor, Breakdown]:
    """Deterministic autoencoder; `targets` (clean images) turn it into a denoiser/inpainter"""
    if cfg.variant != 'AE':
        raise UsageError(f"ae_loss needs an AE, got {cfg.variant}")
    stats = encode(cfg, params, batch)
    target = flat_images(cfg, targets if targets is not None else batch)
    with _term('recon'):
        recon = reconstruction_error(target, dense_decode(cfg, params, stats.mean), cfg.reconstruction_loss).mean()
    return recon, _breakdown(loss=recon, recon=recon)


def elbo_vae(cfg: ModelConfig, params: ParamStore, batch: Images, noise_seed: int = 0) -> Tuple[Tensor, Breakdown]:
    """Negative ELBO mean_B[recon + KL(q(z|x) || N(0, I))]"""
    if cfg.variant != 'VAE':
        raise UsageError(f"elbo_vae needs a VAE, got {cfg.variant}")
    x = flat_images(cfg, batch)
    stats = encode(cfg, params, x)
    z = S.sample_normal_reparam(stats, noise_seed)
    with _term('recon'):
        recon = reconstruction_error(x, dense_decode(cfg, params, z), cfg.reconstruction_loss).mean()
    with _term('kl_z'):
        kl = S.kl_normal_std(stats).mean()
    loss = recon + kl
    return loss, _breakdown(loss=loss, recon=recon, kl_z=kl)


def _invariant_elbo(cfg: ModelConfig, params: ParamStore, x: Tensor, condition: Optional[Tensor],
                    noise_seed: int) -> Tuple[Tensor, Dict[str, Tensor]]:
    stats = encode(cfg, params, x, condition if conditions_encoder(cfg) else None)
    sample = S.sample_normal_reparam(stats, noise_seed)
    with _term('recon'):
        x_hat = decode_latents(cfg, params, sample, condition)
        recon = reconstruction_error(x, x_hat, cfg.reconstruction_loss)
    terms = {'recon': recon, **_invariant_kls(cfg, stats)}
    total = recon
    for name in ('kl_z', 'kl_theta', 'kl_trans'):
        if name in terms:
            total = total + terms[name]
    return total.mean(), {name: value.mean() for name, value in terms.items()}


def elbo_rvae(cfg: ModelConfig, params: ParamStore, batch: Images, labels: Optional[Sequence[int]] = None,
              noise_seed: int = 0, class_probs=None) -> Tuple[Tensor, Breakdown]:
    """Negative invariant ELBO: recon + KL_z + KL_theta + KL_translation, batch-averaged

    crVAE (and the labeled branch of ssrVAE) conditions encoder and decoder on
    one-hot labels; `class_probs` substitutes soft conditioning rows.
    """
    if cfg.variant not in ('rVAE', 'crVAE', 'ssrVAE'):
        raise UsageError(f"elbo_rvae needs rVAE or crVAE, got {cfg.variant}")
    x = flat_images(cfg, batch)
    if labels is None and class_probs is None and isinstance(batch, ImageBatch) and cfg.variant != 'rVAE':
        labels = batch.labels
    condition = _condition(cfg, x.shape[0], labels, class_probs) if cfg.variant != 'rVAE' else None
    if cfg.variant != 'rVAE' and condition is None:
        raise UsageError(f"{cfg.variant} needs labels")
    loss, terms = _invariant_elbo(cfg, params, x, condition, noise_seed)
    return loss, _breakdown(loss=loss, **terms)


def ss_loss(cfg: ModelConfig, params: ParamStore, labeled: ImageBatch, unlabeled: Optional[ImageBatch] = None,
            alpha: float = 50.0, noise_seed: int = 0) -> Tuple[Tensor, Breakdown]:
    """Semi-supervised objective

    ELBO on labeled images with their one-hot labels, ELBO on unlabeled images
    conditioned on the classifier's soft predictions, plus alpha times the
    classifier's cross-entropy on the labeled images.
    """
    if cfg.variant != 'ssrVAE':
        raise UsageError(f"ss_loss needs an ssrVAE, got {cfg.variant}")
    if labeled is None or len(labeled) == 0 or labeled.labels is None:
        raise UsageError("ss_loss needs a non-empty labeled batch")
    x_l = flat_images(cfg, labeled)
    loss, terms = _invariant_elbo(cfg, params, x_l, Tensor(one_hot(labeled.labels, cfg.num_classes)), noise_seed)
    with _term('ce'):
        logits = class_logits(cfg, params, x_l)
        ce = cross_entropy(logits, labeled.labels)
    accuracy = float(np.mean(logits.data.argmax(axis=1) == labeled.labels))
    if alpha:
        loss = loss + T.scale(ce, alpha)
    if unlabeled is not None and len(unlabeled):
        x_u = flat_images(cfg, unlabeled)
        probs = classify(cfg, params, x_u)
        loss_u, terms_u = _invariant_elbo(cfg, params, x_u, probs, derive_seed(noise_seed, 'unlabeled'))
        loss = loss + loss_u
        terms = {name: terms[name] + terms_u[name] for name in terms}
    return loss, _breakdown(loss=loss, acc=accuracy, **terms)


def elbo_jrvae(cfg: ModelConfig, params: ParamStore, batch: Images, capacities: Tuple[float, float, float],
               temperature: float = 1.0, noise_seed: int = 0, training: bool = True) -> Tuple[Tensor, Breakdown]:
    """Capacity-controlled joint objective

    mean_B[recon + gamma·|KL_cont - C_z| + gamma·|KL_cat - C_y|]; the decoder is
    conditioned on a relaxed sample of q(y|x) while training and on its argmax
    one-hot otherwise.
    """
    if cfg.variant != 'jrVAE':
        raise UsageError(f"elbo_jrvae needs a jrVAE, got {cfg.variant}")
    gamma, c_z, c_y = (float(c) for c in capacities)
    if gamma < 0 or c_z < 0 or c_y < 0:
        raise UsageError("gamma and capacities must be non-negative")
    x = flat_images(cfg, batch)
    stats = encode(cfg, params, x)
    probs = T.softmax_rows(stats.class_logits)
    if training:
        y = S.sample_gumbel_softmax(stats.class_logits, temperature, derive_seed(noise_seed, 'y'))
    else:
        y = Tensor(one_hot(probs.data.argmax(axis=1), cfg.num_classes))
    sample = S.sample_normal_reparam(stats, noise_seed)
    with _term('recon'):
        recon = reconstruction_error(x, decode_latents(cfg, params, sample, y), cfg.reconstruction_loss)
    kls = _invariant_kls(cfg, stats)
    kl_cont = kls['kl_z']
    for name in ('kl_theta', 'kl_trans'):
        if name in kls:
            kl_cont = kl_cont + kls[name]
    with _term('kl_cat'):
        kl_cat = S.kl_categorical(probs, cfg.prior.lam)
    penalty = T.scale(T.absolute(kl_cont - c_z) + T.absolute(kl_cat - c_y), gamma)
    loss = (recon + penalty).mean()
    terms = {name: value.mean() for name, value in kls.items()}
    return loss, _breakdown(loss=loss, recon=recon.mean(), kl_cat=kl_cat.mean(), **terms)


def model_loss(cfg: ModelConfig, params: ParamStore, batch: ImageBatch, *, targets: Optional[ImageBatch] = None,
               unlabeled: Optional[ImageBatch] = None, capacities: Tuple[float, float, float] = (30.0, 0.0, 0.0),
               temperature: float = 1.0, alpha: float = 50.0, noise_seed: int = 0,
               training: bool = True) -> Tuple[Tensor, Breakdown]:
    """Objective of the configured variant on one mini-batch"""
    if cfg.variant == 'AE':
        return ae_loss(cfg, params, batch, targets)
    if cfg.variant == 'VAE':
        return elbo_vae(cfg, params, batch, noise_seed)
    if cfg.variant in ('rVAE', 'crVAE'):
        return elbo_rvae(cfg, params, batch, noise_seed=noise_seed)
    if cfg.variant == 'ssrVAE':
        return ss_loss(cfg, params, batch, unlabeled, alpha, noise_seed)
    return elbo_jrvae(cfg, params, batch, capacities, temperature, noise_seed, training)
