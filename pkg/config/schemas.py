"""
Configuration and report models for LatentForge

pydantic models enforce the invariants of every configuration object at
construction time, so downstream code can trust them.
"""
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

VARIANTS = ('AE', 'VAE', 'rVAE', 'crVAE', 'ssrVAE', 'jrVAE')
INVARIANT_VARIANTS = ('rVAE', 'crVAE', 'ssrVAE', 'jrVAE')
CLASS_VARIANTS = ('crVAE', 'ssrVAE', 'jrVAE')

Variant = Literal['AE', 'VAE', 'rVAE', 'crVAE', 'ssrVAE', 'jrVAE']
Invariance = Literal['none', 'rotation', 'rotation+translation', 'translation']


class PriorConfig(BaseModel):
    """Prior hyperparameters and the latent layout they imply"""
    model_config = ConfigDict(populate_by_name=True, frozen=True)

    k: int = Field(2, ge=0)
    invariance: Invariance = 'none'
    kappa: float = Field(0.0, ge=0.0)
    sigma_s: float = Field(0.1, gt=0.0)
    lam: Tuple[float, ...] = Field((), alias='lambda')
    num_classes: int = Field(0, ge=0)

    @model_validator(mode='before')
    @classmethod
    def _uniform_lambda(cls, data):
        if isinstance(data, dict):
            n = int(data.get('num_classes', 0) or 0)
            if n > 0 and not data.get('lambda') and not data.get('lam'):
                data = {**data, 'lam': tuple([1.0 / n] * n)}
        return data

    @model_validator(mode='after')
    def _check_lambda(self):
        if self.num_classes > 0:
            if len(self.lam) != self.num_classes:
                raise ValueError(f"lambda has {len(self.lam)} entries for {self.num_classes} classes")
            if any(p < 0 for p in self.lam) or abs(sum(self.lam) - 1.0) > 1e-6:
                raise ValueError("lambda must be a probability vector summing to 1")
        elif self.lam:
            raise ValueError("lambda given but num_classes is 0")
        return self

    @property
    def has_rotation(self) -> bool:
        return self.invariance in ('rotation', 'rotation+translation')

    @property
    def has_translation(self) -> bool:
        return self.invariance in ('translation', 'rotation+translation')

    @property
    def width(self) -> int:
        """Latent layout width k + (1 if rotation) + (2 if translation)"""
        return self.k + (1 if self.has_rotation else 0) + (2 if self.has_translation else 0)


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    variant: Variant = 'VAE'
    image_size: int = Field(32, ge=2)
    k: int = Field(2, ge=1)
    prior: PriorConfig = PriorConfig()
    encoder_hidden: Tuple[int, ...] = (256, 256)
    decoder_hidden: Tuple[int, ...] = (256, 256)
    coord_embed_dim: int = Field(128, ge=1)
    num_classes: int = Field(0, ge=0)
    reconstruction_loss: Literal['mse', 'bce', 'mae'] = 'bce'
    activation: Literal['identity', 'tanh', 'relu', 'sigmoid', 'softplus'] = 'tanh'

    @field_validator('variant', mode='before')
    @classmethod
    def _canonical_variant(cls, value):
        if isinstance(value, str):
            lookup = {name.lower(): name for name in VARIANTS}
            return lookup.get(value.lower(), value)
        return value

    @field_validator('encoder_hidden', 'decoder_hidden')
    @classmethod
    def _positive_widths(cls, value):
        if any(width < 1 for width in value):
            raise ValueError("hidden layer widths must be positive")
        return value

    @model_validator(mode='after')
    def _check_variant(self):
        if self.variant in CLASS_VARIANTS and self.num_classes < 2:
            raise ValueError(f"{self.variant} needs num_classes >= 2")
        if self.variant in INVARIANT_VARIANTS and self.prior.invariance == 'none':
            raise ValueError(f"{self.variant} needs rotation and/or translation invariance")
        if self.variant in ('AE', 'VAE') and self.prior.invariance != 'none':
            raise ValueError(f"{self.variant} has no invariant latents; invariance must be 'none'")
        if self.prior.k != self.k:
            raise ValueError(f"prior.k={self.prior.k} disagrees with k={self.k}")
        if self.prior.num_classes != self.num_classes:
            raise ValueError(f"prior.num_classes={self.prior.num_classes} disagrees with num_classes={self.num_classes}")
        return self

    @property
    def pixels(self) -> int:
        return self.image_size * self.image_size

    @property
    def latent_width(self) -> int:
        return self.prior.width

    @property
    def spatial(self) -> bool:
        """Variants decoded with the spatial generator"""
        return self.variant in INVARIANT_VARIANTS


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(20, ge=0)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(1e-4, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    seed: int = Field(0, ge=0)
    grad_clip: float = Field(10.0, gt=0.0)
    # capacity schedule (jrVAE)
    gamma: float = Field(30.0, ge=0.0)
    cz_start: float = Field(0.0, ge=0.0)
    cz_end: float = Field(5.0, ge=0.0)
    cy_start: float = Field(0.0, ge=0.0)
    cy_end: float = Field(5.0, ge=0.0)
    ramp_steps: int = Field(25000, ge=0)
    # relaxation temperature; ramp defaults to the full run when None
    temperature_start: float = Field(1.0, gt=0.0)
    temperature_end: float = Field(0.5, gt=0.0)
    temperature_steps: Optional[int] = Field(None, ge=0)
    # semi-supervised cross-entropy weight
    ss_alpha: float = Field(50.0, ge=0.0)
    log_every: int = Field(50, ge=1)


class CardsConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    image_size: int = Field(32, ge=24)
    alpha_deg: float = Field(12.0, ge=0.0)
    s_deg: float = Field(1.0, ge=0.0, lt=45.0)
    count_per_suit: int = Field(3000, ge=0)
    suits: Tuple[int, ...] = (0, 1, 2, 3)
    seed: int = Field(0, ge=0)

    @field_validator('suits')
    @classmethod
    def _valid_suits(cls, value):
        if not value or any(s not in (0, 1, 2, 3) for s in value) or len(set(value)) != len(value):
            raise ValueError("suits must be distinct ids from 0 (clubs) .. 3 (diamonds)")
        return value

    @classmethod
    def preset(cls, name: str, **overrides) -> 'CardsConfig':
        presets = {
            'cards-i': (12.0, 1.0),
            'cards-ii': (12.0, 20.0),
            'cards-iii': (120.0, 1.0),
            'cards-iv': (120.0, 20.0),
        }
        if name not in presets:
            raise ValueError(f"Unknown cards preset '{name}', expected one of {sorted(presets)}")
        alpha, shear = presets[name]
        return cls(alpha_deg=alpha, s_deg=shear, **overrides)


class LatentGridSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    dims: Tuple[int, int] = (0, 1)
    range_x: Tuple[float, float] = (-1.5, 1.5)
    range_y: Tuple[float, float] = (-1.5, 1.5)
    steps: int = Field(12, ge=2)
    frozen: Dict[int, float] = Field(default_factory=dict)
    class_condition: Optional[int] = Field(None, ge=0)

    @model_validator(mode='after')
    def _check_ranges(self):
        for lo, hi in (self.range_x, self.range_y):
            if not lo < hi:
                raise ValueError(f"range [{lo}, {hi}] must satisfy lo < hi")
        if self.dims[0] == self.dims[1] or min(self.dims) < 0:
            raise ValueError("dims must be two distinct non-negative z indices")
        return self


class DataSpec(BaseModel):
    """Dataset files an experiment reads"""
    model_config = ConfigDict(frozen=True)

    train: Optional[str] = None
    unlabeled: Optional[str] = None
    validation: Optional[str] = None
    target: Optional[str] = None
    corrupt: Optional[Literal['noise', 'mask']] = None
    corrupt_level: float = Field(0.0, ge=0.0)


class ExperimentConfig(BaseModel):
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    data: DataSpec = DataSpec()
    outdir: str = 'runs/latest'


class EvalReport(BaseModel):
    """Classification report with a row-normalized confusion matrix (rows = truth)"""
    confusion: List[List[float]]
    accuracy: float
    per_class_accuracy: List[Optional[float]]
    support: List[int]
    mapping: Dict[int, int] = Field(default_factory=dict)
