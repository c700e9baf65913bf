"""
Experiment resolution for LatentForge

Layers model defaults, an INI config file and command-line flags into one
validated ExperimentConfig, then loads the datasets it names.
"""
import configparser
import logging
from argparse import Namespace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from pydantic import ValidationError as SchemaError

from config.schemas import DataSpec, ExperimentConfig, ModelConfig, TrainConfig
from core.exceptions import DataError, UsageError
from modules.datafiles import read_vdt
from modules.models import make_model_config
from modules.synthdata import ImageBatch, corrupt
from modules.trainer import TrainingData
from utils.helpers import derive_seed
from utils.validators import DATASET_PRESETS, validate_existing_file, validate_hidden

logger = logging.getLogger(__name__)

SECTIONS = ('model', 'prior', 'train', 'data', 'synth', 'run')

# flag dest -> (section, key)
FLAG_KEYS = {
    'variant': ('model', 'variant'),
    'k': ('model', 'k'),
    'hidden': ('model', 'hidden'),
    'encoder_hidden': ('model', 'encoder_hidden'),
    'decoder_hidden': ('model', 'decoder_hidden'),
    'num_classes': ('model', 'num_classes'),
    'invariance': ('prior', 'invariance'),
    'kappa': ('prior', 'kappa'),
    'sigma_s': ('prior', 'sigma_s'),
    'epochs': ('train', 'epochs'),
    'batch_size': ('train', 'batch_size'),
    'lr': ('train', 'learning_rate'),
    'gamma': ('train', 'gamma'),
    'cz': ('train', 'cz_end'),
    'cy': ('train', 'cy_end'),
    'ramp_steps': ('train', 'ramp_steps'),
    'alpha': ('train', 'ss_alpha'),
    'seed': ('train', 'seed'),
    'data': ('data', 'train'),
    'unlabeled': ('data', 'unlabeled'),
    'target': ('data', 'target'),
    'corrupt': ('data', 'corrupt'),
    'corrupt_level': ('data', 'corrupt_level'),
    'out': ('run', 'outdir'),
}


def read_config_file(path: Optional[str]) -> Dict[str, Dict[str, str]]:
    """Sections of an INI experiment file as plain string dicts; {} when no file is given"""
    sections = {name: {} for name in SECTIONS}
    if not path:
        return sections
    parser = configparser.ConfigParser()
    try:
        with open(validate_existing_file(path, "Config file"), encoding='utf-8') as handle:
            parser.read_file(handle)
    except configparser.Error as e:
        raise UsageError(f"Cannot parse config file {path}: {e}")
    for name in parser.sections():
        if name not in sections:
            raise UsageError(f"Unknown config section [{name}], expected one of {list(SECTIONS)}")
        sections[name] = dict(parser.items(name))
    return sections


def merged_settings(args: Namespace) -> Dict[str, Dict[str, Any]]:
    """Config file values overridden by every flag the user actually gave"""
    settings: Dict[str, Dict[str, Any]] = read_config_file(getattr(args, 'config', None))
    for dest, (section, key) in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            settings[section][key] = value
    return settings


def _hidden(value) -> Optional[Tuple[int, ...]]:
    return None if value is None else validate_hidden(value)


def _float_list(value) -> Optional[Tuple[float, ...]]:
    if value is None:
        return None
    if isinstance(value, str):
        value = [part for part in value.replace(' ', '').split(',') if part]
    try:
        return tuple(float(v) for v in value)
    except ValueError:
        raise UsageError(f"Expected comma separated numbers, got '{value}'")


def dataset_family(path: Optional[str]) -> str:
    """Preset name a data file was written under (its stem), 'cards-i' when unknown"""
    stem = Path(path).stem.lower() if path else ''
    return stem if stem in DATASET_PRESETS else 'cards-i'


def read_training_images(spec: DataSpec) -> ImageBatch:
    """The training file alone; image size and class count are read from it"""
    if not spec.train:
        raise UsageError("No training data given (--data or [data] train)")
    return read_vdt(validate_existing_file(spec.train, "Training data"))


def load_training_data(spec: DataSpec, seed: int, variant: str, train: Optional[ImageBatch] = None) -> TrainingData:
    """Training images plus the optional unlabeled pool and clean targets

    With a corruption mode the inputs are corrupted copies; the AE then
    trains towards the clean originals.
    """
    if train is None:
        train = read_training_images(spec)
    targets = read_vdt(validate_existing_file(spec.target, "Target data")) if spec.target else None
    if spec.corrupt:
        if targets is None and variant == 'AE':
            targets = train
        train = corrupt(train, spec.corrupt, spec.corrupt_level, derive_seed(seed, 'corrupt-inputs'))
    unlabeled = None
    if spec.unlabeled:
        pool = read_vdt(validate_existing_file(spec.unlabeled, "Unlabeled data"))
        unlabeled = ImageBatch(images=pool.images, meta=pool.meta)
    return TrainingData(train=train, unlabeled=unlabeled, targets=targets)


def resolve_experiment(args: Namespace) -> Tuple[ExperimentConfig, ImageBatch]:
    """Validated experiment and the raw training images it was sized from

    Image size and class count come from the training file when unset.
    Nothing is corrupted or trained here, so the config can be echoed first.
    """
    settings = merged_settings(args)
    model, prior, train_section = settings['model'], settings['prior'], settings['train']

    try:
        data_spec = DataSpec(**settings['data'])
        train_cfg = TrainConfig(**train_section)
        variant = str(model.get('variant', 'VAE'))
        images = read_training_images(data_spec)

        num_classes = model.get('num_classes')
        if num_classes is None:
            num_classes = images.num_classes if variant.lower() in ('crvae', 'ssrvae', 'jrvae') else 0
        hidden = _hidden(model.get('hidden'))
        overrides = {key: model[key] for key in ('reconstruction_loss', 'activation', 'coord_embed_dim')
                     if key in model}
        model_cfg = make_model_config(
            variant,
            image_size=int(model.get('image_size', images.image_size)),
            k=int(model.get('k', ModelConfig.model_fields['k'].default)),
            invariance=prior.get('invariance'),
            num_classes=int(num_classes),
            encoder_hidden=_hidden(model.get('encoder_hidden')) or hidden,
            decoder_hidden=_hidden(model.get('decoder_hidden')) or hidden,
            dataset=dataset_family(data_spec.train),
            kappa=float(prior.get('kappa', 0.0)),
            sigma_s=float(prior.get('sigma_s', 0.1)),
            lam=_float_list(prior.get('lambda')),
            **overrides,
        )
        outdir = settings['run'].get('outdir', ExperimentConfig.model_fields['outdir'].default)
        experiment = ExperimentConfig(model=model_cfg, train=train_cfg, data=data_spec, outdir=str(outdir))
    except SchemaError as e:
        raise UsageError(f"Invalid experiment configuration: {e}")

    logger.info(f"Resolved {experiment.model.variant} experiment: k={experiment.model.k}, "
                f"latent width {experiment.model.latent_width}, {len(images)} training images")
    return experiment, images


def write_resolved_config(experiment: ExperimentConfig, outdir: Path) -> Path:
    path = outdir / 'config.json'
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        path.write_text(experiment.model_dump_json(indent=2, by_alias=True) + '\n', encoding='utf-8')
    except OSError as e:
        raise DataError(f"Cannot write {path}: {e}")
    return path
