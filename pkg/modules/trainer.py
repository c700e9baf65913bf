"""
Training loop: Adam, capacity/temperature schedules, seeded mini-batching,
per-step metric log and the LFCK checkpoint container
"""
import json
import logging
import math
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config.schemas import ModelConfig, TrainConfig
from config.settings import Config
from core.exceptions import (ChecksumError, DataError, FormatError, LengthError, NumericError,
                             ParameterCountError, UsageError, VersionError)
from core.params import ParamStore
from core.tensor import backward
from modules.models import BREAKDOWN_KEYS, build_params, conditions_encoder, model_loss, parameter_count
from modules.synthdata import ImageBatch
from utils.helpers import derive_seed, format_seconds, make_rng

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ('step',) + BREAKDOWN_KEYS
CHECKPOINT_MAGIC = b'LFCK'


class Schedule(NamedTuple):
    gamma: float
    c_z: float
    c_y: float
    temperature: float


@dataclass
class AdamState:
    """First/second moment estimates per parameter and the completed update count"""
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: ParamStore) -> 'AdamState':
        return cls([np.zeros_like(p.data) for p in params.tensors()],
                   [np.zeros_like(p.data) for p in params.tensors()])


def adam_step(params: ParamStore, grads: Sequence[np.ndarray], state: AdamState, lr: float,
              betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8, t: Optional[int] = None) -> AdamState:
    """One bias-corrected Adam update, applied in place; `t` defaults to state.t + 1"""
    t = state.t + 1 if t is None else int(t)
    if t < 1:
        raise UsageError("Adam step index starts at 1")
    if len(grads) != len(params):
        raise UsageError(f"{len(grads)} gradients for {len(params)} parameters")
    beta1, beta2 = betas
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for i, (tensor, g) in enumerate(zip(params.tensors(), grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        update = lr * (state.m[i] / correction1) / (np.sqrt(state.v[i] / correction2) + eps)
        tensor.data = (tensor.data - update).astype(tensor.data.dtype)
    state.t = t
    return state


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    """Rescale so the global L2 norm is at most max_norm; returns the norm before clipping"""
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if norm > max_norm > 0:
        factor = max_norm / norm
        return [g * factor for g in grads], norm
    return list(grads), norm


def _ramp(start: float, end: float, step: int, steps: int) -> float:
    if steps <= 0 or step >= steps:
        return float(end)
    return float(start + (end - start) * step / steps)


def capacity_schedule(cfg: TrainConfig, step: int, total_steps: Optional[int] = None) -> Schedule:
    """Linear ramps of C_z, C_y over ramp_steps and of the temperature over temperature_steps

    temperature_steps defaults to the length of the run (`total_steps`), or
    ramp_steps when that is unknown.
    """
    if step < 0:
        raise UsageError("step must be non-negative")
    temperature_steps = cfg.temperature_steps
    if temperature_steps is None:
        temperature_steps = total_steps if total_steps is not None else cfg.ramp_steps
    return Schedule(gamma=float(cfg.gamma),
                    c_z=_ramp(cfg.cz_start, cfg.cz_end, step, cfg.ramp_steps),
                    c_y=_ramp(cfg.cy_start, cfg.cy_end, step, cfg.ramp_steps),
                    temperature=_ramp(cfg.temperature_start, cfg.temperature_end, step, temperature_steps))


# --- checkpoints -----------------------------------------------------------------------

@dataclass
class Checkpoint:
    model: ModelConfig
    train: TrainConfig
    payload: np.ndarray
    step: int = 0
    rng_state: Tuple[int, int] = (0, 0)
    version: int = field(default=Config.CHECKPOINT_VERSION)

    def __post_init__(self):
        self.payload = np.asarray(self.payload, dtype=np.float32).reshape(-1)

    @property
    def completed_epochs(self) -> int:
        return int(self.rng_state[1])

    def params(self) -> ParamStore:
        """Fresh ParamStore holding the checkpointed values"""
        params = build_params(self.model, seed=self.rng_state[0])
        params.load_flat(self.payload)
        return params


def _config_blob(model: ModelConfig, train: TrainConfig) -> bytes:
    document = {'model': model.model_dump(mode='json', by_alias=True), 'train': train.model_dump(mode='json')}
    return json.dumps(document, sort_keys=True, separators=(',', ':')).encode('utf-8')


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    blob = _config_blob(ckpt.model, ckpt.train)
    body = b''.join([
        CHECKPOINT_MAGIC,
        struct.pack('<II', ckpt.version, len(blob)), blob,
        struct.pack('<QQQ', ckpt.step, *ckpt.rng_state),
        struct.pack('<Q', ckpt.payload.size), ckpt.payload.astype('<f4').tobytes(),
    ])
    return body + struct.pack('<I', zlib.crc32(body) & 0xFFFFFFFF)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < 12:
        raise LengthError("checkpoint shorter than its header")
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"Bad checkpoint magic {blob[:4]!r}")
    version, blob_len = struct.unpack_from('<II', blob, 4)
    if version != Config.CHECKPOINT_VERSION:
        raise VersionError(f"checkpoint version {version} is not supported (expected {Config.CHECKPOINT_VERSION})")
    offset = 12 + blob_len
    if len(blob) < offset + 32 + 4:
        raise LengthError("checkpoint truncated inside its header")
    step, seed, epochs, count = struct.unpack_from('<QQQQ', blob, offset)
    offset += 32
    if len(blob) != offset + 4 * count + 4:
        raise LengthError(f"checkpoint holds {len(blob)} bytes, header implies {offset + 4 * count + 4}")
    (stored,) = struct.unpack('<I', blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored:
        raise ChecksumError("checkpoint checksum mismatch")
    try:
        document = json.loads(blob[12:12 + blob_len].decode('utf-8'))
        model = ModelConfig.model_validate(document['model'])
        train = TrainConfig.model_validate(document['train'])
    except (ValueError, KeyError) as e:
        raise FormatError(f"checkpoint config is unreadable: {e}")
    expected = parameter_count(model)
    if count != expected:
        raise ParameterCountError(f"checkpoint stores {count} parameters, its config declares {expected}")
    payload = np.frombuffer(blob, dtype='<f4', count=count, offset=offset).astype(np.float32)
    return Checkpoint(model=model, train=train, payload=payload, step=step, rng_state=(seed, epochs),
                      version=version)


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(ckpt))
    except OSError as e:
        raise DataError(f"Cannot write checkpoint {path}: {e}")
    logger.info(f"Checkpoint saved to {path} (step {ckpt.step}, {ckpt.payload.size} parameters)")


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"Cannot read checkpoint {path}: {e}")
    return decode_checkpoint(blob)


def write_metrics(log: pd.DataFrame, path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        log.to_csv(path, index=False, columns=list(METRIC_COLUMNS), na_rep='', float_format='%.9g')
    except OSError as e:
        raise DataError(f"Cannot write {path}: {e}")


# --- training loop ------------------------------------------------------------------------

@dataclass
class TrainingData:
    """Images a run trains on: `targets` are clean counterparts for AE denoising/inpainting,
    `unlabeled` the unsupervised pool of the semi-supervised variant"""
    train: ImageBatch
    unlabeled: Optional[ImageBatch] = None
    targets: Optional[ImageBatch] = None


def _check_data(model_cfg: ModelConfig, data: TrainingData) -> None:
    if len(data.train) == 0:
        raise UsageError("training set is empty")
    if data.train.image_size != model_cfg.image_size:
        raise UsageError(f"images are {data.train.image_size}² but the model expects {model_cfg.image_size}²")
    if conditions_encoder(model_cfg):
        if data.train.labels is None:
            raise UsageError(f"{model_cfg.variant} trains on labeled images")
        if data.train.num_classes > model_cfg.num_classes:
            raise UsageError(f"labels reach class {data.train.num_classes - 1}, "
                             f"model has {model_cfg.num_classes} classes")
    if data.unlabeled is not None and model_cfg.variant != 'ssrVAE':
        raise UsageError("only ssrVAE uses an unlabeled set")
    if data.targets is not None:
        if model_cfg.variant != 'AE':
            raise UsageError("clean targets are only used by the AE")
        if data.targets.images.shape != data.train.images.shape:
            raise UsageError("targets must align one-to-one with the training images")


def train(cfg: TrainConfig, model_cfg: ModelConfig, datasets: Union[TrainingData, ImageBatch],
          resume: Optional[Checkpoint] = None) -> Tuple[Checkpoint, pd.DataFrame]:
    """Seeded shuffled mini-batch training; returns the final checkpoint and the per-step log

    A non-finite loss aborts the run with a NumericError naming the term.
    """
    data = datasets if isinstance(datasets, TrainingData) else TrainingData(train=datasets)
    _check_data(model_cfg, data)
    n = len(data.train)
    batches_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * batches_per_epoch

    if resume is not None:
        params, step, start_epoch = resume.params(), resume.step, resume.completed_epochs
    else:
        params, step, start_epoch = build_params(model_cfg, seed=cfg.seed), 0, 0
    state = AdamState.for_params(params)
    unlabeled_size = math.ceil(len(data.unlabeled) / batches_per_epoch) if data.unlabeled is not None else 0

    logger.info(f"Training {model_cfg.variant} ({params.count} parameters) on {n} images: "
                f"{cfg.epochs} epochs × {batches_per_epoch} batches")
    rows = []
    started = time.time()
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        order = make_rng(cfg.seed, 'shuffle', epoch).permutation(n)
        order_u = make_rng(cfg.seed, 'shuffle-unlabeled', epoch).permutation(len(data.unlabeled)) \
            if unlabeled_size else None
        for b in range(batches_per_epoch):
            indices = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = data.train.subset(indices)
            targets = data.targets.subset(indices) if data.targets is not None else None
            unlabeled = data.unlabeled.subset(order_u[b * unlabeled_size:(b + 1) * unlabeled_size]) \
                if order_u is not None else None
            schedule = capacity_schedule(cfg, step, total_steps)

            params.zero_grad()
            try:
                loss, breakdown = model_loss(model_cfg, params, batch, targets=targets, unlabeled=unlabeled,
                                             capacities=(schedule.gamma, schedule.c_z, schedule.c_y),
                                             temperature=schedule.temperature, alpha=cfg.ss_alpha,
                                             noise_seed=derive_seed(cfg.seed, 'noise', step))
                backward(loss)
            except NumericError as e:
                logger.error(f"Step {step}: non-finite '{e.term or 'unknown'}' term, aborting ({e})")
                raise
            grads, _ = clip_gradients(params.grads(), cfg.grad_clip)
            adam_step(params, grads, state, cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.adam_eps)
            if not np.all(np.isfinite(params.flatten())):
                raise NumericError(f"Step {step}: parameters became non-finite", term='params')
            step += 1
            rows.append({'step': step, **breakdown})
            if step % cfg.log_every == 0:
                terms = ', '.join(f"{key}={value:.4f}" for key, value in breakdown.items() if np.isfinite(value))
                logger.info(f"epoch {epoch + 1} step {step}: {terms}")

    completed = start_epoch + cfg.epochs
    logger.info(f"Training finished after {step} steps in {format_seconds(time.time() - started)}")
    ckpt = Checkpoint(model=model_cfg, train=cfg, payload=params.flatten(), step=step,
                      rng_state=(cfg.seed, completed))
    log = pd.DataFrame(rows, columns=list(METRIC_COLUMNS))
    return ckpt, log
