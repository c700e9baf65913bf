"""
synth: write a benchmark dataset to disk
"""
import logging
from argparse import Namespace
from pathlib import Path
from typing import Any, Callable, Dict

import numpy as np
from pydantic import ValidationError as SchemaError

from commands.base_command import BaseCommand
from commands.experiment import read_config_file
from config.schemas import CardsConfig
from core.exceptions import UsageError
from modules.datafiles import read_idx_batch, write_points, write_rings, write_vdt
from modules.latticegraph import (atom_patches, lattice_frame, random_defects, rasterize_lattice,
                                  synth_honeycomb, UNCLASSIFIED)
from modules.synthdata import ImageBatch, make_cards_dataset, rotate_batch
from utils.validators import DATASET_PRESETS, validate_existing_file, validate_preset

logger = logging.getLogger(__name__)

MNIST_ROTATION_DEG = 90.0


def _range(values: np.ndarray) -> str:
    if values.size == 0:
        return "[]"
    return f"[{values.min():.2f}, {values.max():.2f}]"


def batch_summary(path: Path, batch: ImageBatch) -> str:
    """One line: file, count, class count and the ground-truth angle/shear ranges"""
    parts = [f"{path}: N={len(batch)}", f"classes={batch.num_classes}", f"size={batch.image_size}"]
    if batch.meta is not None:
        parts.append(f"angle={_range(batch.meta[:, 0])}")
        parts.append(f"shear={_range(batch.meta[:, 1])}")
    return ' '.join(parts)


class SynthCommand(BaseCommand):
    """Cards presets, rotated MNIST and synthetic honeycomb lattices"""

    def __init__(self):
        super().__init__('synth', 'Generate a dataset preset')

    def add_arguments(self, parser) -> None:
        parser.add_argument('preset', help=f"one of {', '.join(DATASET_PRESETS)}")
        parser.add_argument('--count', type=int, help='cards per suit (cards presets)')
        parser.add_argument('--image-size', type=int, help='image side in pixels (cards presets)')
        parser.add_argument('--angle-range', type=float, help='override the preset rotation half-range (degrees)')
        parser.add_argument('--shear-range', type=float, help='override the preset shear half-range (degrees)')
        parser.add_argument('--mnist-images', help='IDX image file (rotated-mnist)')
        parser.add_argument('--mnist-labels', help='IDX label file (rotated-mnist)')
        parser.add_argument('--limit', type=int, help='use only the first N digits (rotated-mnist)')
        parser.add_argument('--rows', type=int, help='unit cells along a2 (honeycomb)')
        parser.add_argument('--cols', type=int, help='unit cells along a1 (honeycomb)')
        parser.add_argument('--stone-wales', type=int, help='number of Stone-Wales defects (honeycomb)')
        parser.add_argument('--vacancies', type=int, help='number of vacancies (honeycomb)')
        parser.add_argument('--jitter', type=float, help='positional noise std in bond lengths (honeycomb)')
        parser.add_argument('--pixels-per-unit', type=float, help='raster pixels per bond length (honeycomb)')
        parser.add_argument('--spot-sigma', type=float, help='atom spot std in bond lengths (honeycomb)')
        parser.add_argument('--window', type=int, help='odd patch side in pixels (honeycomb)')

    def execute(self, args: Namespace) -> Dict[str, Any]:
        preset = validate_preset(args.preset)
        file_settings = read_config_file(args.config)['synth']
        seed = args.seed if args.seed is not None else int(file_settings.get('seed', 0))

        def setting(dest: str, cast: Callable, default):
            value = getattr(args, dest, None)
            if value is None:
                value = file_settings.get(dest, default)
            return None if value is None else cast(value)

        out = Path(args.out or f"{preset}.vdt")
        if preset.startswith('cards-'):
            summary = self._cards(preset, out, seed, setting)
        elif preset == 'rotated-mnist':
            summary = self._rotated_mnist(out, seed, setting)
        else:
            summary = self._honeycomb(out, seed, setting)
        print(summary)
        return {'summary': summary, 'output': str(out)}

    def _cards(self, preset: str, out: Path, seed: int, setting) -> str:
        overrides = {'seed': seed}
        for dest, field in (('count', 'count_per_suit'), ('image_size', 'image_size')):
            value = setting(dest, int, None)
            if value is not None:
                overrides[field] = value
        try:
            cfg = CardsConfig.preset(preset, **overrides)
            explicit = {field: setting(dest, float, None)
                        for dest, field in (('angle_range', 'alpha_deg'), ('shear_range', 's_deg'))}
            explicit = {field: value for field, value in explicit.items() if value is not None}
            if explicit:
                cfg = CardsConfig(**{**cfg.model_dump(), **explicit})
        except SchemaError as e:
            raise UsageError(f"Invalid cards parameters: {e}")
        batch = make_cards_dataset(cfg)
        write_vdt(batch, out)
        return batch_summary(out, batch)

    def _rotated_mnist(self, out: Path, seed: int, setting) -> str:
        images = setting('mnist_images', str, None)
        if not images:
            raise UsageError("rotated-mnist needs --mnist-images")
        labels = setting('mnist_labels', str, None)
        batch = read_idx_batch(validate_existing_file(images, "MNIST images"),
                               validate_existing_file(labels, "MNIST labels") if labels else None,
                               limit=setting('limit', int, None))
        rotated = rotate_batch(batch, MNIST_ROTATION_DEG, seed)
        write_vdt(rotated, out)
        return batch_summary(out, rotated)

    def _honeycomb(self, out: Path, seed: int, setting) -> str:
        rows, cols = setting('rows', int, 12), setting('cols', int, 12)
        ppu = setting('pixels_per_unit', float, 8.0)
        spot_sigma = setting('spot_sigma', float, 0.2)
        defects = random_defects(rows, cols, setting('stone_wales', int, 0), setting('vacancies', int, 0), seed)
        points = synth_honeycomb(rows, cols, defects, setting('jitter', float, 0.0), seed)

        frame = lattice_frame(points, ppu, square=True)
        raster = ImageBatch(images=rasterize_lattice(points, ppu, spot_sigma, frame)[None])
        patches, rings, classes = atom_patches(points, ppu, spot_sigma, setting('window', int, None))

        base = out.with_suffix('')
        write_points(points, f"{base}_points.csv")
        write_rings(rings, f"{base}_rings.csv")
        write_vdt(raster, out)
        write_vdt(patches, f"{base}_patches.vdt")

        census = ', '.join(f"{size}-rings={count}" for size, count in sorted(rings.census().items()))
        unclassified = int(np.sum(classes == UNCLASSIFIED))
        logger.info(f"Honeycomb {rows}×{cols}: {len(defects)} defects, {len(rings)} rings")
        return (f"{out}: N={len(points)} atoms, raster={raster.image_size}px, "
                f"patches={len(patches)} (classes={patches.num_classes}, unclassified={unclassified}), {census}")
