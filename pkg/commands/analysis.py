"""
Analysis subcommands: eval, grid, traverse and encode

Each one loads a checkpoint and drives the latent-space toolkit in
modules.latentlab.
"""
import logging
from argparse import Namespace
from pathlib import Path
from typing import Any, Dict

import pandas as pd
from pydantic import ValidationError as SchemaError

from commands.base_command import BaseCommand
from config.schemas import LatentGridSpec
from core.exceptions import DataError, UsageError
from modules import latentlab as lab
from modules.datafiles import read_vdt
from modules.trainer import Checkpoint, load_checkpoint
from utils.validators import validate_existing_file, validate_range

logger = logging.getLogger(__name__)


def _load(args: Namespace) -> Checkpoint:
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    return load_checkpoint(validate_existing_file(args.checkpoint, "Checkpoint"))


def _data(args: Namespace):
    if not args.data:
        raise UsageError("--data is required")
    return read_vdt(validate_existing_file(args.data, "Dataset"))


def parse_frozen(text: str) -> Dict[int, float]:
    """'2=0.5,3=-1' -> {2: 0.5, 3: -1.0}"""
    frozen = {}
    for item in filter(None, (part.strip() for part in (text or '').split(','))):
        dim, sep, value = item.partition('=')
        if not sep:
            raise UsageError(f"frozen latent '{item}' must look like index=value")
        try:
            frozen[int(dim)] = float(value)
        except ValueError:
            raise UsageError(f"frozen latent '{item}' must look like index=value")
    return frozen


class _CheckpointCommand(BaseCommand):
    """Commands that read a checkpoint"""

    def add_arguments(self, parser) -> None:
        parser.add_argument('--checkpoint', required=True, help='checkpoint written by train')


class EvalCommand(_CheckpointCommand):

    def __init__(self):
        super().__init__('eval', 'Classification report of a checkpoint on a labeled dataset')

    def add_arguments(self, parser) -> None:
        super().add_arguments(parser)
        parser.add_argument('--data', required=True, help='labeled VDT file')

    def execute(self, args: Namespace) -> Dict[str, Any]:
        ckpt = _load(args)
        report = lab.evaluate(ckpt, _data(args), seed=args.seed or 0)
        outdir = Path(args.out) if args.out else Path(args.checkpoint).parent
        try:
            outdir.mkdir(parents=True, exist_ok=True)
            (outdir / 'eval.json').write_text(report.model_dump_json(indent=2) + '\n', encoding='utf-8')
        except OSError as e:
            raise DataError(f"Cannot write {outdir / 'eval.json'}: {e}")

        size = len(report.confusion)
        frame = pd.DataFrame(report.confusion, columns=[f'pred_{c}' for c in range(size)])
        frame.insert(0, 'truth', range(size))
        lab.write_table(frame, outdir / 'confusion.csv')

        summary = f"{outdir / 'eval.json'}: accuracy={report.accuracy:.4f} over {sum(report.support)} images"
        print(summary)
        return {'summary': summary, 'accuracy': report.accuracy}


class GridCommand(_CheckpointCommand):

    def __init__(self):
        super().__init__('grid', 'Decode a regular grid over two latent dimensions')

    def add_arguments(self, parser) -> None:
        super().add_arguments(parser)
        parser.add_argument('--dims', type=int, nargs=2, default=(0, 1), metavar=('X', 'Y'))
        parser.add_argument('--range', type=float, nargs=2, default=(-1.5, 1.5), metavar=('LO', 'HI'))
        parser.add_argument('--range-y', type=float, nargs=2, metavar=('LO', 'HI'),
                            help='sweep of the second dim (defaults to --range)')
        parser.add_argument('--steps', type=int, default=12)
        parser.add_argument('--class', dest='class_id', type=int, help='class condition for class-aware decoders')
        parser.add_argument('--frozen', help="values for other latents, e.g. '2=0.5,3=-1'")

    def execute(self, args: Namespace) -> Dict[str, Any]:
        ckpt = _load(args)
        range_x = validate_range(*args.range)
        range_y = validate_range(*args.range_y) if args.range_y else range_x
        try:
            spec = LatentGridSpec(dims=tuple(args.dims), range_x=range_x, range_y=range_y, steps=args.steps,
                                  frozen=parse_frozen(args.frozen), class_condition=args.class_id)
        except SchemaError as e:
            raise UsageError(f"Invalid grid: {e}")
        tiles = lab.decoded_latent_grid(ckpt, spec)
        out = Path(args.out or 'grid.png')
        lab.write_png(lab.compose_mosaic(tiles), out)
        summary = f"{out}: {spec.steps}×{spec.steps} mosaic over z{spec.dims[0]} × z{spec.dims[1]}"
        print(summary)
        return {'summary': summary, 'output': str(out)}


class TraverseCommand(_CheckpointCommand):

    def __init__(self):
        super().__init__('traverse', 'Decode each class while sweeping one latent')

    def add_arguments(self, parser) -> None:
        super().add_arguments(parser)
        parser.add_argument('--dim', type=int, default=0, help='latent index to sweep')
        parser.add_argument('--classes', type=int, help='number of classes to show (default all)')
        parser.add_argument('--range', type=float, nargs=2, default=(-1.5, 1.5), metavar=('LO', 'HI'))
        parser.add_argument('--steps', type=int, default=5)

    def execute(self, args: Namespace) -> Dict[str, Any]:
        ckpt = _load(args)
        tiles = lab.traverse_manifold(ckpt, args.dim, args.classes, validate_range(*args.range), args.steps)
        out = Path(args.out or 'traverse.png')
        lab.write_png(lab.compose_mosaic(tiles), out)
        summary = f"{out}: {tiles.shape[0]} classes × {tiles.shape[1]} values of z{args.dim}"
        print(summary)
        return {'summary': summary, 'output': str(out)}


class EncodeCommand(_CheckpointCommand):

    def __init__(self):
        super().__init__('encode', 'Export posterior means (and the angle histogram) of a dataset')

    def add_arguments(self, parser) -> None:
        super().add_arguments(parser)
        parser.add_argument('--data', required=True, help='VDT file to encode')
        parser.add_argument('--hist-theta', action='store_true', help='also write the encoded angle histogram')
        parser.add_argument('--bins', type=int, default=60)

    def execute(self, args: Namespace) -> Dict[str, Any]:
        ckpt = _load(args)
        if args.hist_theta and not ckpt.model.prior.has_rotation:
            raise UsageError(f"{ckpt.model.variant} checkpoint encodes no angle; --hist-theta is unavailable")
        batch = _data(args)
        out = Path(args.out or 'latents.csv')
        frame = lab.latent_scatter_export(ckpt, batch)
        lab.write_table(frame, out)
        result = {'output': str(out), 'rows': len(frame)}
        summary = f"{out}: {len(frame)} rows"

        if ckpt.model.prior.has_rotation and batch.meta is not None and batch.labels is not None:
            recovery = lab.angle_recovery(frame)
            scores = ', '.join(f"{c}={r:.3f}" for c, r in recovery.items())
            logger.info(f"Angle recovery per class: {scores}")
            result['angle_recovery'] = recovery

        if args.hist_theta:
            histogram = lab.theta_histogram(frame['theta'].to_numpy(), args.bins)
            hist_path = out.with_name(f"{out.stem}_theta_hist.csv")
            lab.write_table(histogram, hist_path)
            modes = lab.histogram_modes(histogram['count'].to_numpy())
            logger.info(f"Angle histogram modes at bins {modes.tolist()}")
            summary += f", theta histogram {hist_path} ({len(modes)} modes)"
            result['modes'] = modes.tolist()

        print(summary)
        result['summary'] = summary
        return result
