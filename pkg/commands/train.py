"""
train: fit one model variant and write its checkpoint, metric log and resolved config
"""
import logging
from argparse import Namespace
from pathlib import Path
from typing import Any, Dict

from commands.base_command import BaseCommand
from commands.experiment import load_training_data, resolve_experiment, write_resolved_config
from config.schemas import VARIANTS
from core.exceptions import UsageError
from modules.trainer import load_checkpoint, save_checkpoint, train, write_metrics

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = 'checkpoint.lfck'
METRICS_FILE = 'metrics.csv'


class TrainCommand(BaseCommand):

    def __init__(self):
        super().__init__('train', 'Train a model variant')

    def add_arguments(self, parser) -> None:
        parser.add_argument('--variant', help=f"one of {', '.join(VARIANTS)} (case insensitive)")
        parser.add_argument('--data', help='training VDT file')
        parser.add_argument('--unlabeled', help='unlabeled VDT pool (ssrVAE)')
        parser.add_argument('--target', help='clean target VDT aligned with --data (AE)')
        parser.add_argument('--corrupt', choices=('noise', 'mask'), help='corrupt the training inputs')
        parser.add_argument('--corrupt-level', type=float, help='noise std or masked fraction')
        parser.add_argument('--k', type=int, help='number of continuous latents')
        parser.add_argument('--hidden', help="encoder and decoder widths, e.g. '256,256'")
        parser.add_argument('--encoder-hidden', help='encoder widths')
        parser.add_argument('--decoder-hidden', help='decoder widths')
        parser.add_argument('--invariance', choices=('none', 'rotation', 'translation', 'rotation+translation'))
        parser.add_argument('--num-classes', type=int, help='class count (defaults to the labels in --data)')
        parser.add_argument('--kappa', type=float, help='von Mises concentration of the angle prior')
        parser.add_argument('--sigma-s', type=float, help='std of the translation prior')
        parser.add_argument('--epochs', type=int)
        parser.add_argument('--batch-size', type=int)
        parser.add_argument('--lr', type=float, help='Adam learning rate')
        parser.add_argument('--gamma', type=float, help='capacity weight (jrVAE)')
        parser.add_argument('--cz', type=float, help='final continuous capacity (jrVAE)')
        parser.add_argument('--cy', type=float, help='final discrete capacity (jrVAE)')
        parser.add_argument('--ramp-steps', type=int, help='capacity ramp length in steps (jrVAE)')
        parser.add_argument('--alpha', type=float, help='classification weight (ssrVAE)')
        parser.add_argument('--resume', help='continue from this checkpoint')

    def execute(self, args: Namespace) -> Dict[str, Any]:
        experiment, images = resolve_experiment(args)
        outdir = Path(experiment.outdir)
        config_path = write_resolved_config(experiment, outdir)
        logger.info(f"Resolved config written to {config_path}")
        data = load_training_data(experiment.data, experiment.train.seed, experiment.model.variant, images)

        resume = None
        if args.resume:
            resume = load_checkpoint(args.resume)
            if resume.model != experiment.model:
                raise UsageError("--resume checkpoint was trained with a different model configuration")

        ckpt, log = train(experiment.train, experiment.model, data, resume=resume)
        save_checkpoint(ckpt, outdir / CHECKPOINT_FILE)
        write_metrics(log, outdir / METRICS_FILE)

        final = log['loss'].iloc[-1] if len(log) else float('nan')
        summary = (f"{outdir / CHECKPOINT_FILE}: {experiment.model.variant} k={experiment.model.k} "
                   f"latents={experiment.model.latent_width} steps={ckpt.step} final_loss={final:.4f}")
        print(summary)
        return {'summary': summary, 'output': str(outdir), 'steps': ckpt.step}
