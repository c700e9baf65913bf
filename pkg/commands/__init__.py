"""
LatentForge subcommands
"""
from commands.base_command import BaseCommand
from commands.synth import SynthCommand
from commands.train import TrainCommand
from commands.analysis import EncodeCommand, EvalCommand, GridCommand, TraverseCommand


def all_commands():
    """One fresh instance of every subcommand, in help order"""
    return [SynthCommand(), TrainCommand(), EvalCommand(), GridCommand(), TraverseCommand(), EncodeCommand()]


__all__ = ['BaseCommand', 'SynthCommand', 'TrainCommand', 'EvalCommand', 'GridCommand',
           'TraverseCommand', 'EncodeCommand', 'all_commands']
