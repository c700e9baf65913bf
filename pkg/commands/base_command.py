"""
Base Command Class for LatentForge
Provides timing and logging shared by every subcommand
"""
from abc import ABC, abstractmethod
from argparse import Namespace
from typing import Dict, Any
import logging
import time

logger = logging.getLogger(__name__)


class BaseCommand(ABC):
    """Abstract base class for all subcommands"""

    def __init__(self, command_name: str, help_text: str):
        self.command_name = command_name
        self.help_text = help_text

    @abstractmethod
    def add_arguments(self, parser) -> None:
        """Register the subcommand's flags on its argparse sub-parser"""
        pass

    @abstractmethod
    def execute(self, args: Namespace) -> Dict[str, Any]:
        """
        Execute the command's main functionality
        Must be implemented by subclasses; returns a dict with at least 'summary'
        """
        pass

    def run(self, args: Namespace) -> Dict[str, Any]:
        """
        Execute command with timing

        Errors propagate untouched; the entry point logs them once and maps
        them to exit codes.

        Args:
            args: Parsed command-line arguments

        Returns:
            Dict containing command results and metadata
        """
        start_time = time.time()
        logger.info(f"Starting {self.command_name}")

        result = self.execute(args)

        execution_time = time.time() - start_time
        result.update({
            'command': self.command_name,
            'status': 'success',
            'execution_time': execution_time,
        })
        logger.info(f"{self.command_name} completed in {execution_time:.2f}s")
        return result
