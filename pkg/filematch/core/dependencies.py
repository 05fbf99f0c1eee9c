"""Dependency wiring for the command-line application.

Builds the services the subcommands use. Shared resources such as the model
repository are created once and reused.
"""
from typing import Optional

from filematch.repositories.base_repository import ModelRepository
from filematch.repositories.json_repository import JsonModelRepository
from filematch.services.em_engine import EMEngine

# Singleton instances
model_repository_instance: ModelRepository = JsonModelRepository()


def create_em_engine(threads: Optional[int] = None) -> EMEngine:
    """
    Creates an EMEngine whose random starts use at most ``threads`` workers.

    Returns:
        EMEngine instance.
    """
    return EMEngine(threads=threads)


def get_model_repository() -> ModelRepository:
    """Returns the shared model repository."""
    return model_repository_instance
