"""Seeding, thread caps and deterministic execution."""
import logging
import os
from contextlib import contextmanager
from typing import Iterator, Optional

import torch

logger = logging.getLogger(__name__)

THREADS_ENV = "P3D_THREADS"


def resolve_threads(requested: Optional[int] = None) -> int:
    """Thread count from the explicit request, then P3D_THREADS, then 1."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning(f"Ignoring non-integer {THREADS_ENV}={env!r}")
    return 1


def configure_threads(threads: int) -> None:
    torch.set_num_threads(threads)
    logger.debug(f"torch intra-op threads set to {threads}")


def seed_everything(seed: int) -> torch.Generator:
    """Seed torch's global state and return a dedicated CPU generator."""
    torch.manual_seed(seed)
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


@contextmanager
def deterministic_mode(enabled: bool = True) -> Iterator[None]:
    previous = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(enabled)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(previous)
