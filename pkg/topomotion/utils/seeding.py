"""Seed derivation so every random draw is a pure function of (seed, stream, step)."""
import hashlib
from collections.abc import Iterator
from contextlib import contextmanager

import numpy as np
import torch


def derive_seed(seed: int, *keys: int | str) -> int:
    """Mix a base seed with stream keys into a 63-bit seed."""
    digest = hashlib.blake2b(repr((seed, *keys)).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & ((1 << 63) - 1)


def numpy_rng(seed: int, *keys: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))


def torch_generator(seed: int, *keys: int | str) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, *keys))
    return generator


@contextmanager
def seeded(seed: int, *keys: int | str) -> Iterator[None]:
    """Run a block with the global torch RNG seeded from (seed, *keys), restoring it afterwards."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, *keys))
        yield
