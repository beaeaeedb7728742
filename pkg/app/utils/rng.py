"""Seeded random streams.

Every experiment derives its generators from a root seed plus integer keys, and
Monte Carlo loops draw fixed-size chunks from spawned substreams, so results
do not depend on how work is spread over threads.
"""
from typing import Iterator, Tuple

import numpy as np

from app.config import settings


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def chunked(rng: np.random.Generator, total: int,
            chunk: int = None) -> Iterator[Tuple[np.random.Generator, int]]:
    """Yield (substream, size) pairs covering `total` draws."""
    chunk = chunk or settings.MC_CHUNK
    n_chunks = max(1, -(-total // chunk))
    for i, child in enumerate(rng.spawn(n_chunks)):
        yield child, min(chunk, total - i * chunk)
