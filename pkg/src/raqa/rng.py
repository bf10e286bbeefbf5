"""Keyed, counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from a tuple of labels (seed, purpose, sample id, epoch, ...). Streams
are therefore stateless: the same key tuple always yields the same draws, which
is what makes dataset generation, training, and checkpoint resume exactly
reproducible without serializing mutable RNG state.
"""

import hashlib

import numpy as np


def stream_key(*parts) -> int:
    """Derive a 128-bit integer key from a tuple of ints/strings."""
    h = hashlib.blake2b(digest_size=16)
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def stream(*parts) -> np.random.Generator:
    """A fresh Generator for the stream identified by `parts`."""
    return np.random.Generator(np.random.Philox(key=stream_key(*parts)))
