"""Named, order-independent random substreams derived from one 64-bit seed."""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> tuple[int, ...]:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=16).digest()
    return tuple(int.from_bytes(digest[k:k + 4], "little") for k in range(0, 16, 4))


def substream(seed: int, *names) -> np.random.Generator:
    """
    Generator for the stream identified by ``names`` under ``seed``.

    The stream depends only on (seed, names), never on how many other
    streams were drawn before it, so results do not depend on evaluation
    order.
    """
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    key: tuple[int, ...] = ()
    for name in names:
        key += _name_key(str(name))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))
