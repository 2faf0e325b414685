"""Counter-based random streams.

All randomness in the package derives from BLAKE2 digests of
``(seed, purpose, path...)``.  A digest either seeds a Philox counter
generator (bulk draws for walks and samplers) or is stretched directly
into a handful of uniforms (per-node mark draws).  Either way a node,
replica or batch can be regenerated in isolation and no result depends
on growth or scheduling order.
"""

from __future__ import annotations

import hashlib

import numpy as np

_U64 = float(2**64)


def key_digest(seed: int, *parts) -> bytes:
    """16-byte digest of a seed plus framing parts (ints or strings)."""
    h = hashlib.blake2b(digest_size=16)
    h.update((int(seed) % 2**64).to_bytes(8, "little"))
    for p in parts:
        if isinstance(p, bytes):
            raw = p
        elif isinstance(p, str):
            raw = p.encode()
        else:
            raw = int(p).to_bytes(8, "little", signed=True)
        h.update(len(raw).to_bytes(2, "little"))
        h.update(raw)
    return h.digest()


def child_digest(parent: bytes, index: int) -> bytes:
    """Digest of child ``index`` under a node digest (tree recursion)."""
    return hashlib.blake2b(
        parent + int(index).to_bytes(4, "little"), digest_size=16
    ).digest()


def uniforms(digest: bytes, k: int) -> list[float]:
    """Stretch a digest into ``k`` uniforms on [0, 1).

    Stable across platforms: no generator state is involved, only the
    hash of the digest, so the same node always sees the same draws.
    """
    raw = hashlib.blake2b(digest + b"u", digest_size=8 * k).digest()
    return [int.from_bytes(raw[8 * i : 8 * i + 8], "little") / _U64 for i in range(k)]


def generator(digest: bytes) -> np.random.Generator:
    """Philox generator keyed by a 16-byte digest (for bulk draws)."""
    key = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def stream(seed: int, *parts) -> np.random.Generator:
    """Shorthand for ``generator(key_digest(seed, *parts))``."""
    return generator(key_digest(seed, *parts))
