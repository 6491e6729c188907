"""Seeded, splittable random streams.

All randomness in the package flows through Philox, a counter-based
generator whose output is identical across platforms and numpy builds.
Independent streams are derived by hashing a (seed, label, indices...)
path into a 128-bit Philox key, so per-image or per-ROI work can run in
parallel and still reproduce the serial byte stream exactly.

Splitting rule: ``stream(seed, "scene")`` is the scene generator's
stream, ``stream(seed, "points", roi_index)`` the point sampler's stream
for one ROI, and so on. Any two distinct paths give independent streams.
"""

from __future__ import annotations

import hashlib

import numpy as np

_DOMAIN = b"centerseg.rng.v1"


def _key_bytes(seed: int, path: tuple) -> bytes:
    parts = [_DOMAIN, str(int(seed)).encode()]
    for item in path:
        if isinstance(item, (int, np.integer)):
            parts.append(b"i" + str(int(item)).encode())
        elif isinstance(item, str):
            parts.append(b"s" + item.encode("utf-8"))
        else:
            raise TypeError(f"stream path items must be int or str, got {type(item)!r}")
    return hashlib.blake2b(b"\x1f".join(parts), digest_size=16).digest()


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Return the Philox generator for the stream named by (seed, *path)."""
    key = np.frombuffer(_key_bytes(seed, path), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, *path: int | str) -> int:
    """Fold a stream path into a plain 63-bit seed for APIs that take one."""
    digest = _key_bytes(seed, path)
    return int.from_bytes(digest[:8], "little") >> 1
