"""Float64 matrix helpers and a splittable, seed-deterministic PRNG.

Matrices are plain 2-D ``numpy.ndarray`` values in row-major float64.
Randomness flows from a single integer seed through ``Rng`` children that
are derived from the seed and a key path alone, never from how much the
parent stream was consumed, so any subtree of streams can be reproduced
in isolation.
"""

from __future__ import annotations

import zlib

import numpy as np

from .exceptions import NumericError, ShapeError

Matrix = np.ndarray


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with full float64 accumulation.

    Raises ShapeError naming both shapes when the inner dimensions differ.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def relu(a: Matrix) -> Matrix:
    """Elementwise max(x, 0). The input is not modified."""
    return np.maximum(np.asarray(a, dtype=np.float64), 0.0)


def check_finite(a: np.ndarray, what: str) -> None:
    """Raise NumericError naming ``what`` if any entry is NaN or infinite."""
    if not np.isfinite(a).all():
        raise NumericError(f"non-finite values in {what}")


def _key_to_int(key) -> int:
    # crc32 gives a stable 32-bit value for string keys on every platform.
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    k = int(key)
    if k < 0:
        raise ValueError(f"rng path keys must be non-negative, got {k}")
    return k


class Rng:
    """Deterministic PRNG tree built on PCG64 and SeedSequence spawn keys.

    ``Rng(seed).child(*keys)`` yields a stream fully determined by
    ``(seed, keys)``. Identical seed and call sequence reproduce identical
    draws; child streams do not depend on parent consumption order.
    """

    def __init__(self, seed: int, path: tuple = ()):
        seed = int(seed)
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = seed
        self.path = tuple(_key_to_int(k) for k in path)
        self.gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.path))
        )

    def child(self, *keys) -> "Rng":
        return Rng(self.seed, self.path + keys)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"


def shuffle_indices(n: int, rng: Rng) -> np.ndarray:
    """Fisher-Yates permutation of range(n), reproducible from the rng seed."""
    if n < 1:
        raise ValueError(f"shuffle_indices needs n >= 1, got {n}")
    return rng.gen.permutation(n)
