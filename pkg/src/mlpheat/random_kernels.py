"""Counter-based random streams keyed by recursion-tree paths.

Every node of the estimator's recursion tree owns a 128-bit key derived from
the root seed and the node's path of ``(level, branch, role)`` tags.  Draws
are a pure function of ``(key, draw index)``, so results do not depend on the
order in which nodes are evaluated or on which thread evaluates them.

A ``RandomStream`` holds a *batch* of keys.  Batches let the estimator draw
for many sibling nodes with one vectorised call; a stream built from a seed
and an explicit path has batch size one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import ndtri

__all__ = [
    "TERMINAL",
    "BLOCK",
    "RvCounter",
    "RandomStream",
    "arcsine_from_uniform",
    "sample_arcsine",
    "gaussian_increment",
    "derive_child",
]

TERMINAL = 0
BLOCK = 1

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_SALT_A = np.uint64(0x243F6A8885A308D3)
_SALT_B = np.uint64(0x13198A2E03707344)
_SALT_C = np.uint64(0xA4093822299F31D0)
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)
_S11 = np.uint64(11)

EPS = float(np.finfo(np.float64).eps)


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finaliser; a bijection on uint64
    z = z ^ (z >> _S30)
    z = z * _MUL1
    z ^= z >> _S27
    z *= _MUL2
    z ^= z >> _S31
    return z


def _encode_tag(level, branch, role) -> np.ndarray:
    """Injective packing of (level, branch, role) into one uint64 per entry."""
    level = np.asarray(level, dtype=np.int64)
    branch = np.asarray(branch, dtype=np.int64)
    if np.any(level < 0) or np.any(level >= 1 << 16):
        raise ValueError("level out of range [0, 2^16)")
    if np.any(np.abs(branch) >= 1 << 38):
        raise ValueError("branch out of range")
    if not 0 <= int(role) < 256:
        raise ValueError("role must fit in 8 bits")
    zigzag = np.where(branch >= 0, 2 * branch, -2 * branch - 1).astype(np.uint64)
    return (
        (level.astype(np.uint64) << np.uint64(48))
        | (np.uint64(role) << np.uint64(40))
        | zigzag
    )


def _derive(k0: np.ndarray, k1: np.ndarray, tags: np.ndarray):
    """Child keys for every (parent, tag) pair; result shape (len(k0), len(tags))."""
    h = _mix(tags * _GOLDEN + _SALT_A)[None, :]
    a = _mix(k0[:, None] ^ h)
    b = _mix((k1[:, None] + a) ^ _SALT_B)
    a = _mix(a + (b ^ _SALT_C))
    return a, b


@dataclass
class RvCounter:
    """Number of scalar random variables drawn; merging two counters adds them."""

    count: int = 0

    def add(self, k: int) -> None:
        self.count += int(k)

    def __add__(self, other: "RvCounter") -> "RvCounter":
        return RvCounter(self.count + other.count)


class RandomStream:
    """A batch of counter-based random streams.

    ``keys`` has shape ``(size, 2)`` (two uint64 lanes per stream).  All
    streams in a batch advance together: ``position`` is the number of draws
    already taken from each of them.  Draws are charged to ``counter``
    (one per scalar per batch member) when a counter is attached.
    """

    __slots__ = ("keys", "position", "counter", "path")

    def __init__(self, keys, position=0, counter=None, path=None):
        keys = np.asarray(keys, dtype=np.uint64)
        if keys.ndim != 2 or keys.shape[1] != 2:
            raise ValueError("keys must have shape (size, 2)")
        self.keys = keys
        self.position = int(position)
        self.counter = counter
        self.path = path

    @classmethod
    def root(cls, seed: int, counter: RvCounter | None = None) -> "RandomStream":
        seed = int(seed) & _MASK64
        k0 = np.array([seed], dtype=np.uint64)
        k1 = _mix(k0 ^ _SALT_C)
        return cls(np.stack([k0, k1], axis=1), counter=counter, path=())

    @classmethod
    def from_path(cls, seed: int, path: Iterable[tuple[int, int, int]],
                  counter: RvCounter | None = None) -> "RandomStream":
        stream = cls.root(seed, counter)
        for level, branch, role in path:
            stream = stream.child(level, branch, role)
        return stream

    def __len__(self) -> int:
        return self.keys.shape[0]

    def with_counter(self, counter: RvCounter | None) -> "RandomStream":
        return RandomStream(self.keys, self.position, counter, self.path)

    def child(self, level: int, branch: int, role: int) -> "RandomStream":
        """Stream for sub-index (theta, level, branch) tagged with ``role``."""
        out = self.spawn(level, [branch], role)
        if self.path is not None:
            out.path = self.path + ((int(level), int(branch), int(role)),)
        return out

    def spawn(self, level: int, branches, role: int) -> "RandomStream":
        """Children for each branch of every batch member, batch-major order.

        The result has size ``len(self) * len(branches)``; entry
        ``j * len(branches) + b`` is the child of member ``j`` at ``branches[b]``.
        Children start at draw position zero.
        """
        tags = _encode_tag(level, np.atleast_1d(branches), role)
        a, b = _derive(self.keys[:, 0], self.keys[:, 1], tags)
        keys = np.stack([a.ravel(), b.ravel()], axis=1)
        return RandomStream(keys, 0, self.counter)

    def _bits(self, k: int) -> np.ndarray:
        ctr = np.arange(self.position + 1, self.position + k + 1, dtype=np.uint64)
        z = _mix(self.keys[:, 0:1] + ctr[None, :] * _GOLDEN)
        z ^= self.keys[:, 1:2]
        z = _mix(z)
        self.position += k
        if self.counter is not None:
            self.counter.add(k * len(self))
        return z

    def uniforms(self, k: int) -> np.ndarray:
        """``(size, k)`` uniforms on the open interval (0, 1)."""
        z = self._bits(k)
        return ((z >> _S11).astype(np.float64) + 0.5) * 2.0**-53

    def normals(self, k: int) -> np.ndarray:
        return ndtri(self.uniforms(k))


def arcsine_from_uniform(u):
    """Inverse CDF of Beta(1/2, 1/2), clamped away from the endpoints."""
    r = np.sin(0.5 * np.pi * np.asarray(u, dtype=np.float64)) ** 2
    return np.clip(r, EPS, 1.0 - EPS)


def sample_arcsine(stream: RandomStream) -> np.ndarray:
    """One Beta(1/2, 1/2) fraction per batch member, shape ``(size,)``."""
    return arcsine_from_uniform(stream.uniforms(1)[:, 0])


def gaussian_increment(stream: RandomStream, d: int, dt) -> np.ndarray:
    """Brownian increments over a time length ``dt``, shape ``(size, d)``.

    ``dt`` is a scalar or one value per batch member.
    """
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt < 0):
        raise ValueError("negative time increment")
    z = stream.normals(d)
    scale = np.sqrt(dt)
    if scale.ndim:
        scale = scale[:, None]
    return z * scale


def derive_child(stream: RandomStream, level: int, branch: int, role: int) -> RandomStream:
    return stream.child(level, branch, role)
