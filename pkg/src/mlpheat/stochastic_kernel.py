"""Kernel pairs (X, Z) and the time-sampling density.

A kernel supplies the forward state ``X`` and the weight vector ``Z`` used by
the multilevel Picard estimator.  ``Z[0]`` is identically one (it carries the
value); ``Z[1:]`` has mean zero and carries the gradient.  Only the Brownian
kernel is shipped, but the estimator talks to the interface below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .random_kernels import RandomStream, gaussian_increment, sample_arcsine

__all__ = ["KernelSample", "Kernel", "BrownianKernel", "rho"]


@dataclass
class KernelSample:
    """Batched kernel realisation: times ``s`` (B,), ``x_point`` (B, d), ``z_weight`` (B, d+1)."""

    s: np.ndarray
    x_point: np.ndarray
    z_weight: np.ndarray


def rho(t, s, T):
    """Density of the arcsine time law on (t, T): 1 / (pi sqrt((T - s)(s - t)))."""
    t = np.asarray(t, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= t) or np.any(s >= T):
        raise ValueError("rho requires t < s < T")
    return 1.0 / (math.pi * np.sqrt((T - s) * (s - t)))


class Kernel:
    """Interface for a kernel pair on the horizon ``[0, T]``."""

    def __init__(self, T: float):
        if not T > 0:
            raise ValueError("horizon T must be positive")
        self.T = float(T)

    def rho(self, t, s):
        return rho(t, s, self.T)

    def inverse_rho(self, t, s):
        """1 / rho(t, s) without the range check; used on sampled times."""
        return math.pi * np.sqrt((self.T - s) * (s - t))

    def sample_time(self, stream: RandomStream, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if np.any(t >= self.T):
            raise ValueError("sample_time requires t < T")
        r = sample_arcsine(stream)
        s = t + (self.T - t) * r
        # The endpoint clamp on r can be lost to rounding when T - t is tiny.
        # If no float lies strictly inside (t, T) we return s = t; such a node
        # has zero weight 1/rho and a zero gradient weight.
        upper = np.nextafter(self.T, -np.inf)
        s = np.minimum(s, upper)
        return np.maximum(s, np.minimum(np.nextafter(t, np.inf), upper))

    def sample_kernel(self, stream: RandomStream, t, x, s) -> KernelSample:
        raise NotImplementedError


class BrownianKernel(Kernel):
    """X = x + (W_s - W_t),  Z = (1, (W_s - W_t) / (s - t))."""

    def sample_kernel(self, stream: RandomStream, t, x, s) -> KernelSample:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        s = np.broadcast_to(np.asarray(s, dtype=np.float64), (x.shape[0],))
        if np.any(s < t) or np.any(s > self.T):
            raise ValueError("sample_kernel requires t < s <= T")
        dt = s - t
        dw = gaussian_increment(stream, x.shape[1], dt)
        return self.from_increment(t, x, s, dw)

    @staticmethod
    def from_increment(t, x, s, dw) -> KernelSample:
        """Assemble a sample from a given increment (deterministic part of the kernel)."""
        dt = np.asarray(s - t, dtype=np.float64)
        z = np.empty((dw.shape[0], dw.shape[1] + 1))
        z[:, 0] = 1.0
        dt = np.broadcast_to(dt, (dw.shape[0],)).reshape(-1, 1)
        if np.all(dt > 0):
            np.divide(dw, dt, out=z[:, 1:])
        else:
            # s == t only for nodes with no representable time left; weight them zero
            z[:, 1:] = 0.0
            np.divide(dw, dt, out=z[:, 1:], where=dt > 0)
        return KernelSample(np.asarray(s, dtype=np.float64), x + dw, z)
