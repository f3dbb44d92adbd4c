"""Problem definitions: terminal condition g, nonlinearity f, dimension, horizon.

Callables are vectorised over a leading batch axis:

* ``g(x)`` takes ``x`` of shape (B, d) and returns (B,);
* ``f(t, x, w)`` takes ``t`` (B,), ``x`` (B, d) and ``w`` (B, d+1) and returns (B,).

The slots of ``w`` are (value, d/dx_1, ..., d/dx_d).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "PdeProblem",
    "EstimateVector",
    "example_sin_mean",
    "example_cos_grad",
    "linear_probe",
    "zero_nonlinearity",
    "ridge_reduction",
    "RidgeReduction",
    "REGISTRY",
    "make_problem",
]


@dataclass(frozen=True)
class PdeProblem:
    d: int
    T: float
    g: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    label: str
    # exact fixed point (t, x) -> (d+1,) when known in closed form
    exact: Optional[Callable[[float, np.ndarray], np.ndarray]] = field(default=None, compare=False)
    # unit-free direction e when the solution depends on x only through e . x
    ridge_direction: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if not self.T > 0:
            raise ValueError("horizon must be positive")

    def g1(self, x) -> float:
        """Terminal condition at a single point."""
        return float(self.g(np.asarray(x, dtype=np.float64).reshape(1, self.d))[0])

    def f1(self, t, x, w) -> float:
        """Nonlinearity at a single point."""
        return float(
            self.f(
                np.array([t], dtype=np.float64),
                np.asarray(x, dtype=np.float64).reshape(1, self.d),
                np.asarray(w, dtype=np.float64).reshape(1, self.d + 1),
            )[0]
        )


@dataclass(frozen=True)
class EstimateVector:
    """Approximation of (v, grad v) at one point."""

    value: float
    gradient: np.ndarray

    @classmethod
    def from_array(cls, u) -> "EstimateVector":
        u = np.asarray(u, dtype=np.float64).ravel()
        return cls(float(u[0]), u[1:].copy())

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.value], self.gradient])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.value) and np.all(np.isfinite(self.gradient)))


def example_sin_mean(d: int, T: float = 1.0) -> PdeProblem:
    """f(w) = sin((w_0 + ... + w_d) / d),  g(x) = sin((x_1 + ... + x_d) / d)."""

    def g(x):
        return np.sin(x.sum(axis=1) / d)

    def f(t, x, w):
        return np.sin(w.sum(axis=1) / d)

    return PdeProblem(d, T, g, f, "sin_mean", ridge_direction=np.ones(d))


def example_cos_grad(d: int, T: float = 1.0) -> PdeProblem:
    """f(w) = cos(w_1) (first gradient slot),  g(x) = sin(|x|^2 / d)."""

    def g(x):
        return np.sin(np.einsum("ij,ij->i", x, x) / d)

    def f(t, x, w):
        return np.cos(w[:, 1])

    return PdeProblem(d, T, g, f, "cos_grad")


def linear_probe(d: int, T: float = 1.0, a=None, c0: float = 0.0) -> PdeProblem:
    """Constant nonlinearity ``c0`` and linear terminal condition ``a . x``.

    The fixed point is ``(a . x + c0 (T - t), a)``.
    """
    a = np.ones(d) if a is None else np.asarray(a, dtype=np.float64).ravel()
    if a.shape != (d,):
        raise ValueError("a must have length d")
    c0 = float(c0)

    def g(x):
        return x @ a

    def f(t, x, w):
        return np.full(x.shape[0], c0)

    def exact(t, x):
        x = np.asarray(x, dtype=np.float64).ravel()
        return np.concatenate([[x @ a + c0 * (T - t)], a])

    return PdeProblem(d, T, g, f, "linear_probe", exact)


def zero_nonlinearity(d: int, T: float, g: Callable, label: str = "heat") -> PdeProblem:
    """f = 0: the fixed point is the plain heat-semigroup expectation of g."""

    def f(t, x, w):
        return np.zeros(x.shape[0])

    return PdeProblem(d, T, g, f, label)


@dataclass(frozen=True)
class RidgeReduction:
    """One-dimensional reduction of a problem whose solution depends on x only via e . x."""

    problem: PdeProblem
    direction: np.ndarray

    def project(self, x) -> np.ndarray:
        return np.atleast_1d(np.asarray(x, dtype=np.float64) @ self.direction)

    def lift(self, u1) -> np.ndarray:
        u1 = np.asarray(u1, dtype=np.float64).ravel()
        return np.concatenate([[u1[0]], u1[1] * self.direction])


def ridge_reduction(problem: PdeProblem, direction=None) -> RidgeReduction:
    """Reduce ``problem`` to one space dimension along the unit vector ``direction``.

    Exact when g(x) and f(t, x, (w_0, w_1 e)) depend on x only through e . x,
    as for ``sin_mean``: the Brownian motion projected on e is again standard.
    """
    d = problem.d
    if direction is None:
        direction = problem.ridge_direction
    if direction is None:
        raise ValueError(f"problem {problem.label!r} has no ridge direction")
    e = np.asarray(direction, dtype=np.float64).ravel()
    e = e / np.linalg.norm(e)

    def g(y):
        return problem.g(y[:, :1] * e[None, :])

    def f(t, y, w):
        full = np.empty((w.shape[0], d + 1))
        full[:, 0] = w[:, 0]
        full[:, 1:] = w[:, 1:2] * e[None, :]
        return problem.f(t, y[:, :1] * e[None, :], full)

    reduced = PdeProblem(1, problem.T, g, f, problem.label + "_ridge")
    return RidgeReduction(reduced, e)


REGISTRY: dict[str, Callable[..., PdeProblem]] = {
    "sin_mean": example_sin_mean,
    "cos_grad": example_cos_grad,
    "linear_probe": linear_probe,
}


def make_problem(label: str, d: int, T: float = 1.0, **kwargs) -> PdeProblem:
    try:
        factory = REGISTRY[label]
    except KeyError:
        raise KeyError(f"unknown problem {label!r}; known: {sorted(REGISTRY)}") from None
    return factory(d, T, **kwargs)
