"""Multilevel Picard estimator, level schedule and cost model.

The estimator evaluates U_{n,m}(t, x) for a whole batch of recursion-tree
nodes at once: all m^{n-l} blocks of a level are drawn with one vectorised
call and the recursive sub-estimators are evaluated on the stacked
(time, point) batch.  Randomness is keyed by tree position (see
``random_kernels``), so the result equals a node-by-node depth-first
evaluation.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .problem import EstimateVector, PdeProblem
from .random_kernels import BLOCK, TERMINAL, RandomStream, RvCounter
from .stochastic_kernel import BrownianKernel, Kernel

__all__ = [
    "EstimationError",
    "MlpParams",
    "CostReport",
    "BatchResult",
    "MlpEstimator",
    "estimate",
    "estimate_with_cost",
    "m_schedule",
    "rv_count_closed_form",
    "rv_bound",
    "replicate_stream",
    "run_batch",
    "default_threads",
]

REPLICATE = 2
THREADS_ENV = "MLPHEAT_THREADS"


class EstimationError(ArithmeticError):
    """A non-finite value appeared inside the recursion."""

    def __init__(self, message, depth=None, level=None, branch=None):
        super().__init__(message)
        self.depth = depth
        self.level = level
        self.branch = branch


@dataclass(frozen=True)
class MlpParams:
    n: int
    m: int
    t: float
    x: np.ndarray

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("depth n must be >= 0")
        if self.m < 1:
            raise ValueError("base m must be >= 1")
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64).ravel())

    def check(self, problem: PdeProblem) -> None:
        if not 0 <= self.t < problem.T:
            raise ValueError(f"need 0 <= t < T, got t={self.t}, T={problem.T}")
        if self.x.shape != (problem.d,):
            raise ValueError(f"x must have length {problem.d}")


@dataclass
class CostReport:
    rv_count: int
    wall_time: float


def m_schedule(n: int) -> int:
    """Sample base M_n = floor(exp(sqrt(ln n)))."""
    if n < 1:
        raise ValueError("M_n is defined for n >= 1")
    return max(1, math.floor(math.exp(math.sqrt(math.log(n)))))


@lru_cache(maxsize=None)
def rv_count_closed_form(d: int, n: int, m: int) -> int:
    """Scalar random variables consumed by one evaluation of U_{n,m} in dimension d.

    Terminal block: d per sample.  Level block: one time fraction, d Gaussian
    components, plus the two recursive evaluations.
    """
    if n <= 0:
        return 0
    total = d * m**n
    for level in range(n):
        inner = d + 1 + rv_count_closed_form(d, level, m)
        if level >= 1:
            inner += rv_count_closed_form(d, level - 1, m)
        total += m ** (n - level) * inner
    return total


def rv_bound(d: int, n: int, m: int) -> int:
    """Upper bound 2 d (3m)^n (Python int, so no overflow)."""
    if n < 1 or m < 1:
        raise ValueError("bound stated for n, m >= 1")
    return 2 * d * (3 * m) ** n


class MlpEstimator:
    """Recursive evaluator of U_{n,m} for a fixed problem, kernel and base m."""

    def __init__(self, problem: PdeProblem, kernel: Kernel | None = None, m: int = 1,
                 coupled: bool = True):
        self.problem = problem
        self.kernel = kernel if kernel is not None else BrownianKernel(problem.T)
        if abs(self.kernel.T - problem.T) > 0:
            raise ValueError("kernel and problem horizons differ")
        self.m = int(m)
        # coupled=False draws a fresh (s, X) for the lower-level correction;
        # only used to demonstrate the variance reduction of the coupling
        self.coupled = coupled

    def __call__(self, stream: RandomStream, n: int, t, x) -> np.ndarray:
        """U_{n,m} at a batch of nodes; returns shape (B, d+1)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        return self._u(stream, n, t, x)

    def _u(self, stream: RandomStream, n: int, t: np.ndarray, x: np.ndarray) -> np.ndarray:
        B, d = x.shape
        out = np.zeros((B, d + 1))
        if n <= 0:
            return out
        g, f, m, T, kernel = self.problem.g, self.problem.f, self.m, self.problem.T, self.kernel

        gx = g(x)
        out[:, 0] = gx

        nt = m**n
        term = stream.spawn(0, -np.arange(1, nt + 1), TERMINAL)
        tt = np.repeat(t, nt)
        sample = kernel.sample_kernel(term, tt, np.repeat(x, nt, axis=0), np.full(B * nt, T))
        diff = (g(sample.x_point) - np.repeat(gx, nt)) / nt
        contrib = diff[:, None] * sample.z_weight
        self._check(contrib, n, 0, nt, "terminal")
        out += contrib.reshape(B, nt, d + 1).sum(axis=1)

        for level in range(n):
            nb = m ** (n - level)
            branches = np.arange(1, nb + 1)
            hi = stream.spawn(level, branches, BLOCK)
            tt = np.repeat(t, nb)
            xx = np.repeat(x, nb, axis=0)
            s = kernel.sample_time(hi, tt)
            sample = kernel.sample_kernel(hi, tt, xx, s)
            val = f(s, sample.x_point, self._u(hi, level, s, sample.x_point))
            lo = stream.spawn(level, -branches, BLOCK) if level >= 1 else None
            if lo is not None and self.coupled:
                # same (s, X) as the upper term, independent sub-stream
                val = val - f(s, sample.x_point, self._u(lo, level - 1, s, sample.x_point))
            contrib = (val * kernel.inverse_rho(tt, s) / nb)[:, None] * sample.z_weight
            if lo is not None and not self.coupled:
                s_lo = kernel.sample_time(lo, tt)
                other = kernel.sample_kernel(lo, tt, xx, s_lo)
                low = f(s_lo, other.x_point, self._u(lo, level - 1, s_lo, other.x_point))
                contrib -= (low * kernel.inverse_rho(tt, s_lo) / nb)[:, None] * other.z_weight
            self._check(contrib, n, level, nb, "block")
            out += contrib.reshape(B, nb, d + 1).sum(axis=1)
        return out

    @staticmethod
    def _check(contrib, depth, level, per_node, kind):
        if np.isfinite(contrib).all():
            return
        row = int(np.flatnonzero(~np.isfinite(contrib).all(axis=1))[0])
        branch = row % per_node + 1
        if kind == "terminal":
            branch = -branch
        raise EstimationError(
            f"non-finite {kind} contribution at depth {depth}, level {level}, "
            f"branch {branch} (batch member {row // per_node})",
            depth=depth, level=level, branch=branch,
        )


def estimate(stream: RandomStream, problem: PdeProblem, kernel: Kernel | None,
             params: MlpParams) -> EstimateVector:
    """One realisation of U_{n,m}(t, x); draws are charged to ``stream.counter``."""
    params.check(problem)
    est = MlpEstimator(problem, kernel, params.m)
    u = est(stream, params.n, params.t, params.x[None, :])
    return EstimateVector.from_array(u[0])


def estimate_with_cost(stream: RandomStream, problem: PdeProblem, kernel: Kernel | None,
                       params: MlpParams) -> tuple[EstimateVector, CostReport]:
    counter = RvCounter()
    start = time.perf_counter()
    value = estimate(stream.with_counter(counter), problem, kernel, params)
    return value, CostReport(counter.count, time.perf_counter() - start)


def replicate_stream(root_seed: int, index: int, tag: int = 0) -> RandomStream:
    """Root stream of replicate ``index`` under ``root_seed``.

    ``tag`` separates independent families of replicates under one seed
    (the experiment runner uses the depth n).
    """
    return RandomStream.root(root_seed).child(tag, index, REPLICATE)


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class BatchResult:
    """Per-replicate outcomes (EstimateVector or EstimationError) plus aggregate cost."""

    results: list
    cost: CostReport
    rv_counts: list[int] = field(default_factory=list)
    runtimes: list[float] = field(default_factory=list)

    @property
    def estimates(self) -> list[EstimateVector]:
        return [r for r in self.results if isinstance(r, EstimateVector)]

    @property
    def failures(self) -> list[EstimationError]:
        return [r for r in self.results if isinstance(r, EstimationError)]

    def as_array(self) -> np.ndarray:
        """(R_ok, d+1) array of the successful estimates."""
        return np.array([e.as_array() for e in self.estimates])


def run_batch(root_seed: int, problem: PdeProblem, kernel: Kernel | None, params: MlpParams,
              repetitions: int, threads: int | None = None, tag: int = 0) -> BatchResult:
    """``repetitions`` independent estimates; failures are recorded per replicate."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    params.check(problem)
    threads = default_threads() if threads is None else max(1, int(threads))

    def one(index):
        counter = RvCounter()
        stream = replicate_stream(root_seed, index, tag).with_counter(counter)
        start = time.perf_counter()
        try:
            value = estimate(stream, problem, kernel, params)
        except EstimationError as exc:
            value = exc
        return value, counter.count, time.perf_counter() - start

    start = time.perf_counter()
    if threads == 1 or repetitions == 1:
        outcomes = [one(i) for i in range(repetitions)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one, range(repetitions)))
    wall = time.perf_counter() - start
    counts = [c for _, c, _ in outcomes]
    return BatchResult(
        results=[v for v, _, _ in outcomes],
        cost=CostReport(sum(counts), wall),
        rv_counts=counts,
        runtimes=[rt for _, _, rt in outcomes],
    )
