"""Deterministic reference solver for low-dimensional problems.

``picard_solve`` iterates the fixed-point map

    u(t, x) = E[g(X_T) Z_T] + int_t^T E[f(r, X_r, u(r, X_r)) Z_r] dr

with every expectation replaced by quadrature:

* Gaussian expectations over X_r = x + sqrt(r - t) xi use tensor
  Gauss-Hermite nodes; the gradient slots carry the weight xi / sqrt(r - t);
* the time integral uses r = t + (T - t) sin^2(pi v / 2), which turns dr into
  dv / rho(t, r), followed by Gauss-Legendre in v;
* between iterations the composite F(r, y) = f(r, y, u(r, y)) lives on a
  tensor grid: global Chebyshev in time, piecewise Chebyshev in space, with
  barycentric interpolation.  Points outside the spatial box are clamped to
  its boundary.

``nested_mc_reference`` is a brute-force Monte-Carlo alternative that uses
numpy's own generator, so it shares no code path with the MLP estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss

from .problem import EstimateVector, PdeProblem

__all__ = [
    "QuadratureGrid",
    "OracleConvergenceError",
    "picard_history",
    "picard_solve",
    "nested_mc_reference",
    "chebyshev_nodes",
    "PanelBasis",
    "interpolation_matrix",
]


class OracleConvergenceError(RuntimeError):
    """Successive Picard iterates still differ by more than the tolerance."""


@dataclass(frozen=True)
class QuadratureGrid:
    q_x: int = 80            # Gauss-Hermite order per space dimension
    q_s: int = 64            # Gauss-Legendre order in the transformed time variable
    picard_levels: int = 16  # K
    n_time: int = 16         # Chebyshev nodes in time
    n_space: int | None = None  # Chebyshev nodes per panel and space dimension
    n_panels: int | None = None  # panels per space dimension
    box_sigmas: float = 6.0  # half-width of the spatial box in units of sqrt(T)
    tol: float = 1e-8

    def space_layout(self, d: int) -> tuple[int, int]:
        """(panels, nodes per panel) for dimension d; defaults 6 x 24 (d=1), 4 x 12 (d=2)."""
        panels = self.n_panels if self.n_panels is not None else (6 if d == 1 else 4)
        nodes = self.n_space if self.n_space is not None else (24 if d == 1 else 12)
        return panels, nodes

    def hermite(self):
        """Nodes xi and weights for E[h(xi)], xi ~ N(0, 1); weights sum to one."""
        z, w = hermgauss(self.q_x)
        return math.sqrt(2.0) * z, w / math.sqrt(math.pi)

    def time_rule(self):
        """Gauss-Legendre nodes and weights on (0, 1); weights sum to one."""
        v, w = leggauss(self.q_s)
        return 0.5 * (v + 1.0), 0.5 * w


def chebyshev_nodes(n: int, lo: float, hi: float):
    """First-kind Chebyshev nodes on (lo, hi) and their barycentric weights."""
    k = np.arange(n)
    theta = (2 * k + 1) * np.pi / (2 * n)
    nodes = 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(theta)
    weights = (-1.0) ** k * np.sin(theta)
    return nodes, weights


class PanelBasis:
    """Piecewise Chebyshev interpolation on equal panels of [lo, hi].

    Panels keep interpolation local, so the crude clamp at the box edge
    cannot pollute interior values the way a single global polynomial would.
    """

    def __init__(self, lo: float, hi: float, panels: int, per_panel: int):
        self.lo, self.hi, self.panels, self.per_panel = float(lo), float(hi), panels, per_panel
        self.edges = np.linspace(lo, hi, panels + 1)
        local, self.bary = chebyshev_nodes(per_panel, -1.0, 1.0)
        mid = 0.5 * (self.edges[:-1] + self.edges[1:])
        half = 0.5 * (self.edges[1] - self.edges[0])
        self.local = local
        self.nodes = (mid[:, None] + half * local[None, :]).ravel()

    @property
    def size(self) -> int:
        return self.nodes.size

    def matrix(self, points) -> np.ndarray:
        """Interpolation rows (len(points), size); points outside are clamped."""
        points = np.clip(np.asarray(points, dtype=np.float64).ravel(), self.lo, self.hi)
        width = self.edges[1] - self.edges[0]
        idx = np.clip(((points - self.lo) / width).astype(np.int64), 0, self.panels - 1)
        mid = self.lo + (idx + 0.5) * width
        local = interpolation_matrix(self.local, self.bary, (points - mid) / (0.5 * width))
        out = np.zeros((points.size, self.size))
        cols = idx[:, None] * self.per_panel + np.arange(self.per_panel)[None, :]
        np.put_along_axis(out, cols, local, axis=1)
        return out


def interpolation_matrix(nodes, weights, points, lo=None, hi=None) -> np.ndarray:
    """Rows of barycentric interpolation weights, shape (len(points), len(nodes))."""
    points = np.asarray(points, dtype=np.float64).ravel()
    if lo is not None or hi is not None:
        points = np.clip(points, lo, hi)
    diff = points[:, None] - nodes[None, :]
    exact = diff == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = weights[None, :] / diff
        mat = terms / terms.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    if hit.any():
        mat[hit] = exact[hit].astype(np.float64)
    return mat


class _Discretisation:
    """Grid, interpolation and quadrature data shared by all Picard sweeps."""

    def __init__(self, problem: PdeProblem, grid: QuadratureGrid, t_lo: float, centre: np.ndarray,
                 spread: np.ndarray):
        d, T = problem.d, problem.T
        self.problem, self.grid, self.d, self.T = problem, grid, d, T
        half = grid.box_sigmas * math.sqrt(T)
        self.lo = centre - spread - half
        self.hi = centre + spread + half
        panels, per_panel = grid.space_layout(d)
        self.space = [PanelBasis(self.lo[i], self.hi[i], panels, per_panel) for i in range(d)]
        n_space = self.space[0].size
        self.time_nodes, self.time_w = chebyshev_nodes(grid.n_time, t_lo, T)
        self.t_lo = t_lo
        self.xi, self.wxi = grid.hermite()
        self.v, self.wv = grid.time_rule()
        self.n_space = n_space
        self._grid_kernels = {}
        self._grid_terminal = {}

    # grid helpers ---------------------------------------------------------
    def grid_points(self) -> np.ndarray:
        """Spatial grid points, shape (n_space**d, d), C order over dimensions."""
        axes = [basis.nodes for basis in self.space]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def composite(self, u_grid: np.ndarray) -> np.ndarray:
        """F on the grid: f(tau_a, y_k, u(tau_a, y_k)); u_grid shape (n_time, P, d+1)."""
        pts = self.grid_points()
        nt, P = u_grid.shape[:2]
        t = np.repeat(self.time_nodes, P)
        x = np.tile(pts, (nt, 1))
        return self.problem.f(t, x, u_grid.reshape(nt * P, -1)).reshape(nt, P)

    def times(self, t):
        """Quadrature times r_j and weights c_j = omega_j / rho(t, r_j)."""
        T = self.T
        r = t + (T - t) * np.sin(0.5 * np.pi * self.v) ** 2
        c = self.wv * math.pi * np.sqrt((r - t) * (T - r))
        return r, c

    def space_kernels(self, sigma: float, dim: int, points: np.ndarray):
        """Value and gradient smoothing matrices in one dimension.

        Entry [k, l] of the value matrix is E[ell_l(points_k + sigma xi)]; the
        gradient matrix carries the extra factor xi / sigma.
        """
        basis = self.space[dim]
        y = points[:, None] + sigma * self.xi[None, :]
        L = basis.matrix(y).reshape(points.size, self.xi.size, basis.size)
        k0 = np.einsum("q,kql->kl", self.wxi, L)
        k1 = np.einsum("q,kql->kl", self.wxi * self.xi / sigma, L)
        return k0, k1

    def terminal(self, t: float, points: np.ndarray) -> np.ndarray:
        """(g(x), 0) + E[(g(X_T) - g(x)) Z_T] at each point (P, d); result (P, d+1)."""
        d, T = self.d, self.T
        sigma = math.sqrt(T - t)
        mesh = np.meshgrid(*([self.xi] * d), indexing="ij")
        xi = np.stack([m.ravel() for m in mesh], axis=1)  # (Q, d)
        wq = np.ones(1)
        for _ in range(d):
            wq = np.multiply.outer(wq, self.wxi).ravel()
        P = points.shape[0]
        gx = self.problem.g(points)
        y = points[:, None, :] + sigma * xi[None, :, :]
        gy = self.problem.g(y.reshape(-1, d)).reshape(P, -1) - gx[:, None]
        out = np.empty((P, d + 1))
        out[:, 0] = gx + gy @ wq
        out[:, 1:] = (gy * wq[None, :]) @ xi / sigma
        return out

    # one sweep ------------------------------------------------------------
    def sweep_grid(self, F: np.ndarray) -> np.ndarray:
        """Apply the fixed-point map on every grid node; F shape (n_time, P)."""
        d, n = self.d, self.n_space
        pts1 = [basis.nodes for basis in self.space]
        grid_pts = self.grid_points()
        out = np.empty((self.time_nodes.size, grid_pts.shape[0], d + 1))
        for a, tau in enumerate(self.time_nodes):
            r, c = self.times(tau)
            Lt = interpolation_matrix(self.time_nodes, self.time_w, r)  # (q_s, n_time)
            G = (Lt @ F).reshape((r.size,) + (n,) * d)
            if a not in self._grid_terminal:
                self._grid_terminal[a] = self.terminal(tau, grid_pts)
            acc = self._grid_terminal[a].copy()
            for j in range(r.size):
                kernels = self._grid_kernels.get((a, j))
                if kernels is None:
                    sigma = math.sqrt(r[j] - tau)
                    kernels = [self.space_kernels(sigma, i, pts1[i]) for i in range(d)]
                    self._grid_kernels[(a, j)] = kernels
                acc += c[j] * _apply(G[j], kernels).reshape(grid_pts.shape[0], d + 1)
            out[a] = acc
        return out

    def sweep_points(self, F: np.ndarray, t_eval: np.ndarray, x_eval: np.ndarray) -> np.ndarray:
        """Apply the fixed-point map at arbitrary points (exact in (t, x), interpolated inside)."""
        d, n = self.d, self.n_space
        out = np.empty((t_eval.size, d + 1))
        for p, (t, x) in enumerate(zip(t_eval, x_eval)):
            r, c = self.times(t)
            Lt = interpolation_matrix(self.time_nodes, self.time_w, r)
            G = (Lt @ F).reshape((r.size,) + (n,) * d)
            acc = self.terminal(t, x[None, :])[0]
            for j in range(r.size):
                sigma = math.sqrt(r[j] - t)
                kernels = [self.space_kernels(sigma, i, x[i:i + 1]) for i in range(d)]
                acc += c[j] * _apply(G[j], kernels).reshape(d + 1)
            out[p] = acc
        return out


def _apply(G: np.ndarray, kernels) -> np.ndarray:
    """Smooth grid values G (n,)*d with per-dimension kernels; returns (..., d+1)."""
    d = len(kernels)
    slots = []
    for slot in range(d + 1):
        res = G
        for dim in range(d):
            k0, k1 = kernels[dim]
            mat = k1 if slot == dim + 1 else k0
            res = np.tensordot(mat, res, axes=([1], [dim]))
            res = np.moveaxis(res, 0, dim)
        slots.append(res)
    return np.stack(slots, axis=-1)


def picard_history(problem: PdeProblem, grid: QuadratureGrid, eval_points) -> np.ndarray:
    """Iterates u^(0..K) at the evaluation points, shape (K+1, P, d+1)."""
    if problem.d > 2:
        raise ValueError("picard quadrature supports d <= 2")
    t_eval, x_eval = _split_points(problem, eval_points)
    centre = 0.5 * (x_eval.min(axis=0) + x_eval.max(axis=0))
    spread = 0.5 * (x_eval.max(axis=0) - x_eval.min(axis=0))
    disc = _Discretisation(problem, grid, float(t_eval.min()), centre, spread)

    K = grid.picard_levels
    P = disc.grid_points().shape[0]
    history = np.zeros((K + 1, t_eval.size, problem.d + 1))
    u_grid = np.zeros((grid.n_time, P, problem.d + 1))
    for k in range(1, K + 1):
        F = disc.composite(u_grid)
        history[k] = disc.sweep_points(F, t_eval, x_eval)
        if k < K:
            u_grid = disc.sweep_grid(F)
    return history


def picard_solve(problem: PdeProblem, grid: QuadratureGrid | None = None, eval_points=((0.0, None),),
                 require_convergence: bool = True) -> list[EstimateVector]:
    """u^(K) at each (t, x) in ``eval_points`` (``x=None`` means the origin).

    With ``require_convergence`` the last two iterates must agree to
    ``grid.tol`` in the sup norm, otherwise ``OracleConvergenceError``.
    """
    grid = grid or QuadratureGrid()
    history = picard_history(problem, grid, eval_points)
    if require_convergence and grid.picard_levels >= 1:
        gap = float(np.max(np.abs(history[-1] - history[-2])))
        if not gap < grid.tol:
            raise OracleConvergenceError(
                f"last Picard update {gap:.3e} exceeds tolerance {grid.tol:.1e}; "
                "increase picard_levels or the quadrature orders"
            )
    return [EstimateVector.from_array(u) for u in history[-1]]


def _split_points(problem: PdeProblem, eval_points):
    ts, xs = [], []
    for t, x in eval_points:
        x = np.zeros(problem.d) if x is None else np.asarray(x, dtype=np.float64).ravel()
        if x.shape != (problem.d,):
            raise ValueError("evaluation point has wrong dimension")
        if not 0 <= t < problem.T:
            raise ValueError("evaluation time must lie in [0, T)")
        ts.append(float(t))
        xs.append(x)
    return np.array(ts), np.array(xs)


def nested_mc_reference(problem: PdeProblem, t: float, x, depth: int,
                        samples: int | Sequence[int], seed: int = 0,
                        return_se: bool = False):
    """Plain nested Monte-Carlo for the depth-``depth`` Picard iterate at (t, x).

    ``samples`` is either one count used at every nesting level or a sequence
    of counts, outermost first.  Each level draws that many terminal samples
    and that many arcsine-distributed times.  With ``return_se`` the standard
    error of the outer average is returned as well.
    """
    if depth > 3:
        raise ValueError("nested Monte-Carlo is limited to depth <= 3")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if isinstance(samples, (int, np.integer)):
        counts = [int(samples)] * max(depth, 1)
    else:
        counts = [int(s) for s in samples]
        if len(counts) < depth:
            raise ValueError("need one sample count per nesting level")
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64).reshape(1, problem.d)
    if depth == 0:
        zero = EstimateVector.from_array(np.zeros(problem.d + 1))
        return (zero, np.zeros(problem.d + 1)) if return_se else zero
    terms = _nested_terms(problem, rng, depth, counts, np.array([float(t)]), x)[0]  # (N, d+1)
    est = terms.mean(axis=0)
    result = EstimateVector.from_array(est)
    if return_se:
        return result, terms.std(axis=0, ddof=1) / math.sqrt(terms.shape[0])
    return result


_CHUNK = 1 << 18


def _nested_terms(problem, rng, depth, counts, t, x):
    """Per-sample summands (B, N, d+1) whose mean over N is the depth-``depth`` iterate."""
    B, d = x.shape
    N = counts[0]
    T = problem.T
    gx = problem.g(x)
    dt = (T - t)[:, None, None]
    dw = rng.standard_normal((B, N, d)) * np.sqrt(dt)
    gT = problem.g((x[:, None, :] + dw).reshape(-1, d)).reshape(B, N) - gx[:, None]
    terms = np.empty((B, N, d + 1))
    terms[..., 0] = gx[:, None] + gT
    terms[..., 1:] = gT[..., None] * dw / dt

    r = rng.beta(0.5, 0.5, size=(B, N))
    s = t[:, None] + (T - t)[:, None] * r
    s = np.clip(s, np.nextafter(t, np.inf)[:, None], np.nextafter(T, -np.inf))
    h = (s - t[:, None])[..., None]
    dw = rng.standard_normal((B, N, d)) * np.sqrt(h)
    X = (x[:, None, :] + dw).reshape(-1, d)
    s_flat = s.ravel()
    if depth - 1 >= 1:
        inner = np.empty((B * N, d + 1))
        chunk = max(1, _CHUNK // int(np.prod(counts[1:depth])))
        for lo in range(0, B * N, chunk):
            hi = min(lo + chunk, B * N)
            inner[lo:hi] = _nested_terms(problem, rng, depth - 1, counts[1:], s_flat[lo:hi],
                                         X[lo:hi]).mean(axis=1)
    else:
        inner = np.zeros((B * N, d + 1))
    F = problem.f(s_flat, X, inner).reshape(B, N)
    weight = F * math.pi * np.sqrt((T - s) * (s - t[:, None]))
    terms[..., 0] += weight
    terms[..., 1:] += weight[..., None] * dw / h
    return terms
