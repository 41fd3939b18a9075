"""Axisymmetric spectral discretization of the round n-sphere.

Profiles are functions of the polar angle only, sampled in ``mu = cos(theta)``
at the Gauss nodes of the weight ``(1 - mu^2)^((n-2)/2)``, which is the
sphere's own volume element after integrating out the latitude spheres.
With this choice the quadrature returns averages over the sphere directly,
and the collocation Laplacian maps polynomials of degree < N to themselves,
so it is exact (up to rounding) on the discrete space.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import roots_jacobi


def critical_exponent(n: int) -> float:
    """Sobolev-critical power 2n/(n-2)."""
    return 2.0 * n / (n - 2)


def conformal_constant(n: int) -> float:
    """Coefficient 4(n-1)/(n-2) of the Laplacian in the conformal Laplacian."""
    return 4.0 * (n - 1) / (n - 2)


def round_curvature(n: int) -> float:
    return float(n * (n - 1))


@dataclass(frozen=True, eq=False)
class Grid:
    """Collocation grid on S^n for axisymmetric profiles.

    Attributes
    ----------
    n, N : int
        Sphere dimension and number of nodes.
    nodes : ndarray
        Increasing abscissae ``mu_j`` in (-1, 1).
    weights : ndarray
        Quadrature weights normalised so that averages of 1 equal 1.
    bary : ndarray
        Barycentric interpolation weights for ``nodes`` (arbitrary scale).
    d1 : ndarray
        First-derivative collocation matrix in ``mu``.
    lap_off, lap_rowsum : ndarray
        Off-diagonal part of the Laplace-Beltrami matrix and its row sums.
        The Laplacian is applied as ``lap_off @ d - lap_rowsum * d`` with
        ``d = p - p[0]``, so constants are annihilated exactly.
    """

    n: int
    N: int
    nodes: np.ndarray
    weights: np.ndarray
    bary: np.ndarray
    d1: np.ndarray
    lap_off: np.ndarray
    lap_rowsum: np.ndarray

    @property
    def sin2(self) -> np.ndarray:
        return 1.0 - self.nodes**2

    @property
    def spectral_radius(self) -> float:
        """Largest Laplacian eigenvalue magnitude representable on the grid."""
        return float((self.N - 1) * (self.N + self.n - 2))


def _barycentric_weights(x: np.ndarray) -> np.ndarray:
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    # products over N factors overflow for N ~ 256; work with logs
    logabs = np.log(np.abs(diff)).sum(axis=1)
    sign = np.prod(np.sign(diff), axis=1)
    return sign * np.exp(-(logabs - logabs.mean()))


def _differentiation_matrix(x: np.ndarray, bary: np.ndarray) -> np.ndarray:
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    d = (bary[None, :] / bary[:, None]) / diff
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -d.sum(axis=1))
    return d


def _second_derivative_matrix(x: np.ndarray, d1: np.ndarray) -> np.ndarray:
    # built directly from d1 entries; squaring d1 loses about a digit more
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    d2 = 2.0 * d1 * (np.diag(d1)[:, None] - 1.0 / diff)
    np.fill_diagonal(d2, 0.0)
    np.fill_diagonal(d2, -d2.sum(axis=1))
    return d2


@lru_cache(maxsize=32)
def build_grid(n: int, N: int = 256) -> Grid:
    """Gauss collocation grid for axisymmetric profiles on S^n.

    Raises ``ValueError`` for ``n < 3`` or ``N < 8``.
    """
    if int(n) != n or n < 3:
        raise ValueError(f"sphere dimension must be an integer >= 3, got {n}")
    if int(N) != N or N < 8:
        raise ValueError(f"node count must be an integer >= 8, got {N}")
    n, N = int(n), int(N)
    alpha = (n - 2) / 2.0
    x, w = roots_jacobi(N, alpha, alpha)
    order = np.argsort(x)
    x, w = x[order], w[order]
    w = w / w.sum()

    bary = _barycentric_weights(x)
    d1 = _differentiation_matrix(x, bary)
    lap = (1.0 - x**2)[:, None] * _second_derivative_matrix(x, d1) - n * x[:, None] * d1
    np.fill_diagonal(lap, 0.0)
    rowsum = lap @ np.ones(N)

    for arr in (x, w, bary, d1, lap, rowsum):
        arr.setflags(write=False)
    return Grid(n=n, N=N, nodes=x, weights=w, bary=bary, d1=d1, lap_off=lap, lap_rowsum=rowsum)


def check_profile(p, grid: Grid, name: str = "profile") -> np.ndarray:
    """Return ``p`` as a float array, validating length and finiteness."""
    arr = np.asarray(p, dtype=float)
    if arr.shape != (grid.N,):
        raise ValueError(f"{name} has shape {arr.shape}, expected ({grid.N},)")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite values")
    return arr


def quad_average(p, grid: Grid) -> float:
    """Average of ``p`` over S^n with respect to the round measure."""
    return float(grid.weights @ check_profile(p, grid))


def derivative(p, grid: Grid) -> np.ndarray:
    """d p / d mu at the nodes."""
    return grid.d1 @ check_profile(p, grid)


def laplace_beltrami(p, grid: Grid) -> np.ndarray:
    """Round Laplace-Beltrami operator, ``(1 - mu^2) p'' - n mu p'``."""
    p = check_profile(p, grid)
    d = p - p[0]
    return grid.lap_off @ d - grid.lap_rowsum * d


def gradient_sq(p, grid: Grid) -> np.ndarray:
    """Squared round gradient norm, ``(1 - mu^2) p'(mu)^2``."""
    return grid.sin2 * derivative(p, grid) ** 2


def interpolate(p, grid: Grid, targets) -> np.ndarray:
    """Barycentric interpolation of the nodal profile ``p`` at ``targets`` in [-1, 1]."""
    p = check_profile(p, grid)
    t = np.atleast_1d(np.asarray(targets, dtype=float))
    if np.any(np.abs(t) > 1.0 + 1e-12):
        raise ValueError("interpolation targets must lie in [-1, 1]")
    diff = t[:, None] - grid.nodes[None, :]
    hit = diff == 0.0
    diff[hit] = 1.0
    c = grid.bary[None, :] / diff
    out = (c @ p) / c.sum(axis=1)
    rows, cols = np.nonzero(hit)
    out[rows] = p[cols]
    return out


def pole_values(p, grid: Grid) -> tuple[float, float]:
    """Extrapolated values ``(p(south), p(north))`` at mu = -1 and mu = +1."""
    south, north = interpolate(p, grid, [-1.0, 1.0])
    return float(south), float(north)


def extended_values(p, grid: Grid) -> np.ndarray:
    """Nodal values with the two pole extrapolations appended."""
    p = check_profile(p, grid)
    return np.concatenate([p, pole_values(p, grid)])


def pole_laplacian(p, grid: Grid) -> tuple[float, float]:
    """``(Delta p(south), Delta p(north))``; at the poles ``Delta p = -n mu p'``."""
    ds, dn = interpolate(derivative(p, grid), grid, [-1.0, 1.0])
    return float(grid.n * ds), float(-grid.n * dn)


def extrema(p, grid: Grid) -> tuple[float, float]:
    """``(min, max)`` of the interpolant of ``p`` over [-1, 1].

    Candidates are the poles, the nodes and every root of ``p'`` between
    neighbouring sample points where ``p'`` changes sign.
    """
    p = check_profile(p, grid)
    dp = derivative(p, grid)
    xs = np.concatenate([[-1.0], grid.nodes, [1.0]])
    ds = np.concatenate([interpolate(dp, grid, [-1.0]), dp, interpolate(dp, grid, [1.0])])
    vals = list(extended_values(p, grid))
    slope = lambda t: float(interpolate(dp, grid, [t])[0])
    for i in np.nonzero(ds[:-1] * ds[1:] < 0.0)[0]:
        root = brentq(slope, xs[i], xs[i + 1], xtol=1e-15)
        vals.append(float(interpolate(p, grid, [root])[0]))
    return float(min(vals)), float(max(vals))
