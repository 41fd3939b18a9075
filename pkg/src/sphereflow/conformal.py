"""Moebius dilations along the symmetry axis and center-of-mass normalization.

A dilation with parameter ``eps`` and pole ``p`` acts in the stereographic
coordinate ``rho`` measured from the antipode ``-p`` as ``rho -> eps * rho``.
For ``eps < 1`` it pulls volume toward ``p``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import NonpositiveFactorError, RootNotBracketedError
from .sphere import Grid, check_profile, critical_exponent, interpolate

SZ_TOL = 1e-10
MAX_ITER = 200
EPS_RANGE = (1e-8, 1e8)


@dataclass(frozen=True)
class Dilation:
    eps: float
    pole: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.eps) and self.eps > 0.0):
            raise ValueError(f"dilation parameter must be positive and finite, got {self.eps}")
        if self.pole not in (1, -1):
            raise ValueError(f"pole must be +1 or -1, got {self.pole}")

    def inverse(self) -> "Dilation":
        return Dilation(1.0 / self.eps, self.pole)

    def toward_north(self) -> float:
        """Equivalent parameter for a dilation with pole +1."""
        return self.eps if self.pole == 1 else 1.0 / self.eps


@dataclass(frozen=True, eq=False)
class NormalizationResult:
    """``v`` has zero center of mass; ``eps`` is the north-pole parameter used."""

    v: np.ndarray
    eps: float
    residual: float

    @property
    def dilation(self) -> Dilation:
        return Dilation(self.eps, 1)


def dilation_map(d: Dilation, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Image latitudes and Jacobian determinant of ``d`` at the grid nodes."""
    e2 = d.eps * d.eps
    x = d.pole * grid.nodes
    a = e2 * (1.0 + x)
    b = 1.0 - x
    mu_img = d.pole * (a - b) / (a + b)
    jac = (2.0 * d.eps / ((1.0 + e2) - (1.0 - e2) * x)) ** grid.n
    return mu_img, jac


def bubble(d: Dilation, grid: Grid) -> np.ndarray:
    """Conformal factor of the pullback of the round metric by ``d``."""
    _, jac = dilation_map(d, grid)
    return jac ** (1.0 / critical_exponent(grid.n))


def pullback(u, d: Dilation, grid: Grid) -> np.ndarray:
    """Conformal factor of the pullback metric, ``u(phi) * J^((n-2)/(2n))``."""
    u = check_profile(u, grid, "u")
    if d.eps == 1.0:
        return u.copy()
    mu_img, jac = dilation_map(d, grid)
    assert np.all(np.abs(mu_img) <= 1.0)
    return interpolate(u, grid, mu_img) * jac ** ((grid.n - 2) / (2.0 * grid.n))


def center_of_mass(u, grid: Grid) -> float:
    """Axis component of the center of mass of the metric with factor ``u``."""
    u = check_profile(u, grid, "u")
    if not np.all(u > 0.0):
        raise NonpositiveFactorError("conformal factor must be positive")
    m = grid.weights * u ** critical_exponent(grid.n)
    return float((m @ grid.nodes) / m.sum())


def normalize(u, grid: Grid) -> NormalizationResult:
    """Dilate ``u`` along the axis so that its center of mass is zero.

    The root is found in ``log(eps)``. The bracket is grown geometrically
    from ``eps = 1`` toward the side indicated by the current center of mass.
    """
    u = check_profile(u, grid, "u")
    s0 = center_of_mass(u, grid)
    if abs(s0) <= SZ_TOL:
        return NormalizationResult(u.copy(), 1.0, abs(s0))

    def sz(log_eps):
        return center_of_mass(pullback(u, Dilation(math.exp(log_eps)), grid), grid)

    # mass near north (s0 > 0) is pushed back by eps > 1
    direction = 1.0 if s0 > 0 else -1.0
    limit = math.log(EPS_RANGE[1])
    lo, s_lo = 0.0, s0
    step = math.log(10.0)
    hi = None
    while abs(lo) < limit:
        cand = direction * min(abs(lo) + step, limit)
        s_c = sz(cand)
        if s_c == 0.0 or (s_c > 0) != (s0 > 0):
            hi = cand
            break
        lo, s_lo = cand, s_c
    if hi is None:
        raise RootNotBracketedError(
            f"center of mass keeps its sign for eps up to {EPS_RANGE[1]:g} (last value {s_lo:.3e})"
        )
    a, b = sorted((lo, hi))
    root = brentq(sz, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=MAX_ITER)
    eps = math.exp(root)
    v = pullback(u, Dilation(eps), grid)
    return NormalizationResult(v, eps, abs(center_of_mass(v, grid)))
