"""Numpy reference kernels. ``_ckernels.pyx`` mirrors these signatures.

Status codes returned by the flow kernels: 0 ok, 1 non-positive (or
non-finite) conformal factor, 2 non-positive f-mass.
"""
import numpy as np

OK, NONPOSITIVE_FACTOR, NONPOSITIVE_F_MASS = 0, 1, 2


def _laplacian(lap_off, lap_rowsum, u):
    # shifting by one nodal value makes constants map to exactly zero
    d = u - u[0]
    return lap_off @ d - lap_rowsum * d


def flow_rhs(lap_off, lap_rowsum, weights, f, u, n):
    """Right-hand side of du/dt = -(n-2)/4 (R - lam f) u.

    Returns ``(status, rhs, lam, E, fm)`` where ``E`` is the total curvature
    average and ``fm`` the average of ``f u^{2*}``.
    """
    if not np.all(u > 0.0):
        return NONPOSITIVE_FACTOR, None, np.nan, np.nan, np.nan
    ps = 2.0 * n / (n - 2)
    cn = 4.0 * (n - 1) / (n - 2)
    q = -cn * _laplacian(lap_off, lap_rowsum, u) + n * (n - 1.0) * u
    up = u**ps
    E = weights @ (q * u)
    fm = weights @ (f * up)
    if not fm > 0.0:
        return NONPOSITIVE_F_MASS, None, np.nan, E, fm
    lam = E / fm
    R = q * u / up
    return OK, -0.25 * (n - 2) * (R - lam * f) * u, lam, E, fm


def energy_terms(lap_off, lap_rowsum, weights, f, u, n):
    """``(E, fm)`` for the profile ``u``."""
    ps = 2.0 * n / (n - 2)
    cn = 4.0 * (n - 1) / (n - 2)
    q = -cn * _laplacian(lap_off, lap_rowsum, u) + n * (n - 1.0) * u
    return weights @ (q * u), weights @ (f * u**ps)


def rk4_step(lap_off, lap_rowsum, weights, f, u, n, dt, vol0):
    """One classical RK4 step followed by rescaling to volume ``vol0``.

    Returns ``(status, u_new, drift, E, fm)``: ``drift`` is the relative
    volume error before the rescaling, ``E`` and ``fm`` are evaluated at the
    rescaled ``u_new``.
    """
    nan = np.nan
    st, k1, *_ = flow_rhs(lap_off, lap_rowsum, weights, f, u, n)
    if st:
        return st, None, nan, nan, nan
    st, k2, *_ = flow_rhs(lap_off, lap_rowsum, weights, f, u + 0.5 * dt * k1, n)
    if st:
        return st, None, nan, nan, nan
    st, k3, *_ = flow_rhs(lap_off, lap_rowsum, weights, f, u + 0.5 * dt * k2, n)
    if st:
        return st, None, nan, nan, nan
    st, k4, *_ = flow_rhs(lap_off, lap_rowsum, weights, f, u + dt * k3, n)
    if st:
        return st, None, nan, nan, nan
    un = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(un > 0.0):
        return NONPOSITIVE_FACTOR, None, nan, nan, nan
    ps = 2.0 * n / (n - 2)
    vol = weights @ un**ps
    if vol != vol0:
        un = un * (vol0 / vol) ** (1.0 / ps)
    E, fm = energy_terms(lap_off, lap_rowsum, weights, f, un, n)
    if not fm > 0.0:
        return NONPOSITIVE_F_MASS, None, nan, E, fm
    return OK, un, vol / vol0 - 1.0, E, fm


def morse_enumerate(n, kmax, mmax):
    """Enumerate every ``k`` in ``[0, kmax]^n`` (with ``k_n = 0``) and tabulate
    the ``m`` vectors it produces through ``m_0 = 1 + k_0``,
    ``m_i = k_{i-1} + k_i``.

    Only ``m`` with all entries ``<= mmax`` are kept. ``m`` is encoded as
    ``sum_i m_i (mmax+1)^i`` and ``k`` as ``sum_i k_i (kmax+1)^i``.
    Returns ``(count, first_k)`` indexed by the ``m`` code; ``first_k`` is -1
    where no ``k`` maps to that ``m``.
    """
    kb, mb = kmax + 1, mmax + 1
    size = mb ** (n + 1)
    count = np.zeros(size, dtype=np.int64)
    first = np.full(size, -1, dtype=np.int64)
    if n == 0:
        return count, first
    k = np.indices((kb,) * n).reshape(n, -1)[::-1]  # row i holds k_i, k_0 fastest
    m = np.empty((n + 1, k.shape[1]), dtype=np.int64)
    m[0] = 1 + k[0]
    m[1:n] = k[:-1] + k[1:]
    m[n] = k[n - 1]
    keep = np.all(m <= mmax, axis=0)
    mcode = (mb ** np.arange(n + 1)) @ m[:, keep]
    kcode = (kb ** np.arange(n)) @ k[:, keep]
    np.add.at(count, mcode, 1)
    smallest = np.full(size, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(smallest, mcode, kcode)
    found = count > 0
    first[found] = smallest[found]
    return count, first
