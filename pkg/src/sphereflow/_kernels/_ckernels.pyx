# Compiled versions of the hot kernels in _pykernels.py (same signatures).
import numpy as np

from libc.math cimport pow
from scipy.linalg.cython_blas cimport dgemv

cdef enum:
    OK = 0
    NONPOSITIVE_FACTOR = 1
    NONPOSITIVE_F_MASS = 2


cdef void _laplacian(const double[:, ::1] L, const double[::1] rs, const double[::1] u,
                     double[::1] d, double[::1] out) noexcept nogil:
    # shifting by one nodal value makes constants map to exactly zero
    cdef int i, N = <int>u.shape[0], one = 1
    cdef double u0 = u[0], alpha = 1.0, beta = 0.0
    cdef char trans = b'T'
    for i in range(N):
        d[i] = u[i] - u0
    # row-major L is column-major L^T, so 'T' applies L itself
    dgemv(&trans, &N, &N, &alpha, <double*>&L[0, 0], &N, &d[0], &one, &beta, &out[0], &one)
    for i in range(N):
        out[i] = out[i] - rs[i] * d[i]


cdef int _rhs(const double[:, ::1] L, const double[::1] rs, const double[::1] w,
              const double[::1] f, const double[::1] u, int n, double[::1] out,
              double[::1] d, double[::1] lap,
              double* lam_out, double* E_out, double* fm_out) noexcept nogil:
    cdef Py_ssize_t i, N = u.shape[0]
    cdef double ps = 2.0 * n / (n - 2)
    cdef double cn = 4.0 * (n - 1) / (n - 2)
    cdef double nn = n * (n - 1.0)
    cdef double E = 0.0, fm = 0.0, q, ui, up, lam
    for i in range(N):
        ui = u[i]
        if not (ui > 0.0):
            return NONPOSITIVE_FACTOR
    _laplacian(L, rs, u, d, lap)
    for i in range(N):
        ui = u[i]
        q = -cn * lap[i] + nn * ui
        up = pow(ui, ps)
        E += w[i] * (q * ui)
        fm += w[i] * (f[i] * up)
        lap[i] = q * ui / up
    E_out[0] = E
    fm_out[0] = fm
    if not (fm > 0.0):
        return NONPOSITIVE_F_MASS
    lam = E / fm
    lam_out[0] = lam
    for i in range(N):
        out[i] = -0.25 * (n - 2) * (lap[i] - lam * f[i]) * u[i]
    return OK


cdef void _energy(const double[:, ::1] L, const double[::1] rs, const double[::1] w,
                  const double[::1] f, const double[::1] u, int n,
                  double[::1] d, double[::1] lap, double* E_out, double* fm_out) noexcept nogil:
    cdef Py_ssize_t i, N = u.shape[0]
    cdef double ps = 2.0 * n / (n - 2)
    cdef double cn = 4.0 * (n - 1) / (n - 2)
    cdef double nn = n * (n - 1.0)
    cdef double E = 0.0, fm = 0.0, ui
    _laplacian(L, rs, u, d, lap)
    for i in range(N):
        ui = u[i]
        E += w[i] * ((-cn * lap[i] + nn * ui) * ui)
        fm += w[i] * (f[i] * pow(ui, ps))
    E_out[0] = E
    fm_out[0] = fm


cdef tuple _views(lap_off, lap_rowsum, weights, f, u):
    return (np.ascontiguousarray(lap_off, dtype=np.float64),
            np.ascontiguousarray(lap_rowsum, dtype=np.float64),
            np.ascontiguousarray(weights, dtype=np.float64),
            np.ascontiguousarray(f, dtype=np.float64),
            np.ascontiguousarray(u, dtype=np.float64))


def flow_rhs(lap_off, lap_rowsum, weights, f, u, int n):
    a_L, a_rs, a_w, a_f, a_u = _views(lap_off, lap_rowsum, weights, f, u)
    cdef const double[:, ::1] L = a_L
    cdef const double[::1] rs = a_rs, w = a_w, fv = a_f, uv = a_u
    N = uv.shape[0]
    out = np.empty(N)
    work = np.empty((2, N))
    cdef double[::1] ov = out
    cdef double[::1] d = work[0]
    cdef double[::1] lap = work[1]
    cdef double lam = np.nan, E = np.nan, fm = np.nan
    cdef int st
    with nogil:
        st = _rhs(L, rs, w, fv, uv, n, ov, d, lap, &lam, &E, &fm)
    if st:
        return st, None, np.nan, E, fm
    return OK, out, lam, E, fm


def energy_terms(lap_off, lap_rowsum, weights, f, u, int n):
    a_L, a_rs, a_w, a_f, a_u = _views(lap_off, lap_rowsum, weights, f, u)
    cdef const double[:, ::1] L = a_L
    cdef const double[::1] rs = a_rs, w = a_w, fv = a_f, uv = a_u
    work = np.empty((2, uv.shape[0]))
    cdef double[::1] d = work[0]
    cdef double[::1] lap = work[1]
    cdef double E, fm
    with nogil:
        _energy(L, rs, w, fv, uv, n, d, lap, &E, &fm)
    return E, fm


def rk4_step(lap_off, lap_rowsum, weights, f, u, int n, double dt, double vol0):
    a_L, a_rs, a_w, a_f, a_u = _views(lap_off, lap_rowsum, weights, f, u)
    cdef const double[:, ::1] L = a_L
    cdef const double[::1] rs = a_rs, w = a_w, fv = a_f, uv = a_u
    cdef Py_ssize_t i, N = uv.shape[0]
    work = np.empty((8, N))
    cdef double[:, ::1] wk = work
    cdef double[::1] k1 = wk[0], k2 = wk[1], k3 = wk[2], k4 = wk[3]
    cdef double[::1] tmp = wk[4], d = wk[5], lap = wk[6], un = wk[7]
    cdef double lam, E, fm, vol = 0.0, scale, h = 0.5 * dt
    cdef double ps = 2.0 * n / (n - 2)
    cdef int st = OK
    with nogil:
        st = _rhs(L, rs, w, fv, uv, n, k1, d, lap, &lam, &E, &fm)
        if st == OK:
            for i in range(N):
                tmp[i] = uv[i] + h * k1[i]
            st = _rhs(L, rs, w, fv, tmp, n, k2, d, lap, &lam, &E, &fm)
        if st == OK:
            for i in range(N):
                tmp[i] = uv[i] + h * k2[i]
            st = _rhs(L, rs, w, fv, tmp, n, k3, d, lap, &lam, &E, &fm)
        if st == OK:
            for i in range(N):
                tmp[i] = uv[i] + dt * k3[i]
            st = _rhs(L, rs, w, fv, tmp, n, k4, d, lap, &lam, &E, &fm)
        if st == OK:
            for i in range(N):
                un[i] = uv[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                if not (un[i] > 0.0):
                    st = NONPOSITIVE_FACTOR
        if st == OK:
            for i in range(N):
                vol += w[i] * pow(un[i], ps)
            if vol != vol0:
                scale = pow(vol0 / vol, 1.0 / ps)
                for i in range(N):
                    un[i] = un[i] * scale
            _energy(L, rs, w, fv, un, n, d, lap, &E, &fm)
            if not (fm > 0.0):
                st = NONPOSITIVE_F_MASS
    if st:
        return st, None, np.nan, np.nan, np.nan
    return OK, work[7].copy(), vol / vol0 - 1.0, E, fm


def morse_enumerate(int n, int kmax, int mmax):
    cdef long kb = kmax + 1, mb = mmax + 1
    cdef long size = mb ** (n + 1)
    count_arr = np.zeros(size, dtype=np.int64)
    first_arr = np.full(size, -1, dtype=np.int64)
    if n == 0:
        return count_arr, first_arr
    cdef long long[::1] count = count_arr
    cdef long long[::1] first = first_arr
    k_arr = np.zeros(n, dtype=np.int64)
    cdef long long[::1] k = k_arr
    cdef long total = kb ** n, idx, mcode, mpow, mi
    cdef int i
    cdef bint ok
    with nogil:
        for idx in range(total):
            # k is the base-kb expansion of idx with k_0 fastest, so idx is the k code
            ok = True
            mcode = 0
            mpow = 1
            for i in range(n + 1):
                if i == 0:
                    mi = 1 + k[0]
                elif i < n:
                    mi = k[i - 1] + k[i]
                else:
                    mi = k[n - 1]
                if mi > mmax:
                    ok = False
                    break
                mcode += mi * mpow
                mpow *= mb
            if ok:
                count[mcode] += 1
                if first[mcode] < 0:
                    first[mcode] = idx
            # odometer increment
            for i in range(n):
                k[i] += 1
                if k[i] < kb:
                    break
                k[i] = 0
    return count_arr, first_arr
