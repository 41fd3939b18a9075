import os
import subprocess
import sys

import numpy as np
import pytest

from sphereflow import _kernels
from sphereflow._kernels import NONPOSITIVE_F_MASS, NONPOSITIVE_FACTOR, OK, available_backends, get_backend
from sphereflow.conformal import Dilation, bubble
from sphereflow.sphere import build_grid, critical_exponent

from . import oracles

needs_both = pytest.mark.skipif(len(available_backends()) < 2, reason="compiled kernels not built")


def _args(g, f):
    return g.lap_off, g.lap_rowsum, g.weights, f


def _case(n, N):
    g = build_grid(n, N)
    f = n * (n - 1.0) * (1 + 0.2 * g.nodes - 0.1 * g.nodes**2)
    u = bubble(Dilation(0.6), g) * (1 + 0.05 * g.nodes**3)
    return g, f, u


@needs_both
@pytest.mark.parametrize("n,N", [(3, 40), (4, 64), (10, 32)])
def test_rhs_parity(n, N):
    g, f, u = _case(n, N)
    py, cy = get_backend("python"), get_backend("cython")
    a = py.flow_rhs(*_args(g, f), u, n)
    b = cy.flow_rhs(*_args(g, f), u, n)
    assert a[0] == b[0] == OK
    assert np.allclose(a[1], b[1], rtol=1e-12, atol=1e-12 * np.abs(a[1]).max())
    for x, y in zip(a[2:], b[2:]):
        assert x == pytest.approx(y, rel=1e-13)


@needs_both
@pytest.mark.parametrize("n,N", [(3, 40), (4, 64), (10, 32)])
def test_rk4_parity(n, N):
    g, f, u = _case(n, N)
    vol0 = float(g.weights @ u ** critical_exponent(n))
    res = [get_backend(b).rk4_step(*_args(g, f), u, n, 1e-5, vol0) for b in ("python", "cython")]
    assert res[0][0] == res[1][0] == OK
    assert np.abs(res[0][1] - res[1][1]).max() < 1e-13 * np.abs(u).max()
    assert res[0][3] == pytest.approx(res[1][3], rel=1e-12)


def test_rhs_matches_direct_formula(backend):
    n, N = 4, 48
    g, f, u = _case(n, N)
    k = get_backend(backend)
    st, rhs, lam, E, fm = k.flow_rhs(*_args(g, f), u, n)
    ps = critical_exponent(n)
    L = g.lap_off - np.diag(g.lap_rowsum)
    q = -6.0 * (L @ u) + 12.0 * u
    R = q * u ** (1 - ps)
    lam_ref = (g.weights @ (q * u)) / (g.weights @ (f * u**ps))
    assert lam == pytest.approx(lam_ref, rel=1e-12)
    assert np.allclose(rhs, -0.5 * (R - lam_ref * f) * u, rtol=1e-10, atol=1e-10)


def test_status_codes(backend):
    g = build_grid(4, 16)
    k = get_backend(backend)
    f = np.full(16, 12.0)
    u = np.ones(16)
    u[4] = -0.1
    assert k.flow_rhs(*_args(g, f), u, 4)[0] == NONPOSITIVE_FACTOR
    assert k.rk4_step(*_args(g, f), u, 4, 1e-3, 1.0)[0] == NONPOSITIVE_FACTOR
    assert k.flow_rhs(*_args(g, -f), np.ones(16), 4)[0] == NONPOSITIVE_F_MASS
    assert k.rk4_step(*_args(g, f), np.ones(16), 4, 10.0, 1.0)[0] in (OK, NONPOSITIVE_FACTOR)


def test_constant_is_fixed(backend):
    g = build_grid(5, 64)
    k = get_backend(backend)
    f = np.full(64, 20.0)
    u = np.full(64, 1.3)
    vol0 = float(g.weights @ u ** critical_exponent(5))
    for _ in range(200):
        st, u, drift, E, fm = k.rk4_step(*_args(g, f), u, 5, 1e-3, vol0)
    assert st == OK
    assert np.ptp(u) == 0.0
    assert abs(u[0] - 1.3) < 1e-14


def test_energy_terms(backend):
    g, f, u = _case(4, 48)
    E, fm = get_backend(backend).energy_terms(*_args(g, f), u, 4)
    assert fm == pytest.approx(g.weights @ (f * u**4), rel=1e-13)
    grad = g.weights @ (6.0 * (1 - g.nodes**2) * (g.d1 @ u) ** 2 + 12.0 * u * u)
    assert E == pytest.approx(grad, rel=1e-10)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_morse_enumeration_against_itertools(backend, n):
    mmax, kmax = 3, 4
    count, first = get_backend(backend).morse_enumerate(n, kmax, mmax)
    mb, kb = mmax + 1, kmax + 1
    for code in range(mb ** (n + 1)):
        m = [(code // mb**i) % mb for i in range(n + 1)]
        sols = [s for s in oracles.morse_bruteforce(m) if max(s) <= kmax]
        assert count[code] == len(sols)
        if sols:
            k = sols[0][:n]
            assert first[code] == sum(v * kb**i for i, v in enumerate(k))
        else:
            assert first[code] == -1


@needs_both
def test_morse_parity():
    for n in range(1, 6):
        a = get_backend("python").morse_enumerate(n, 6, 5)
        b = get_backend("cython").morse_enumerate(n, 6, 5)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_backend_selection():
    assert _kernels.BACKEND in ("python", "cython")
    with pytest.raises(ValueError):
        get_backend("fortran")
    env = dict(os.environ, SPHEREFLOW_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import sphereflow._kernels as k; print(k.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
