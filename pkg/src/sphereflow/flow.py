"""Volume-normalized prescribed scalar curvature flow on axisymmetric S^n.

The state is a conformal factor ``u > 0`` with metric ``g = u^(4/(n-2)) g0``.
It evolves by

    du/dt = -(n-2)/4 (R - lam f) u,   lam = E[u] / avg(f u^p),   p = 2n/(n-2),

which keeps ``avg(u^p)`` constant and makes ``E_f`` non-increasing.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .conformal import center_of_mass
from .errors import (
    NonpositiveFactorError,
    NonpositiveFMassError,
    NumericalFault,
    UndefinedQError,
)
from .sphere import (
    Grid,
    check_profile,
    conformal_constant,
    critical_exponent,
    extrema,
    gradient_sq,
    interpolate,
    laplace_beltrami,
    pole_laplacian,
    round_curvature,
)

CSV_COLUMNS = (
    "t", "E", "Ef", "F2", "lambda", "lambda_prime", "vol", "Sz",
    "min_R_minus_lf", "max_u", "fu_mass",
)
RK4_STABILITY = 2.78  # extent of the RK4 stability region on the negative real axis
BOUND_RTOL = 1e-6
FMASS_ATOL = 1e-8
SIGNATURE_TOL = 0.05
UNDEFINED_Q_TOL = 1e-12
EF_ROUNDING = 1e-13  # relative rounding noise in E_f, on top of the 10 dt^2 slack


def _positive(u, grid: Grid) -> np.ndarray:
    u = check_profile(u, grid, "u")
    if not np.all(u > 0.0):
        raise NonpositiveFactorError(f"conformal factor has minimum {u.min():.3e}")
    return u


def _conformal_laplacian(u: np.ndarray, grid: Grid) -> np.ndarray:
    n = grid.n
    return -conformal_constant(n) * laplace_beltrami(u, grid) + round_curvature(n) * u


def scalar_curvature(u, grid: Grid) -> np.ndarray:
    """Scalar curvature of ``u^(4/(n-2)) g0`` at the nodes."""
    u = _positive(u, grid)
    return _conformal_laplacian(u, grid) * u ** (1.0 - critical_exponent(grid.n))


def total_energy(u, grid: Grid) -> float:
    """``avg(c_n |grad u|^2 + n(n-1) u^2)``."""
    u = _positive(u, grid)
    n = grid.n
    dens = conformal_constant(n) * gradient_sq(u, grid) + round_curvature(n) * u * u
    return float(grid.weights @ dens)


def total_curvature(u, grid: Grid) -> float:
    """Average of the scalar curvature against the volume of ``g``.

    Equal to :func:`total_energy` after integrating by parts.
    """
    u = _positive(u, grid)
    return float(grid.weights @ (_conformal_laplacian(u, grid) * u))


def volume(u, grid: Grid) -> float:
    """``avg(u^p)``: volume of ``g`` relative to the round sphere."""
    u = check_profile(u, grid, "u")
    return float(grid.weights @ u ** critical_exponent(grid.n))


def f_mass(u, f, grid: Grid) -> float:
    """``avg(f u^p)``, the average of ``f`` against the volume of ``g``."""
    u = check_profile(u, grid, "u")
    f = check_profile(f, grid, "f")
    return float(grid.weights @ (f * u ** critical_exponent(grid.n)))


def _require_fmass(fm: float) -> float:
    if not fm > 0.0:
        raise NonpositiveFMassError(f"avg(f u^p) = {fm:.6g} is not positive")
    return fm


def energy_functional(u, f, grid: Grid) -> float:
    """Scale-invariant energy ``E[u] / avg(f u^p)^((n-2)/n)``."""
    u = _positive(u, grid)
    fm = _require_fmass(f_mass(u, f, grid))
    return total_energy(u, grid) / fm ** ((grid.n - 2) / grid.n)


def lam(u, f, grid: Grid) -> float:
    """Volume-fixing multiplier ``E[u] / avg(f u^p)``."""
    u = _positive(u, grid)
    fm = _require_fmass(f_mass(u, f, grid))
    return total_curvature(u, grid) / fm


def _curvature_parts(u, f, grid):
    u = _positive(u, grid)
    f = check_profile(f, grid, "f")
    up = u ** critical_exponent(grid.n)
    fm = _require_fmass(float(grid.weights @ (f * up)))
    q = _conformal_laplacian(u, grid)
    R = q * u / up
    E = float(grid.weights @ (q * u))
    return u, f, up, R, E, fm


def _f2_and_prime(u, f, grid):
    u, f, up, R, E, fm = _curvature_parts(u, f, grid)
    lm = E / fm
    dev = lm * f - R
    F2 = float(grid.weights @ (dev * dev * up))
    cross = float(grid.weights @ (lm * f * dev * up))
    lp = -(0.5 * (grid.n - 2) * F2 + cross) / fm
    return u, f, up, R, E, fm, lm, F2, lp


def f2(u, f, grid: Grid) -> float:
    """``avg((lam f - R)^2 u^p)``."""
    return _f2_and_prime(u, f, grid)[7]


def lambda_prime(u, f, grid: Grid) -> float:
    """Time derivative of the multiplier along the flow."""
    return _f2_and_prime(u, f, grid)[8]


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    E: float
    Ef: float
    F2: float
    lam: float
    lambda_prime: float
    vol: float
    Sz: float
    min_R_minus_lf: float
    max_u: float
    fu_mass: float

    def as_row(self) -> tuple:
        # adding 0.0 turns -0.0 into 0.0
        return tuple(float(getattr(self, "lam" if c == "lambda" else c)) + 0.0 for c in CSV_COLUMNS)

    def to_dict(self) -> dict:
        return dict(zip(CSV_COLUMNS, self.as_row()))

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosticsRecord":
        return cls(*(d[c] for c in CSV_COLUMNS))


def diagnostics(u, f, grid: Grid, t: float = 0.0) -> DiagnosticsRecord:
    u, f, up, R, E, fm, lm, F2, lp = _f2_and_prime(u, f, grid)
    vol = float(grid.weights @ up)
    Eg = total_energy(u, grid)
    return DiagnosticsRecord(
        t=float(t),
        E=Eg,
        Ef=Eg / fm ** ((grid.n - 2) / grid.n),
        F2=F2,
        lam=lm,
        lambda_prime=lp,
        vol=vol,
        Sz=float((grid.weights @ (grid.nodes * up)) / vol),
        min_R_minus_lf=float(np.min(R - lm * f)),
        max_u=float(u.max()),
        fu_mass=fm,
    )


@dataclass(frozen=True)
class FlowParams:
    """Step control and termination thresholds.

    ``sample_interval`` defaults to ``t_max / 100``. ``n`` is optional and,
    when given, must match the grid.
    """

    dt: float = 1e-3
    t_max: float = 10.0
    vol_tol: float = 1e-12
    conv_F2: float = 1e-10
    blowup_umax: float = 1e3
    blowup_S: float = 0.9
    sample_interval: Optional[float] = None
    max_halvings: int = 20
    n: Optional[int] = None

    def __post_init__(self):
        for name in ("dt", "t_max", "vol_tol", "conv_F2", "blowup_umax", "blowup_S"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")
        if self.sample_interval is not None and not (
            math.isfinite(self.sample_interval) and self.sample_interval > 0
        ):
            raise ValueError(f"sample_interval must be positive, got {self.sample_interval!r}")
        if int(self.max_halvings) != self.max_halvings or self.max_halvings < 0:
            raise ValueError("max_halvings must be a non-negative integer")

    @property
    def interval(self) -> float:
        return self.sample_interval if self.sample_interval is not None else self.t_max / 100.0

    def check_grid(self, grid: Grid):
        if self.n is not None and self.n != grid.n:
            raise ValueError(f"parameters are for n={self.n} but the grid has n={grid.n}")


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    u: np.ndarray
    lam: float
    diagnostics: DiagnosticsRecord
    vol0: float


def initial_state(u0, f, grid: Grid) -> FlowState:
    u0 = _positive(u0, grid).copy()
    d = diagnostics(u0, f, grid, 0.0)
    u0.setflags(write=False)
    return FlowState(0.0, u0, d.lam, d, volume(u0, grid))


def _raise_status(status: int):
    if status == _kernels.NONPOSITIVE_FACTOR:
        raise NonpositiveFactorError("step produced a non-positive conformal factor")
    if status == _kernels.NONPOSITIVE_F_MASS:
        raise NonpositiveFMassError("step produced a non-positive f-mass")


def _backend(name):
    return _kernels if name is None else _kernels.get_backend(name)


def step(state: FlowState, f, params: FlowParams, grid: Grid, backend: Optional[str] = None) -> FlowState:
    """One RK4 step of size ``params.dt`` followed by volume projection."""
    params.check_grid(grid)
    f = check_profile(f, grid, "f")
    k = _backend(backend)
    st, u, _, E, fm = k.rk4_step(
        grid.lap_off, grid.lap_rowsum, grid.weights, f, state.u, grid.n, params.dt, state.vol0
    )
    _raise_status(st)
    t = state.t + params.dt
    d = diagnostics(u, f, grid, t)
    u.setflags(write=False)
    return FlowState(t, u, E / fm, d, state.vol0)


def stable_dt(u, grid: Grid) -> float:
    """Largest step the explicit scheme tolerates for the stiffest resolved mode."""
    n = grid.n
    coeff = (n - 1) * float(np.max(u ** (-4.0 / (n - 2)))) * grid.spectral_radius
    return 0.9 * RK4_STABILITY / coeff


class Outcome(str, Enum):
    CONVERGED = "CONVERGED"
    CONCENTRATING = "CONCENTRATING"
    TIME_OUT = "TIME_OUT"


@dataclass(frozen=True)
class Violation:
    t: float
    invariant: str
    value: float
    bound: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Violation":
        return cls(**d)


@dataclass(frozen=True)
class BoundsReport:
    """A priori constants computed from the initial datum and ``f``.

    ``Lambda0`` is ``None`` for ``n >= 4``; ``C0`` then uses the running
    maximum of ``|lambda'|`` over a trajectory and ``C0_empirical`` is set.
    """

    lambda1: float
    lambda2: float
    Lambda0: Optional[float]
    C0: Optional[float]
    C0_empirical: bool
    sigma: float
    gamma: float
    Ef0: float
    fu_floor: float
    min_R0: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BoundsReport":
        return cls(**d)


def _c0(lambda2, max_abs_f, Lambda0, min_R0):
    a = lambda2 * max_abs_f
    return min(-math.sqrt(2.0 * a * a + 2.0 * Lambda0 * max_abs_f), min_R0 - a)


def bounds_report(u0, f, grid: Grid, lambda_prime_max: Optional[float] = None) -> BoundsReport:
    u0 = _positive(u0, grid)
    f = check_profile(f, grid, "f")
    n = grid.n
    nn = round_curvature(n)
    p = critical_exponent(n)
    vol = volume(u0, grid)
    Ef0 = energy_functional(u0, f, grid)
    min_f, max_f = extrema(f, grid)
    max_abs_f = max(-min_f, max_f)
    mean_f = float(grid.weights @ f)

    lambda1 = nn / max_f * vol ** (-2.0 / n) if max_f > 0 else math.inf
    lambda2 = (Ef0 / nn ** (2.0 / n)) ** (n / (n - 2.0)) * vol ** (-2.0 / n)
    sigma = 0.5 * (2.0 ** (2.0 / n) * mean_f / max_abs_f - 1.0)
    if mean_f > 0 and sigma > -1:
        gamma = nn * (1.0 + sigma) ** ((n - 2.0) / n) * mean_f ** ((2.0 - n) / n)
    else:
        gamma = math.nan
    min_R0 = float(scalar_curvature(u0, grid).min())
    if n == 3:
        Lambda0 = (lambda2 * max_abs_f) ** 2 / (n - 2) * (Ef0 / nn) ** (p / 2.0)
        C0, empirical = _c0(lambda2, max_abs_f, Lambda0, min_R0), False
    else:
        Lambda0 = None
        if lambda_prime_max is None:
            C0, empirical = None, False
        else:
            C0, empirical = _c0(lambda2, max_abs_f, lambda_prime_max, min_R0), True
    return BoundsReport(
        lambda1=lambda1,
        lambda2=lambda2,
        Lambda0=Lambda0,
        C0=C0,
        C0_empirical=empirical,
        sigma=sigma,
        gamma=gamma,
        Ef0=Ef0,
        fu_floor=(nn / Ef0) ** (p / 2.0) * vol,
        min_R0=min_R0,
    )


@dataclass(frozen=True)
class ConcentrationReport:
    """Values at the concentration point ``Q`` (a pole, ``+1`` or ``-1``).

    ``status`` is ``SIGNATURE_OK``, ``SIGNATURE_FAILED`` or, when the initial
    energy is above the level the asymptotics require, ``OUT_OF_REGIME``.
    """

    Q: int
    Sz: float
    lam: float
    f_Q: float
    ratio: float
    grad_f_Q: float
    laplacian_f_Q: float
    signature_holds: bool
    status: str

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ConcentrationReport":
        return cls(**d)


def detect_concentration(
    state: FlowState,
    f,
    grid: Grid,
    tol: float = SIGNATURE_TOL,
    in_regime: bool = True,
) -> ConcentrationReport:
    f = check_profile(f, grid, "f")
    sz = center_of_mass(state.u, grid)
    if abs(sz) < UNDEFINED_Q_TOL:
        raise UndefinedQError(f"center of mass {sz:.3e} does not select a pole")
    q = 1 if sz > 0 else -1
    f_q = float(interpolate(f, grid, [float(q)])[0])
    lap_s, lap_n = pole_laplacian(f, grid)
    lap_q = lap_n if q == 1 else lap_s
    ratio = state.lam * f_q / round_curvature(grid.n)
    holds = abs(ratio - 1.0) < tol and lap_q < 0.0
    if not in_regime:
        status = "OUT_OF_REGIME"
    else:
        status = "SIGNATURE_OK" if holds else "SIGNATURE_FAILED"
    # the gradient of an axisymmetric profile vanishes at both poles
    return ConcentrationReport(q, sz, state.lam, f_q, ratio, 0.0, lap_q, holds, status)


@dataclass(eq=False)
class FlowResult:
    trajectory: list
    outcome: Outcome
    final: FlowState
    bounds: BoundsReport
    violations: list = field(default_factory=list)
    concentration: Optional[ConcentrationReport] = None
    extremes: dict = field(default_factory=dict)
    steps: int = 0
    rejected: int = 0
    samples: list = field(default_factory=list)

    @property
    def lambda_prime_max(self) -> float:
        return max((abs(r.lambda_prime) for r in self.trajectory), default=0.0)


class _Monitor:
    """Per-step invariant checks with running extremes.

    Each invariant is logged at most once per sample interval so a
    persistent violation does not flood the log.
    """

    def __init__(self, b: BoundsReport, params: FlowParams, vol0: float, f, grid: Grid):
        self.b, self.params, self.vol0, self.f, self.grid = b, params, vol0, f, grid
        self.lam_lo = b.lambda1 * (1.0 - BOUND_RTOL)
        self.lam_hi = b.lambda2 * (1.0 + BOUND_RTOL)
        self.fu_lo = b.fu_floor - FMASS_ATOL
        self.floor = None
        if b.C0 is not None and not b.C0_empirical:
            self.floor = b.C0 - BOUND_RTOL * abs(b.C0)
        self.violations: list = []
        self.flagged: set = set()
        self.extremes = {"lambda_min": math.inf, "lambda_max": -math.inf, "fu_mass_min": math.inf}
        if self.floor is not None:
            self.extremes["min_R_minus_lf"] = math.inf

    def _flag(self, t, name, value, bound):
        if name not in self.flagged:
            self.flagged.add(name)
            self.violations.append(Violation(t, name, value, bound))

    def step(self, t, u, lam_t, fm):
        ex = self.extremes
        ex["lambda_min"] = min(ex["lambda_min"], lam_t)
        ex["lambda_max"] = max(ex["lambda_max"], lam_t)
        ex["fu_mass_min"] = min(ex["fu_mass_min"], fm)
        if lam_t < self.lam_lo:
            self._flag(t, "lambda_lower", lam_t, self.lam_lo)
        if lam_t > self.lam_hi:
            self._flag(t, "lambda_upper", lam_t, self.lam_hi)
        if fm < self.fu_lo:
            self._flag(t, "fu_mass_floor", fm, self.fu_lo)
        if self.floor is not None:
            low = float(np.min(scalar_curvature(u, self.grid) - lam_t * self.f))
            ex["min_R_minus_lf"] = min(ex["min_R_minus_lf"], low)
            if low < self.floor:
                self._flag(t, "curvature_floor", low, self.floor)

    def sample(self, rec: DiagnosticsRecord):
        drift = abs(rec.vol / self.vol0 - 1.0)
        if drift > self.params.vol_tol:
            self._flag(rec.t, "volume", drift, self.params.vol_tol)
        self.flagged.clear()


def run(
    u0,
    f,
    params: FlowParams,
    grid: Grid,
    backend: Optional[str] = None,
    keep_states: bool = False,
) -> FlowResult:
    """Integrate until convergence, concentration or ``t_max``.

    Diagnostics are recorded at every multiple of the sample interval, plus
    the final state. Each step uses ``params.dt`` halved as often as needed
    to respect the explicit stability limit. A step is retried with a
    further halving when it loses positivity or raises ``E_f`` by more than
    ``10 dt^2``. More than ``params.max_halvings`` halvings, or a
    non-positive f-mass, raise :class:`NumericalFault`.

    The lambda bounds and the f-mass floor are checked after every step,
    as is the curvature floor when its constant is constructive (n = 3);
    volume drift is checked at samples. ``extremes`` holds the running
    minima and maxima of the monitored quantities.

    With ``keep_states`` the profile at every sample is kept in ``samples``.
    """
    params.check_grid(grid)
    f = check_profile(f, grid, "f").copy()
    k = _backend(backend)
    state = initial_state(u0, f, grid)
    bounds = bounds_report(state.u, f, grid)
    n = grid.n
    ef_pow = (n - 2.0) / n
    vol0 = state.vol0
    interval = params.interval
    monitor = _Monitor(bounds, params, vol0, f, grid)
    monitor.step(0.0, state.u, state.lam, state.diagnostics.fu_mass)
    monitor.sample(state.diagnostics)
    traj = [state.diagnostics]
    samples = [state.u] if keep_states else []

    u = np.array(state.u)
    E, fm = k.energy_terms(grid.lap_off, grid.lap_rowsum, grid.weights, f, u, n)
    ef = E / fm ** ef_pow
    t = 0.0
    n_steps = rejected = 0
    sample_idx = 1
    outcome = None
    if state.diagnostics.F2 < params.conv_F2:
        outcome = Outcome.CONVERGED

    while outcome is None:
        target = min(sample_idx * interval, params.t_max)
        cap = stable_dt(u, grid)
        halvings = 0
        dt = params.dt
        while dt > cap:
            dt *= 0.5
            halvings += 1
        while True:
            if halvings > params.max_halvings:
                raise NumericalFault(
                    f"step size fell below dt/2^{params.max_halvings} at t={t:.6g}"
                )
            remaining = target - t
            # fold a sliver left by rounding into this step
            h = remaining if remaining <= dt * (1.0 + 1e-9) else dt
            st, un, _, En, fmn = k.rk4_step(
                grid.lap_off, grid.lap_rowsum, grid.weights, f, u, n, h, vol0
            )
            if st == _kernels.NONPOSITIVE_F_MASS:
                raise NumericalFault(f"f-mass became non-positive at t={t:.6g}")
            if st == _kernels.OK:
                efn = En / fmn ** ef_pow
                if efn <= ef + 10.0 * h * h + EF_ROUNDING * abs(ef):
                    break
            rejected += 1
            dt *= 0.5
            halvings += 1
        u, E, fm, ef = un, En, fmn, efn
        n_steps += 1
        reached = h == remaining
        t = target if reached else t + h
        monitor.step(t, u, E / fm, fm)

        max_u = float(u.max())
        concentrating = max_u > params.blowup_umax and (
            abs(center_of_mass(u, grid)) > params.blowup_S
        )
        if reached or concentrating:
            rec = diagnostics(u, f, grid, t)
            traj.append(rec)
            if keep_states:
                samples.append(u.copy())
            monitor.sample(rec)
            if reached:
                sample_idx += 1
            if concentrating:
                outcome = Outcome.CONCENTRATING
            elif rec.F2 < params.conv_F2:
                outcome = Outcome.CONVERGED
            elif t >= params.t_max:
                outcome = Outcome.TIME_OUT

    u.setflags(write=False)
    last = traj[-1]
    final = FlowState(t, u, last.lam, last, vol0)
    if n != 3:
        lp_max = max(abs(r.lambda_prime) for r in traj)
        bounds = bounds_report(state.u, f, grid, lambda_prime_max=lp_max)
    result = FlowResult(
        trajectory=traj,
        outcome=outcome,
        final=final,
        bounds=bounds,
        violations=monitor.violations,
        extremes=monitor.extremes,
        steps=n_steps,
        rejected=rejected,
        samples=samples,
    )
    if outcome is Outcome.CONCENTRATING:
        in_regime = not (bounds.Ef0 > bounds.gamma) if math.isfinite(bounds.gamma) else False
        result.concentration = detect_concentration(final, f, grid, in_regime=in_regime)
    return result


def homotopy_path(
    u0,
    uT,
    s: float,
    grid: Grid,
    flow_at: Optional[Callable[[float], np.ndarray]] = None,
) -> np.ndarray:
    """Deformation of the flow line from ``u0`` to the constant 1.

    For ``s <= 1/2`` this is the flow itself at time ``2 s T``, supplied by
    ``flow_at(2 s)`` (endpoints fall back to ``u0`` and ``uT``). For
    ``s > 1/2`` it interpolates in ``u^p`` between ``beta uT`` and 1, with
    ``beta = 1 / max uT``, renormalized so that unit-volume ``uT`` gives a
    unit-volume path.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"path parameter must lie in [0, 1], got {s}")
    uT = _positive(uT, grid)
    if s <= 0.5:
        if s == 0.0:
            return _positive(u0, grid).copy()
        if s == 0.5:
            return uT.copy()
        if flow_at is None:
            raise ValueError("flow_at is required for 0 < s < 1/2")
        return _positive(flow_at(2.0 * s), grid)
    p = critical_exponent(grid.n)
    beta = 1.0 / float(uT.max())
    a = 2.0 - 2.0 * s
    b = 2.0 * s - 1.0
    return ((a * (beta * uT) ** p + b) / (a * beta**p + b)) ** (1.0 / p)
