"""Checks on a candidate curvature function ``f`` for solvability.

Every check returns a verdict together with the number that decided it, so
that reports can be audited without rerunning anything.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from ._kernels import morse_enumerate
from .errors import ConfigError, IndexOutOfRangeError, NonpositiveMeanError
from .sphere import Grid, check_profile, derivative, extrema, gradient_sq, interpolate, laplace_beltrami, pole_laplacian

SIGN_MARGIN = 1e-10
NONDEGENERACY_RTOL = 1e-8
CONDITION_NAMES = ("i", "ii", "iii", "iv", "index", "symmetry")


class Verdict(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    INDETERMINATE = "INDETERMINATE"

    @classmethod
    def of(cls, ok: bool) -> "Verdict":
        return cls.PASS if ok else cls.FAIL


def worst(verdicts) -> Verdict:
    vs = list(verdicts)
    if Verdict.FAIL in vs:
        return Verdict.FAIL
    if Verdict.INDETERMINATE in vs:
        return Verdict.INDETERMINATE
    return Verdict.PASS


@dataclass(frozen=True)
class ConditionResult:
    name: str
    verdict: Verdict
    witness: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "verdict": self.verdict.value, "witness": self.witness}

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionResult":
        return cls(d["name"], Verdict(d["verdict"]), dict(d["witness"]))


def _max_abs(f, grid):
    lo, hi = extrema(f, grid)
    return max(-lo, hi)


def _check_dim(n, grid):
    if n != grid.n:
        raise ValueError(f"dimension {n} does not match the grid (n={grid.n})")


def _positive_mean(f, grid) -> tuple[float, bool]:
    # quadrature of an odd profile leaves rounding noise of either sign
    mean = float(grid.weights @ f)
    return mean, mean > SIGN_MARGIN * max(_max_abs(f, grid), 1e-300)


def check_condition_i(f, n: int, grid: Grid) -> ConditionResult:
    """Positive mean; for ``n = 3`` also ``f >= 0`` everywhere."""
    _check_dim(n, grid)
    f = check_profile(f, grid, "f")
    mean, ok = _positive_mean(f, grid)
    min_f = extrema(f, grid)[0]
    if n == 3:
        ok = ok and min_f >= -1e-12
    return ConditionResult("i", Verdict.of(ok), {"mean_f": mean, "min_f": min_f})


class BubbleCheck(NamedTuple):
    verdict: Verdict
    ratio: float
    sigma: float


def check_simple_bubble(f, n: int, grid: Grid) -> BubbleCheck:
    """``max|f| / mean f < 2^(2/n)``; ``sigma > 0`` is the same statement."""
    _check_dim(n, grid)
    f = check_profile(f, grid, "f")
    mean, ok = _positive_mean(f, grid)
    if not ok:
        raise NonpositiveMeanError(f"mean of f is {mean:.6g}")
    max_abs = _max_abs(f, grid)
    ratio = max_abs / mean
    sigma = 0.5 * (2.0 ** (2.0 / n) / ratio - 1.0)
    return BubbleCheck(Verdict.of(ratio < 2.0 ** (2.0 / n)), ratio, sigma)


def check_nondegeneracy(f, grid: Grid) -> tuple[Verdict, float]:
    """``|grad f|^2 + (Delta f)^2`` bounded away from zero, nodes and poles included."""
    f = check_profile(f, grid, "f")
    inner = gradient_sq(f, grid) + laplace_beltrami(f, grid) ** 2
    poles = np.square(pole_laplacian(f, grid))
    witness = float(min(inner.min(), poles.min()))
    scale = _max_abs(f, grid) ** 2
    return Verdict.of(witness > NONDEGENERACY_RTOL * scale), witness


@dataclass(frozen=True)
class CriticalPoint:
    label: str
    f_value: float
    laplacian_sign: int
    morse_index: int

    def __post_init__(self):
        if self.laplacian_sign not in (-1, 0, 1):
            raise ValueError(f"laplacian_sign must be -1, 0 or 1, got {self.laplacian_sign!r}")
        if isinstance(self.morse_index, bool) or int(self.morse_index) != self.morse_index:
            raise ValueError(f"morse_index must be an integer, got {self.morse_index!r}")
        if not math.isfinite(self.f_value):
            raise ValueError("f_value must be finite")

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "f_value": self.f_value,
            "laplacian_sign": self.laplacian_sign,
            "morse_index": self.morse_index,
        }


@dataclass(frozen=True)
class MorseSystem:
    """Counts ``m_0 .. m_n`` of the system ``m_0 = 1 + k_0``,
    ``m_i = k_(i-1) + k_i`` with ``k_n = 0`` and ``k_i >= 0``."""

    n: int
    m: tuple

    def __post_init__(self):
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))
        if len(self.m) != self.n + 1:
            raise ValueError(f"expected {self.n + 1} counts, got {len(self.m)}")
        if any(v < 0 for v in self.m):
            raise ValueError("counts must be non-negative")


class MorseSolution(NamedTuple):
    exists: bool
    k: Optional[tuple]
    trivial: Optional[bool]

    def condition_verdict(self, strict: bool = False) -> Verdict:
        """PASS when no solution with some ``k_i > 0`` exists.

        With ``strict`` any solution at all fails the condition.
        """
        if not self.exists:
            return Verdict.PASS
        return Verdict.FAIL if strict or not self.trivial else Verdict.PASS


def solve_morse_system(sys: MorseSystem) -> MorseSolution:
    """Forward substitution; the system is triangular, so the solution is unique."""
    k = []
    prev = None
    for i, mi in enumerate(sys.m):
        ki = mi - 1 if i == 0 else mi - prev
        if ki < 0:
            return MorseSolution(False, None, None)
        k.append(ki)
        prev = ki
    if k[-1] != 0:
        return MorseSolution(False, None, None)
    k = tuple(k)
    return MorseSolution(True, k, all(v == 0 for v in k))


def enumerate_morse_solutions(n: int, mmax: int, kmax: Optional[int] = None):
    """Brute-force table of the system over every ``k`` with entries in ``[0, kmax]``.

    Returns ``(count, first_k)`` arrays indexed by the code
    ``sum_i m_i (mmax+1)^i``; ``first_k`` holds the smallest code
    ``sum_i k_i (kmax+1)^i`` of a solution, or -1.
    """
    if kmax is None:
        kmax = mmax + 1
    return morse_enumerate(int(n), int(kmax), int(mmax))


def decode(code: int, base: int, length: int) -> tuple:
    out = []
    for _ in range(length):
        code, r = divmod(code, base)
        out.append(r)
    return tuple(out)


class MorseCounts(NamedTuple):
    system: MorseSystem
    indeterminate: tuple


def _scale(crit):
    return max([abs(c.f_value) for c in crit] + [1.0])


def _classify(c: CriticalPoint, n: int, f_positive_filter: bool, margin: float):
    """True, False or None (too close to a threshold to decide)."""
    if not 0 <= c.morse_index <= n:
        raise IndexOutOfRangeError(f"{c.label}: Morse index {c.morse_index} outside [0, {n}]")
    if c.laplacian_sign > 0:
        return False
    if f_positive_filter and c.f_value < -margin:
        return False
    if f_positive_filter and c.f_value <= margin:
        return None
    if c.laplacian_sign == 0:
        return None
    return True


def morse_counts(
    crit: Sequence[CriticalPoint], f_positive_filter: bool, n: int, scale: Optional[float] = None
) -> MorseCounts:
    """``m_i`` = number of points with ``f > 0``, ``Delta f < 0`` and index ``n - i``.

    Points within ``SIGN_MARGIN * scale`` of ``f = 0``, or with
    ``laplacian_sign == 0``, are listed as indeterminate and not counted.
    ``scale`` defaults to the largest ``|f_value|`` in ``crit`` (at least 1);
    pass ``max|f|`` to make the margin independent of the manifest.
    """
    margin = SIGN_MARGIN * (_scale(crit) if scale is None else scale)
    m = [0] * (n + 1)
    undecided = []
    for c in crit:
        keep = _classify(c, n, f_positive_filter, margin)
        if keep is None:
            undecided.append(c.label)
        elif keep:
            m[n - c.morse_index] += 1
    return MorseCounts(MorseSystem(n, tuple(m)), tuple(undecided))


def index_count(crit: Sequence[CriticalPoint], n: int, scale: Optional[float] = None) -> tuple[int, Verdict]:
    """Sum of ``(-1)^index`` over the filtered points; PASS iff it differs from ``(-1)^n``."""
    counts = morse_counts(crit, True, n, scale)
    total = sum((-1) ** (n - i) * mi for i, mi in enumerate(counts.system.m))
    if counts.indeterminate:
        return total, Verdict.INDETERMINATE
    return total, Verdict.of(total != (-1) ** n)


def pole_critical_points(f, grid: Grid, tol: float = SIGN_MARGIN) -> list[CriticalPoint]:
    """Critical points of an axisymmetric ``f`` at the two poles.

    Near the north pole ``f ~ f(N) - f'(1) theta^2 / 2``, so the Hessian is
    ``-f'(1)`` times the identity; at the south pole it is ``f'(-1)``.
    Interior sign changes of ``f'`` are critical circles, which are not
    Morse; a warning is issued when any exist.
    """
    f = check_profile(f, grid, "f")
    n = grid.n
    df = derivative(f, grid)
    scale = max(float(np.abs(f).max()), 1.0)
    sig = np.abs(df) > 1e-8 * scale
    signs = np.sign(df[sig])
    if np.any(signs[1:] != signs[:-1]):
        warnings.warn("f has critical latitudes away from the poles; they are not listed", stacklevel=2)
    f_s, f_n = interpolate(f, grid, [-1.0, 1.0])
    d_s, d_n = interpolate(df, grid, [-1.0, 1.0])
    thr = tol * scale
    out = []
    # Hessian eigenvalue h (all n equal): index n when h < 0, 0 when h > 0
    for label, value, h in (("north", f_n, -d_n), ("south", f_s, d_s)):
        sign = 0 if abs(h) <= thr else int(np.sign(h))
        index = n if sign < 0 else 0
        out.append(CriticalPoint(label, float(value), sign, index))
    return out


def parse_manifest(data) -> list[CriticalPoint]:
    if not isinstance(data, list):
        raise ConfigError("manifest must be a JSON list")
    out = []
    keys = {"label", "f_value", "laplacian_sign", "morse_index"}
    for i, item in enumerate(data):
        if not isinstance(item, dict) or set(item) != keys:
            raise ConfigError(f"manifest entry {i} must have exactly the keys {sorted(keys)}")
        try:
            out.append(
                CriticalPoint(
                    str(item["label"]),
                    float(item["f_value"]),
                    int(item["laplacian_sign"]),
                    int(item["morse_index"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"manifest entry {i}: {exc}") from exc
    return out


def load_manifest(path) -> list[CriticalPoint]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path}: line {exc.lineno}: {exc.msg}") from exc
    return parse_manifest(data)


def check_symmetry_conditions(f, sigma_set, grid: Grid) -> ConditionResult:
    """Fixed-point alternatives for a symmetry group acting on the sphere.

    ``sigma_set`` lists the fixed poles (``+1``, ``-1``); rotations about
    the axis fix both. An empty set passes outright. Otherwise the check
    passes when ``max f`` over the set is at most the mean of ``f``, or when
    ``Delta f > 0`` at every maximizer in the set.
    """
    f = check_profile(f, grid, "f")
    poles = tuple(sorted(set(int(p) for p in sigma_set), reverse=True))
    if any(p not in (1, -1) for p in poles):
        raise ValueError("fixed points must be poles (+1 or -1)")
    if not poles:
        return ConditionResult("symmetry", Verdict.PASS, {"fixed_set": [], "alternative": "a"})
    mean = float(grid.weights @ f)
    values = dict(zip((-1, 1), (float(v) for v in interpolate(f, grid, [-1.0, 1.0]))))
    laps = dict(zip((-1, 1), pole_laplacian(f, grid)))
    top = max(values[p] for p in poles)
    tie = 1e-12 * max(abs(top), 1.0)
    maximizers = [p for p in poles if values[p] >= top - tie]
    lap_at = [laps[p] for p in maximizers]
    ok = top <= mean or all(v > 0 for v in lap_at)
    witness = {
        "fixed_set": list(poles),
        "max_f_on_set": top,
        "mean_f": mean,
        "maximizers": maximizers,
        "laplacian_at_maximizers": lap_at,
        "alternative": "b",
    }
    return ConditionResult("symmetry", Verdict.of(ok), witness)


@dataclass(frozen=True)
class ConditionReport:
    n: int
    results: dict
    index_sum: Optional[int]
    delta_n: float

    def verdict(self, names: Optional[Sequence[str]] = None) -> Verdict:
        names = CONDITION_NAMES if names is None else names
        return worst(self.results[k].verdict for k in names)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "results": {k: v.to_dict() for k, v in self.results.items()},
            "index_sum": self.index_sum,
            "delta_n": self.delta_n,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionReport":
        results = {k: ConditionResult.from_dict(v) for k, v in d["results"].items()}
        return cls(int(d["n"]), results, d["index_sum"], float(d["delta_n"]))


def condition_report(
    f,
    grid: Grid,
    manifest: Optional[Sequence[CriticalPoint]] = None,
    sigma_set=(1, -1),
    strict_morse: bool = False,
) -> ConditionReport:
    """Evaluate every condition on ``f``.

    Without a manifest the two pole critical points are used for the Morse
    counts and the report records that source.
    """
    n = grid.n
    f = check_profile(f, grid, "f")
    results = {"i": check_condition_i(f, n, grid)}
    try:
        b = check_simple_bubble(f, n, grid)
        results["ii"] = ConditionResult(
            "ii", b.verdict, {"ratio": b.ratio, "sigma": b.sigma, "threshold": 2.0 ** (2.0 / n)}
        )
    except NonpositiveMeanError as exc:
        results["ii"] = ConditionResult("ii", Verdict.FAIL, {"error": exc.code, "ratio": None})
    v, w = check_nondegeneracy(f, grid)
    results["iii"] = ConditionResult("iii", v, {"min_grad2_plus_lap2": w})

    source = "manifest"
    if manifest is None:
        source = "poles"
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            manifest = pole_critical_points(f, grid)
        interior = bool(caught)
    else:
        interior = False
    scale = max(_max_abs(f, grid), 1.0)
    counts = morse_counts(manifest, True, n, scale)
    sol = solve_morse_system(counts.system)
    iv = Verdict.INDETERMINATE if counts.indeterminate else sol.condition_verdict(strict_morse)
    results["iv"] = ConditionResult(
        "iv",
        iv,
        {
            "m": list(counts.system.m),
            "k": None if sol.k is None else list(sol.k),
            "trivial": sol.trivial,
            "indeterminate": list(counts.indeterminate),
            "source": source,
            "interior_critical_latitudes": interior,
            "strict": strict_morse,
        },
    )
    total, iv_idx = index_count(manifest, n, scale)
    results["index"] = ConditionResult("index", iv_idx, {"sum": total, "forbidden": (-1) ** n})
    results["symmetry"] = check_symmetry_conditions(f, sigma_set, grid)
    delta_n = 2.0 ** (2.0 / n) if n <= 4 else 2.0 ** (2.0 / (n - 2))
    return ConditionReport(n, results, total, delta_n)
