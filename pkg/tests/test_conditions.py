import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sphereflow.conditions import (
    CONDITION_NAMES,
    ConditionReport,
    CriticalPoint,
    MorseSystem,
    Verdict,
    check_condition_i,
    check_nondegeneracy,
    check_simple_bubble,
    check_symmetry_conditions,
    condition_report,
    decode,
    enumerate_morse_solutions,
    index_count,
    load_manifest,
    morse_counts,
    parse_manifest,
    pole_critical_points,
    solve_morse_system,
    worst,
)
from sphereflow.errors import ConfigError, IndexOutOfRangeError, NonpositiveMeanError
from sphereflow.sphere import build_grid

from . import oracles


def _grid(n=4, N=64):
    return build_grid(n, N)


def test_worst_verdict():
    P, F, I = Verdict.PASS, Verdict.FAIL, Verdict.INDETERMINATE
    assert worst([P, P]) is P
    assert worst([P, I]) is I
    assert worst([I, F, P]) is F
    assert worst([]) is P


def test_condition_i_examples():
    g4, g3 = _grid(4), _grid(3)
    r = check_condition_i(12 + 6 * g4.nodes, 4, g4)
    assert r.verdict is Verdict.PASS and r.witness["mean_f"] == pytest.approx(12.0)
    r = check_condition_i(12 + 6 * g3.nodes - 10, 3, g3)
    assert r.verdict is Verdict.FAIL and r.witness["min_f"] == pytest.approx(-4.0)
    assert check_condition_i(2 + 2 * g3.nodes, 3, g3).verdict is Verdict.PASS
    for N in (16, 63, 64, 256):
        g = build_grid(4, N)
        assert check_condition_i(g.nodes, 4, g).verdict is Verdict.FAIL
    with pytest.raises(ValueError):
        check_condition_i(g4.nodes, 3, g4)


@pytest.mark.parametrize("n", [3, 4, 5, 8])
def test_simple_bubble_constant(n):
    g = _grid(n, 32)
    b = check_simple_bubble(np.full(32, 7.0), n, g)
    assert b.verdict is Verdict.PASS and b.ratio == pytest.approx(1.0, rel=1e-14)
    assert b.sigma == pytest.approx(0.5 * (2 ** (2 / n) - 1), rel=1e-13)


def test_simple_bubble_examples():
    g = _grid()
    b = check_simple_bubble(12 + 6 * g.nodes, 4, g)
    assert b.verdict is Verdict.FAIL and b.ratio == pytest.approx(1.5, rel=1e-12) and b.sigma < 0
    b = check_simple_bubble(12 + 4 * g.nodes, 4, g)
    assert b.verdict is Verdict.PASS and b.ratio == pytest.approx(4 / 3, rel=1e-12) and b.sigma > 0
    with pytest.raises(NonpositiveMeanError):
        check_simple_bubble(g.nodes - 1, 4, g)


@settings(max_examples=40, deadline=None)
@given(c=st.floats(1e-3, 1e3), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_simple_bubble_ratio_is_scale_invariant(c, a, b):
    g = _grid(4, 32)
    f = 10 + a * g.nodes + b * g.nodes**2
    assert check_simple_bubble(c * f, 4, g).ratio == pytest.approx(check_simple_bubble(f, 4, g).ratio, rel=1e-12)


def test_nondegeneracy_examples():
    g = _grid()
    v, w = check_nondegeneracy(np.full(64, 3.0), g)
    assert v is Verdict.FAIL and w == pytest.approx(0.0, abs=1e-20)
    v, w = check_nondegeneracy(g.nodes, g)
    # (1 - mu^2) + 16 mu^2 is smallest at mu = 0, between the two central nodes
    assert v is Verdict.PASS and w == pytest.approx(1.0, rel=1e-2)
    v, w = check_nondegeneracy(12 + 4 * g.nodes, g)
    assert v is Verdict.PASS and w == pytest.approx(16.0, rel=1e-2)


def test_nondegeneracy_catches_degenerate_pole():
    # 1 - (1 - mu)^3 is flat to second order at the north pole
    g = _grid()
    v, w = check_nondegeneracy(1 - (1 - g.nodes) ** 3, g)
    assert v is Verdict.FAIL


# Morse system


@pytest.mark.parametrize(
    "m,exists,k,trivial,verdict",
    [
        ((1, 0, 0, 0, 0), True, (0, 0, 0, 0, 0), True, Verdict.PASS),
        ((2, 1, 0, 0, 0), True, (1, 0, 0, 0, 0), False, Verdict.FAIL),
        ((1, 0, 1, 0, 0), False, None, None, Verdict.PASS),
    ],
)
def test_morse_examples(m, exists, k, trivial, verdict):
    sol = solve_morse_system(MorseSystem(4, m))
    assert sol.exists is exists and sol.k == k and sol.trivial is trivial
    assert sol.condition_verdict() is verdict


def test_morse_strict_reading():
    sol = solve_morse_system(MorseSystem(4, (1, 0, 0, 0, 0)))
    assert sol.condition_verdict(strict=True) is Verdict.FAIL
    assert solve_morse_system(MorseSystem(4, (1, 0, 1, 0, 0))).condition_verdict(strict=True) is Verdict.PASS


def test_morse_system_validation():
    with pytest.raises(ValueError):
        MorseSystem(4, (1, 0, 0))
    with pytest.raises(ValueError):
        MorseSystem(2, (1, -1, 0))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_morse_solver_against_bruteforce(n):
    mb = 4
    for code in range(mb ** (n + 1)):
        m = decode(code, mb, n + 1)
        sol = solve_morse_system(MorseSystem(n, m))
        ref = oracles.morse_bruteforce(m)
        assert len(ref) <= 1
        assert sol.exists == bool(ref)
        if ref:
            assert sol.k == ref[0]


def test_morse_enumeration_table():
    n, mmax = 3, 3
    count, first = enumerate_morse_solutions(n, mmax)
    for code in range(len(count)):
        m = decode(code, mmax + 1, n + 1)
        sol = solve_morse_system(MorseSystem(n, m))
        assert count[code] == int(sol.exists)
        if sol.exists:
            assert decode(int(first[code]), mmax + 2, n) == sol.k[:n]


# manifests and counting


def _cp(label, f, lap, idx):
    return CriticalPoint(label, f, lap, idx)


def test_morse_counts_example():
    crit = [_cp("N", 3.0, -1, 4), _cp("M", 2.0, -1, 4), _cp("s", 1.0, -1, 3)]
    assert morse_counts(crit, True, 4).system.m == (2, 1, 0, 0, 0)
    assert morse_counts([], True, 4).system.m == (0, 0, 0, 0, 0)
    assert morse_counts([_cp("x", 3.0, 1, 4)], True, 4).system.m == (0,) * 5


def test_morse_counts_borderline_is_indeterminate():
    crit = [_cp("a", 1e-14, -1, 4), _cp("b", 2.0, 0, 2), _cp("c", 2.0, -1, 1)]
    res = morse_counts(crit, True, 4)
    assert res.system.m == (0, 0, 0, 1, 0)
    assert res.indeterminate == ("a", "b")
    assert index_count(crit, 4)[1] is Verdict.INDETERMINATE


def test_morse_counts_margin_scale():
    crit = [_cp("a", 3e-10, -1, 4)]
    assert morse_counts(crit, True, 4).system.m[0] == 1
    assert morse_counts(crit, True, 4, scale=10.0).indeterminate == ("a",)


def test_morse_counts_index_range():
    with pytest.raises(IndexOutOfRangeError):
        morse_counts([_cp("x", 1.0, -1, 5)], True, 4)
    with pytest.raises(IndexOutOfRangeError):
        morse_counts([_cp("x", 1.0, -1, -1)], True, 4)


_point = st.builds(
    CriticalPoint,
    label=st.text(min_size=1, max_size=3),
    f_value=st.floats(-5, 5),
    laplacian_sign=st.sampled_from([-1, 0, 1]),
    morse_index=st.integers(0, 4),
)


@settings(max_examples=80, deadline=None)
@given(
    crit=st.lists(_point, max_size=8),
    f_bad=st.floats(-5, -1e-3),
    idx=st.integers(0, 4),
    lap_bad=st.sampled_from([0, 1]),
)
def test_filter_soundness(crit, f_bad, idx, lap_bad):
    base = morse_counts(crit, True, 4, scale=5.0).system.m
    assert morse_counts(crit + [_cp("neg", f_bad, -1, idx)], True, 4, scale=5.0).system.m == base
    assert morse_counts(crit + [_cp("lap", 3.0, lap_bad, idx)], True, 4, scale=5.0).system.m == base
    assert sum(base) <= sum(1 for c in crit if c.f_value > 0 and c.laplacian_sign < 0)


def test_index_count_examples():
    maxima = [_cp("a", 2.0, -1, 4), _cp("b", 1.0, -1, 4)]
    assert index_count(maxima, 4) == (2, Verdict.PASS)
    assert index_count(maxima[:1], 4) == (1, Verdict.FAIL)
    assert index_count([_cp("a", 2.0, -1, 3)], 3) == (-1, Verdict.FAIL)


def test_critical_point_validation():
    with pytest.raises(ValueError):
        CriticalPoint("x", 1.0, 2, 1)
    with pytest.raises(ValueError):
        CriticalPoint("x", float("nan"), 1, 1)
    with pytest.raises(ValueError):
        CriticalPoint("x", 1.0, 1, 1.5)


def test_parse_manifest():
    data = [{"label": "N", "f_value": 16, "laplacian_sign": -1, "morse_index": 4}]
    assert parse_manifest(data) == [CriticalPoint("N", 16.0, -1, 4)]
    for bad in ({"label": "N"}, [{"label": "N"}], [dict(data[0], extra=1)], [dict(data[0], laplacian_sign=5)]):
        with pytest.raises(ConfigError):
            parse_manifest(bad)


def test_load_manifest(tmp_path):
    good = tmp_path / "m.json"
    good.write_text(json.dumps([p.to_dict() for p in [CriticalPoint("S", 8.0, 1, 0)]]))
    assert load_manifest(good) == [CriticalPoint("S", 8.0, 1, 0)]
    bad = tmp_path / "bad.json"
    bad.write_text('[{"label": "N",')
    with pytest.raises(ConfigError, match="line"):
        load_manifest(bad)
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "missing.json")


def test_pole_critical_points():
    g = _grid()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        north, south = pole_critical_points(12 + 4 * g.nodes, g)
    assert (north.label, north.laplacian_sign, north.morse_index) == ("north", -1, 4)
    assert (south.label, south.laplacian_sign, south.morse_index) == ("south", 1, 0)
    assert north.f_value == pytest.approx(16.0) and south.f_value == pytest.approx(8.0)
    with pytest.warns(UserWarning, match="critical latitudes"):
        pole_critical_points(14 - 4 * g.nodes**2, g)


# symmetry


def test_symmetry_examples():
    g = _grid()
    assert check_symmetry_conditions(12 + 4 * g.nodes, (), g).verdict is Verdict.PASS
    r = check_symmetry_conditions(12 + 4 * g.nodes, (1, -1), g)
    assert r.verdict is Verdict.FAIL
    assert r.witness["max_f_on_set"] == pytest.approx(16.0) and r.witness["maximizers"] == [1]
    assert r.witness["laplacian_at_maximizers"][0] == pytest.approx(-16.0, rel=1e-8)
    # poles are minimizers of 12 + 4(1 - mu^2) - 2
    r = check_symmetry_conditions(12 + 4 * (1 - g.nodes**2) - 2, (1, -1), g)
    assert r.verdict is Verdict.PASS
    assert all(v > 0 for v in r.witness["laplacian_at_maximizers"])
    with pytest.raises(ValueError):
        check_symmetry_conditions(12 + 4 * g.nodes, (0,), g)


def test_symmetry_passes_on_laplacian_alternative():
    # both poles lie above the mean but are local minima of f
    g = _grid()
    f = 12 + 10 * g.nodes**2 - 7 * g.nodes**4
    r = check_symmetry_conditions(f, (1, -1), g)
    assert r.witness["max_f_on_set"] > r.witness["mean_f"]
    assert r.verdict is Verdict.PASS


# full report


def test_condition_report_round_trip():
    g = _grid()
    rep = condition_report(12 + 4 * g.nodes, g)
    assert set(rep.results) == set(CONDITION_NAMES)
    assert rep.results["i"].verdict is Verdict.PASS
    assert rep.results["ii"].verdict is Verdict.PASS
    assert rep.results["iii"].verdict is Verdict.PASS
    assert rep.results["iv"].witness["m"] == [1, 0, 0, 0, 0]
    assert rep.results["iv"].verdict is Verdict.PASS
    assert rep.results["index"].verdict is Verdict.FAIL
    assert rep.index_sum == 1
    assert rep.delta_n == pytest.approx(np.sqrt(2))
    assert rep.verdict(["i", "ii", "iii"]) is Verdict.PASS
    assert rep.verdict() is Verdict.FAIL
    again = ConditionReport.from_dict(json.loads(json.dumps(rep.to_dict())))
    assert again == rep


def test_condition_report_with_manifest():
    g = _grid()
    crit = [_cp("N", 16.0, -1, 4), _cp("M", 15.0, -1, 4), _cp("s", 14.0, -1, 3)]
    rep = condition_report(12 + 4 * g.nodes, g, manifest=crit)
    assert rep.results["iv"].witness["source"] == "manifest"
    assert rep.results["iv"].verdict is Verdict.FAIL
    assert rep.index_sum == 1


def test_condition_report_nonpositive_mean():
    g = _grid()
    rep = condition_report(g.nodes - 1, g)
    assert rep.results["i"].verdict is Verdict.FAIL
    assert rep.results["ii"].verdict is Verdict.FAIL
    assert rep.results["ii"].witness["error"] == "NONPOSITIVE_MEAN"


def test_delta_n_for_higher_dimensions():
    g = _grid(6, 32)
    assert condition_report(np.full(32, 30.0), g).delta_n == pytest.approx(2 ** 0.5)
