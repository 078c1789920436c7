import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sysrisk.analytic import solve_multi, solve_single
from sysrisk.errors import DimensionMismatch, ZeroReference
from sysrisk.evaluation import (FairAllocations, abs_diff, build_report, fair_estimate,
                                monotone_violations, ord, report_from_json, report_to_json)
from sysrisk.network import forward, init, zeros_like
from sysrisk.scenario import GroupPartition

vec = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=8)


def test_ord_examples():
    assert ord([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert ord([1.0, 1.0], [1.0, 2.0]) == pytest.approx(1 / 3, abs=1e-16)
    with pytest.raises(ZeroReference):
        ord([1.0], [0.0])
    with pytest.raises(DimensionMismatch):
        ord([1.0], [1.0, 2.0])


def test_ord_density_against_ones(small_problem):
    batch, p, lv = small_problem
    d = solve_single(batch, p, lv).densities[:, 0]
    assert ord(np.ones_like(d), d) == pytest.approx(np.mean(np.abs(1 - d)), rel=1e-12)


@given(vec, st.integers(-20, 20))
def test_ord_scale_invariant_exact_for_powers_of_two(v, k):
    ref = np.asarray(v) + 1.0
    if np.sum(np.abs(ref)) == 0:
        return
    est = ref[::-1] * 0.5
    c = 2.0 ** k
    assert ord(c * est, c * ref) == ord(est, ref)


@given(vec, st.floats(0.01, 100.0))
def test_ord_scale_invariant(v, c):
    ref = np.asarray(v) + 1.0
    if np.sum(np.abs(ref)) == 0:
        return
    est = ref[::-1] * 0.5
    assert ord(-c * est, -c * ref) == pytest.approx(ord(est, ref), rel=1e-12, abs=1e-15)


def test_abs_diff_examples():
    assert abs_diff(-3.84, -3.97) == pytest.approx(0.13, abs=1e-12)
    assert abs_diff(-8.66, -8.64) == pytest.approx(0.02, abs=1e-12)
    assert abs_diff(1.5, 1.5) == 0.0


def test_fair_unit_density_is_plain_mean(small_problem):
    batch, _, _ = small_problem
    net = init((3, 5, 3), seed=1)
    theta = zeros_like(init((3, 4, 1), seed=0), head="softplus_mean_normalized")
    f = fair_estimate(net, [theta], batch)
    assert np.allclose(f.per_institution, np.mean(forward(net, batch), axis=0), rtol=1e-15, atol=1e-15)
    assert f.total == pytest.approx(np.sum(f.per_institution), abs=1e-12)


def test_fair_exact_with_unit_array(small_problem):
    batch, _, _ = small_problem
    y = np.random.default_rng(0).normal(size=batch.data.shape)
    f = fair_estimate(y, [np.ones(batch.m)], batch)
    assert np.array_equal(f.per_institution, np.mean(y, axis=0))


def test_fair_analytic_plug_in(small_problem):
    batch, p, lv = small_problem
    for part in (GroupPartition.single(3), GroupPartition(((0,), (1, 2)))):
        sol = solve_multi(batch, p, part, lv)
        f = fair_estimate(sol.allocations, list(sol.densities.T), batch, part)
        assert abs(f.total - sol.rho) <= 1e-9 * max(1, abs(sol.rho))
        assert np.allclose(f.per_institution, sol.fair, atol=1e-12)


def test_fair_dimension_checks(small_problem):
    batch, _, _ = small_problem
    with pytest.raises(DimensionMismatch):
        fair_estimate(np.zeros((batch.m, 2)), [np.ones(batch.m)], batch)
    with pytest.raises(DimensionMismatch):
        fair_estimate(np.zeros(batch.data.shape), [np.ones(batch.m)] * 2, batch)


def test_fair_total_invariant():
    f = FairAllocations.from_vector([0.1, 0.2, -0.7])
    assert abs(f.total - np.sum(f.per_institution)) <= 1e-12


def test_monotone_violations():
    s = np.array([3.0, 1.0, 2.0])
    assert monotone_violations(s, -s) == 0.0
    assert monotone_violations(s, s) == 1.0


def _violations_bruteforce(s, d):
    bad = total = 0
    for i in range(len(s)):
        for j in range(len(s)):
            if s[i] < s[j]:
                total += 1
                bad += d[i] <= d[j]
    return bad / total if total else 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-4, 4), st.integers(-4, 4)), min_size=0, max_size=25))
def test_monotone_violations_matches_pair_count(pairs):
    s = np.array([p[0] for p in pairs], dtype=float)
    d = np.array([p[1] for p in pairs], dtype=float)
    assert abs(monotone_violations(s, d) - _violations_bruteforce(s, d)) <= 1e-15


def test_monotone_violations_ignores_neighbour_noise():
    rng = np.random.default_rng(0)
    s = rng.normal(size=4000)
    d = np.exp(-s) * (1 + 0.05 * rng.normal(size=s.size))
    assert monotone_violations(s, d) < 0.05


def test_report_roundtrip_byte_identical():
    rep = build_report({"a": [0.1, 1 / 3]}, {"train": 1, "test": 2}, analytic={"rho": -4.03},
                       primal=None, dual={"x": np.array([1e-300, 2.5])}, fair=None,
                       metrics={"ok": True}, runtime_seconds=1.25)
    text = report_to_json(rep)
    again = report_to_json(report_from_json(text))
    assert text == again
    assert set(report_from_json(text)) >= {"schema", "config", "analytic", "primal", "dual", "fair",
                                           "metrics", "runtime_seconds", "seeds"}
    with pytest.raises(ValueError):
        report_from_json('{"schema": "other"}')
