import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sysrisk.analytic import (beta, brute_force_solve, kkt_solve, projected_gradient_solve,
                              solve_multi, solve_single, verify)
from sysrisk.errors import NonFiniteValue
from sysrisk.scenario import GroupPartition, RiskFactorModel, group_sums, sample
from sysrisk.utility import AcceptanceLevel, UtilityParams, aggregate


def _instance(seed, n=4, m=300):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n))
    model = RiskFactorModel(rng.uniform(0, 2, n), a @ a.T / n + 0.2 * np.eye(n))
    return sample(model, m, seed), UtilityParams(rng.uniform(0.4, 1.6, n)), AcceptanceLevel(-float(rng.uniform(1, 6)))


def test_beta_examples():
    assert beta(UtilityParams([1.0, 1.0])) == 2.0
    assert beta(UtilityParams([2.0]), [0]) == 0.5
    p = UtilityParams([0.5, 1.5, 2.0, 0.7])
    assert sum(beta(p, g) for g in [(0, 2), (1,), (3,)]) == pytest.approx(beta(p))
    with pytest.raises(ValueError):
        beta(p, [])


def test_single_trivial_binding():
    sol = solve_single(np.zeros((5, 1)), UtilityParams([1.0]), AcceptanceLevel(-1.0))
    assert sol.rho == 0.0
    assert np.all(sol.allocations == 0) and np.all(sol.densities == 1) and sol.fair[0] == 0.0


def test_single_alpha_two():
    sol = solve_single(np.zeros((3, 1)), UtilityParams([2.0]), AcceptanceLevel(-1.0))
    assert sol.rho == pytest.approx(0.5 * np.log(0.5), abs=1e-15)


def test_single_row_sums_deterministic():
    batch, _, lv = _instance(1, n=2)
    sol = solve_single(batch, UtilityParams([1.0, 1.0]), lv)
    assert np.allclose(sol.allocations.sum(axis=1), sol.rho, rtol=0, atol=1e-12)


def test_single_overflow_guard():
    with pytest.raises(NonFiniteValue):
        solve_single(np.full((2, 1), -1e4), UtilityParams([1.0]), AcceptanceLevel(-1.0))


def test_multi_reduces_to_single():
    batch, p, lv = _instance(2)
    a = solve_single(batch, p, lv)
    b = solve_multi(batch, p, GroupPartition.single(p.n), lv)
    for f in ("allocations", "densities", "fair"):
        assert np.allclose(getattr(a, f), getattr(b, f), rtol=0, atol=1e-12)
    assert a.rho == pytest.approx(b.rho, abs=1e-12)
    assert a.alpha_penalty == pytest.approx(b.alpha_penalty, abs=1e-12)


def test_multi_singletons_example():
    sol = solve_multi(np.zeros((4, 2)), UtilityParams([1.0, 1.0]), GroupPartition(((0,), (1,))), AcceptanceLevel(-2.0))
    assert np.allclose(sol.group_cash, 0.0) and sol.rho == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(1, 3), min_size=1, max_size=4))
def test_multi_ge_single(seed, sizes):
    p_ = GroupPartition.from_sizes(sizes)
    batch, p, lv = _instance(seed, n=p_.n, m=200)
    assert solve_multi(batch, p, p_, lv).rho >= solve_single(batch, p, lv).rho - 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_identities(seed):
    batch, p, lv = _instance(seed, n=5, m=500)
    part = GroupPartition.from_sizes([2, 3])
    for sol in (solve_single(batch, p, lv), solve_multi(batch, p, part, lv)):
        d = verify(sol, batch, p, sol.partition, lv)
        assert abs(d.acceptance_residual) <= 1e-9 * abs(lv.b)
        assert np.all(np.abs(d.group_sum_residuals) <= 1e-9 * (1 + np.abs(sol.group_cash)))
        assert np.allclose(d.density_means, 1.0, rtol=0, atol=1e-12)
        assert abs(d.full_allocation_residual) <= 1e-9 * max(1.0, abs(sol.rho))
        assert abs(d.dual_residual) <= 1e-9 * max(1.0, abs(sol.rho))
        assert np.sum(sol.group_cash) == pytest.approx(sol.rho, rel=1e-12, abs=1e-15)
        assert np.all(sol.densities > 0)


def test_verify_sensitivity():
    batch, p, lv = _instance(3)
    sol = solve_single(batch, p, lv)
    y = sol.allocations.copy()
    y[5, 1] += 1.0
    bumped = type(sol)(sol.rho, sol.group_cash, y, sol.densities, sol.alpha_penalty, sol.fair, sol.partition)
    d = verify(bumped, batch, p, None, lv)
    assert d.acceptance_residual != 0
    assert d.group_sum_residuals[5, 0] == pytest.approx(1.0)
    assert np.sum(np.abs(d.group_sum_residuals) > 1e-9) == 1


def test_density_decreasing_in_s():
    batch, p, lv = _instance(4)
    part = GroupPartition.from_sizes([1, 3])
    sol = solve_multi(batch, p, part, lv)
    s = group_sums(batch, part)
    for k in range(part.h):
        order = np.argsort(s[:, k])
        assert np.all(np.diff(sol.densities[order, k]) < 0)


def test_translation_covariance():
    batch, p, lv = _instance(5)
    c = 0.37
    a = solve_single(batch, p, lv)
    b = solve_single(batch.data + c, p, lv)
    assert b.rho - a.rho == pytest.approx(-p.n * c, abs=1e-12)


def test_kkt_validator_matches():
    batch, p, lv = _instance(6, n=4, m=150)
    part = GroupPartition.from_sizes([1, 3])
    rho, cash, y = kkt_solve(batch, p, part, lv)
    sol = solve_multi(batch, p, part, lv)
    assert rho == pytest.approx(sol.rho, rel=1e-9)
    assert np.allclose(cash, sol.group_cash, atol=1e-9)
    assert np.allclose(y, sol.allocations, atol=1e-8)


def test_projected_gradient_validator_matches():
    batch, p, lv = _instance(7, n=3, m=12)
    part = GroupPartition(((0, 1), (2,)))
    rho, cash, y = projected_gradient_solve(batch, p, part, lv)
    sol = solve_multi(batch, p, part, lv)
    assert rho == pytest.approx(sol.rho, rel=1e-6)
    assert np.sqrt(np.mean((y - sol.allocations) ** 2)) < 1e-5


def test_brute_force_small():
    batch, p, lv = _instance(8, n=3, m=60)
    rho, cash, y = brute_force_solve(batch, p, GroupPartition.single(3), lv)
    sol = solve_single(batch, p, lv)
    assert rho == pytest.approx(sol.rho, rel=1e-6)
    assert np.mean(aggregate(batch.data + y, p)) >= lv.b - 1e-7
