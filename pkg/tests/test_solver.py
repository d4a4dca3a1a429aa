import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import bisect_maxmin, grid_search_welfare, random_instance
from tradepost import (
    Instance,
    NonConvergence,
    Rho,
    ces_welfare,
    five_by_seven_instance,
    maxmin_gamma,
    solve_ces,
    solve_maxmin,
    truthful_best_utility,
    utilities,
)

COMMON = dict(deadline=None, derandomize=True)


def budget_identity_residual(inst, rho, res):
    Q = inst.weights @ res.q
    return np.max(np.abs(Q * res.u_star ** (1.0 - rho.value) - 1.0))


class TestSolveCes:
    @pytest.mark.parametrize("rv", [-2.0, -1.0, 0.0, 0.5, 0.9])
    def test_single_agent_saturates(self, rv):
        inst = Instance([2.0], [{0}])
        rho = Rho.finite(rv)
        res = solve_ces(inst, rho)
        assert res.u_star[0] == pytest.approx(2.0, abs=1e-7)
        assert res.q[0] * 2.0 ** (1.0 - rv) == pytest.approx(1.0, abs=1e-7)

    @pytest.mark.parametrize("rv", [-2.0, -1.0, -0.5, 0.0])
    def test_counterexample_low_rho(self, rv):
        # Closed form: the three-agent block gets 1/((3/2)^(1/(rho-1)) + 1).
        inst = five_by_seven_instance()
        res = solve_ces(inst, Rho.finite(rv))
        u_a = 1.0 / ((1.5) ** (1.0 / (rv - 1.0)) + 1.0)
        assert np.allclose(res.u_star[:3], u_a, atol=1e-6)
        assert np.allclose(res.u_star[3:], 1.0 - u_a, atol=1e-6)

    def test_counterexample_rho_minus_one_value(self):
        inst = five_by_seven_instance()
        res = solve_ces(inst, Rho.finite(-1.0))
        assert res.u_star[3] == pytest.approx(0.449490, abs=1e-6)
        assert res.u_star[0] == pytest.approx(0.550510, abs=1e-6)

    def test_counterexample_high_rho_capped(self):
        inst = five_by_seven_instance()
        res = solve_ces(inst, Rho.finite(0.9))
        assert np.allclose(res.u_star[:3], 2.0 / 3.0, atol=1e-6)
        assert np.allclose(res.u_star[3:], 1.0 / 3.0, atol=1e-6)

    @pytest.mark.parametrize("rv", [-2.0, -1.0, 0.0, 0.9])
    def test_lie_instance_equalizes(self, rv):
        inst = five_by_seven_instance(lie=True)
        res = solve_ces(inst, Rho.finite(rv))
        assert np.allclose(res.u_star, 0.5, atol=1e-6)

    def test_lie_instance_sum_objective(self):
        inst = five_by_seven_instance(lie=True)
        res = solve_ces(inst, Rho.one())
        assert np.allclose(res.u_star, 0.5, atol=1e-6)
        assert res.objective == pytest.approx(2.5, abs=1e-6)

    def test_sum_objective_truthful_instance(self):
        # The unique sum optimum here caps the shared block at 2/3 each.
        inst = five_by_seven_instance()
        res = solve_ces(inst, Rho.one())
        assert np.allclose(res.u_star[:3], 2.0 / 3.0, atol=1e-6)
        assert np.allclose(res.u_star[3:], 1.0 / 3.0, atol=1e-6)

    def test_sum_objective_tie_break_toward_equal(self):
        # Optimal face is u0 + u1 = 2 with u1 <= 1; the equal point wins.
        inst = Instance([2.0, 1.0], [{0}, {0, 1}])
        res = solve_ces(inst, Rho.one())
        assert np.allclose(res.u_star, [1.0, 1.0], atol=1e-6)

    def test_rejects_maxmin(self):
        inst = Instance([1.0], [{0}])
        with pytest.raises(ValueError):
            solve_ces(inst, Rho.maxmin())

    def test_nonconvergence_error(self):
        inst = five_by_seven_instance()
        with pytest.raises(NonConvergence) as err:
            solve_ces(inst, Rho.finite(-1.0), max_iter=3)
        assert err.value.iterations <= 3
        assert err.value.residual > 0

    def test_budget_identity_and_allocation_shape(self):
        inst = five_by_seven_instance()
        rho = Rho.finite(-1.0)
        res = solve_ces(inst, rho)
        assert budget_identity_residual(inst, rho, res) <= 1e-7
        # Allocation gives exactly w_ij * u_i, leftovers unallocated.
        assert np.allclose(res.x_star.x, inst.weights * res.u_star[:, None])
        assert np.all(res.u_star > 0)
        assert np.allclose(utilities(inst, res.x_star), res.u_star)

    def test_complementary_slackness(self):
        inst = five_by_seven_instance()
        res = solve_ces(inst, Rho.finite(-1.0))
        demand = res.u_star @ inst.weights
        for j in range(inst.m):
            if res.q[j] > 1e-8:
                assert abs(demand[j] - inst.supplies[j]) <= 1e-6

    def test_grid_oracle_agreement_small(self):
        rng = np.random.default_rng(11)
        for _ in range(4):
            inst = random_instance(rng, n_max=3, m_max=3)
            for rv in (-1.0, 0.5):
                rho = Rho.finite(rv)
                res = solve_ces(inst, rho)
                grid = grid_search_welfare(inst, rho)
                assert abs(res.objective - grid) <= 2e-3

    def test_limit_consistency_around_nash(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            inst = random_instance(rng, n_max=4, m_max=4)
            res0 = solve_ces(inst, Rho.nash())
            lo = solve_ces(inst, Rho.finite(-1e-4))
            hi = solve_ces(inst, Rho.finite(1e-4))
            assert np.allclose(lo.u_star, res0.u_star, atol=1e-3)
            assert np.allclose(hi.u_star, res0.u_star, atol=1e-3)

    @settings(max_examples=60, **COMMON)
    @given(st.integers(0, 10_000), st.sampled_from([0.5, 2.0, 3.7]), st.sampled_from([-2.0, 0.0, 0.5]))
    def test_scale_covariance_of_argmax(self, seed, c, rv):
        rng = np.random.default_rng(seed)
        inst = random_instance(rng, n_max=4, m_max=4)
        scaled = Instance([c * s for s in inst.supplies], [set(r) for r in inst.desired])
        rho = Rho.finite(rv)
        res = solve_ces(inst, rho)
        res_c = solve_ces(scaled, rho)
        assert np.allclose(res_c.u_star, c * res.u_star, rtol=1e-5, atol=1e-7 * c)

    def test_deterministic_across_calls(self):
        inst = five_by_seven_instance()
        a = solve_ces(inst, Rho.finite(-1.0))
        b = solve_ces(inst, Rho.finite(-1.0))
        assert np.array_equal(a.u_star, b.u_star)
        assert np.array_equal(a.q, b.q)


class TestSolveMaxmin:
    def test_even_split(self):
        inst = Instance([1.0], [{0}, {0}])
        res = solve_maxmin(inst)
        assert res.objective == pytest.approx(0.5)
        assert np.allclose(res.u_star, 0.5)

    def test_disjoint_singletons(self):
        inst = Instance([1.0] * 4, [{0}, {1}, {2}, {3}])
        res = solve_maxmin(inst)
        assert res.objective == pytest.approx(1.0)
        assert np.allclose(np.diag(res.x_star.x), 1.0)

    def test_matches_bisection_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(40):
            inst = random_instance(rng, n_max=6, m_max=6)
            res = solve_maxmin(inst)
            assert res.objective == pytest.approx(bisect_maxmin(inst), abs=1e-9)
            assert res.kkt_residual <= 1e-9

    def test_gamma_with_empty_sets(self):
        gamma, d = maxmin_gamma([1.0, 1.0], [set(), {0}])
        assert gamma == pytest.approx(1.0)
        assert list(d) == [1.0, 0.0]
        gamma, _ = maxmin_gamma([1.0], [set(), set()])
        assert gamma == 0.0


class TestObjectiveValues:
    @pytest.mark.parametrize("rv", [-2.0, 0.0, 0.5])
    def test_objective_matches_welfare_of_utilities(self, rv):
        rng = np.random.default_rng(23)
        inst = random_instance(rng, n_max=5, m_max=5)
        rho = Rho.finite(rv)
        res = solve_ces(inst, rho)
        assert res.objective == pytest.approx(ces_welfare(rho, res.u_star), rel=1e-12)

    def test_truthful_closed_form_helper(self):
        assert truthful_best_utility(-1.0) == pytest.approx(0.449490, abs=1e-6)
        assert truthful_best_utility(0.0) == pytest.approx(0.4, abs=1e-12)
        assert truthful_best_utility(0.9) == pytest.approx(1.0 / 3.0, abs=1e-12)
