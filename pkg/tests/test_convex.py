import numpy as np
import pytest

from wpmec.convex import _PolyPersp, solve_p3, solve_p6
from wpmec.errors import Infeasible
from wpmec.kkt import lagrangian_df, lagrangian_dy
from wpmec.model import (Regime, SystemParams, UserParams,
                         feasibility_residuals, residual_scales)
from wpmec.oracle import GridSpec, grid_maxmin


class TestDegenerate:
    def test_below_sensitivity_all_idle(self, table_iv):
        sysp = table_iv(K=1, P_th=5e-5)
        u = UserParams(h=1.0, g=1e-6, R_min=0.0)
        sol = solve_p3(0.0, [u], sysp)
        assert sol.upsilon == 0.0
        assert sol.alloc.tau0 == 0.0
        assert np.all(sol.alloc.f == 0.0)

    def test_below_sensitivity_with_bit_floor_infeasible(self, table_iv):
        sysp = table_iv(K=1, P_th=5e-5)
        u = UserParams(h=1.0, g=1e-6, R_min=1e4)
        with pytest.raises(Infeasible):
            solve_p3(0.0, [u], sysp)

    def test_unreachable_bit_floor_infeasible(self, table_iv):
        sysp = table_iv(K=1)
        u = UserParams(h=1.0, g=1e-6, R_min=1e9)
        with pytest.raises(Infeasible) as exc:
            solve_p3(0.0, [u], sysp)
        assert np.isfinite(exc.value.certificate)


class TestSolveP3:
    def test_bits_objective_matches_grid_oracle(self, table_iv,
                                                single_user):
        sysp = table_iv(K=1)
        sol = solve_p3(0.0, [single_user], sysp)
        _, oracle_val = grid_maxmin(Regime.TDMA_PARTIAL, [single_user],
                                    sysp, objective="bits")
        assert sol.upsilon >= oracle_val * 0.98

    def test_symmetric_instance_symmetric_solution(self, table_iv):
        sysp = table_iv(K=2)
        users = [UserParams(h=0.8, g=2e-6, R_min=1e4)] * 2
        sol = solve_p3(0.0, users, sysp)
        assert sol.alloc.tau[0] == pytest.approx(sol.alloc.tau[1],
                                                 rel=1e-6)
        assert sol.alloc.P[0] == pytest.approx(sol.alloc.P[1], rel=1e-6)
        assert sol.alloc.f[0] == pytest.approx(sol.alloc.f[1], rel=1e-6)

    def test_feasible_and_certified(self, table_iv, default_users):
        sysp = table_iv(K=2)
        for eta in (0.0, 1e9, 1e10):
            sol = solve_p3(eta, default_users, sysp)
            res = feasibility_residuals(sol.alloc, Regime.TDMA_PARTIAL,
                                        default_users, sysp)
            scales = residual_scales(Regime.TDMA_PARTIAL, default_users,
                                     sysp)
            assert np.all(res <= 1e-8 * scales)
            assert sol.kkt_residual <= 1e-8

    def test_parametric_value_nonincreasing_in_eta(self, table_iv,
                                                   single_user):
        sysp = table_iv(K=1)
        vals = [solve_p3(eta, [single_user], sysp).upsilon
                for eta in (0.0, 1e8, 1e9, 1e10, 3e10)]
        assert all(a >= b - 1e-9 * max(1, abs(a))
                   for a, b in zip(vals, vals[1:]))

    def test_epigraph_weights_sum_to_one(self, table_iv, single_user):
        sol = solve_p3(1e9, [single_user], table_iv(K=1))
        assert float(np.sum(sol.duals.theta)) == pytest.approx(1.0,
                                                               abs=1e-6)

    def test_stationarity_of_returned_multipliers(self, table_iv,
                                                  default_users):
        sysp = table_iv(K=2)
        sol = solve_p3(1e9, default_users, sysp)
        for k, u in enumerate(default_users):
            if sol.alloc.f[k] > 0:
                df = lagrangian_df(sol.duals, k, 1e9, sol.alloc.f[k], sysp)
                assert abs(df) <= 1e-6 * max(1.0, sysp.T / sysp.C)
            if sol.alloc.tau[k] > 0 and sol.y[k] > 0:
                dy = lagrangian_dy(sol.duals, k, 1e9, sol.alloc.tau[k],
                                   sol.y[k], u, sysp)
                scale = sysp.zeta * (sol.duals.theta[k] * 1e9
                                     + sol.duals.rho[k])
                assert abs(dy) <= 1e-6 * max(1.0, scale)


class TestSolveP6:
    def test_all_offload_matches_p3_when_local_idle(self, table_iv):
        # local computing priced out by a big chip capacitance
        sysp = SystemParams(K=1, P_th=0.025, gamma_c=1e-18)
        u = UserParams(h=0.8, g=2e-6, R_min=1e4)
        p3 = solve_p3(1e8, [u], sysp)
        assert p3.alloc.f[0] <= 1e3      # effectively zero
        p6 = solve_p6(1e8, np.array([1.0]), [u], sysp)
        assert p6.upsilon == pytest.approx(p3.upsilon, rel=1e-6, abs=1e-3)

    def test_all_local_drops_offload_variables(self, table_iv,
                                               single_user):
        sol = solve_p6(1e8, np.array([0.0]), [single_user], table_iv(K=1))
        assert sol.alloc.tau[0] == 0.0
        assert sol.alloc.P[0] == 0.0
        assert sol.y[0] == 0.0

    def test_fractional_alpha_matches_blend_oracle(self, table_iv,
                                                   single_user):
        from wpmec.oracle import _grid_fixed_modes
        sysp = table_iv(K=1)
        sol = solve_p6(0.0, np.array([0.5]), [single_user], sysp)
        _, oracle_val = _grid_fixed_modes(
            Regime.TDMA_BINARY, [single_user], sysp,
            GridSpec(n_tau=16, n_p=24, n_f=24), "bits", None,
            np.array([0.5]))
        assert sol.upsilon >= oracle_val * 0.98

    def test_alpha_domain_checked(self, table_iv, single_user):
        with pytest.raises(ValueError):
            solve_p6(0.0, np.array([1.5]), [single_user], table_iv(K=1))


class TestPerspectiveTerm:
    def test_continuous_extension_near_zero_slot(self):
        fn = _PolyPersp(2, persp=[(0, 1, 2.0, 1.0)])
        ratio_fixed = [fn.value(np.array([t, 3.0 * t]))
                       for t in (1e-6, 1e-9, 1e-12)]
        # tau * log(1 + a*y/tau) with y = 3 tau tends to tau*log(7): -> 0
        assert all(abs(v) <= 2e-6 for v in ratio_fixed)
        assert fn.value(np.array([-1e-12, 1.0])) == np.inf

    def test_gradient_matches_finite_differences(self):
        fn = _PolyPersp(2, persp=[(0, 1, 1.7, 2.3)],
                        cubic=[(1, 0.4)], lin=np.array([0.1, -0.2]))
        x = np.array([0.3, 0.7])
        g = fn.grad(x)
        h = 1e-7
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (fn.value(x + e) - fn.value(x - e)) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-6)
