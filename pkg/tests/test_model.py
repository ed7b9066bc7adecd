import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpmec.errors import EvaluationError, InvalidDecodingOrder
from wpmec.model import (Allocation, EhParams, Regime, SystemParams,
                         UserParams, evaluate, feasibility_residuals,
                         harvested_energy, harvested_power, local_bits,
                         local_energy, offload_bits_noma,
                         offload_bits_tdma, residual_scales, sample_users,
                         zero_allocation)


def _eh_reference(p_in, eh: EhParams):
    """Independent high-precision recomputation of the harvester curve."""
    from mpmath import mp, mpf, exp
    mp.dps = 50
    c0 = exp(-mpf(eh.mu) * mpf(eh.P0) + mpf(eh.psi))
    sig = exp(-mpf(eh.mu) * mpf(p_in) + mpf(eh.psi))
    val = (mpf(eh.P_max) / c0) * ((1 + c0) / (1 + sig) - 1)
    return float(max(val, 0))


class TestHarvest:
    def test_zero_exactly_at_sensitivity_threshold(self, table_iv):
        sysp = table_iv()
        u = UserParams(h=1.0, g=1e-6)
        Ps = sysp.eh.P0 / u.h
        assert harvested_energy(0.7, Ps, u, sysp) == 0.0
        assert harvested_energy(0.0, Ps, u, sysp) == 0.0

    def test_saturates_at_max_power(self, table_iv):
        sysp = table_iv()
        u = UserParams(h=1.0, g=1e-6)
        assert harvested_energy(1.0, 10.0, u, sysp) == pytest.approx(
            sysp.eh.P_max, abs=1e-9)

    def test_matches_high_precision_reference(self, table_iv):
        sysp = table_iv()
        u = UserParams(h=1.0, g=1e-6)
        got = harvested_energy(1.0, 1e-3, u, sysp)
        want = _eh_reference(1e-3, sysp.eh)
        assert got == pytest.approx(want, rel=1e-12)
        assert got == pytest.approx(5.5283e-4, rel=1e-4)

    def test_linear_baseline(self):
        sysp = SystemParams(eh=EhParams(kind="linear", varrho=0.5))
        u = UserParams(h=0.4, g=1e-6)
        assert harvested_energy(0.5, 0.02, u, sysp) == pytest.approx(
            0.5 * 0.5 * 0.4 * 0.02)

    def test_negative_inputs_rejected(self, table_iv):
        u = UserParams(h=1.0, g=1e-6)
        with pytest.raises(ValueError):
            harvested_energy(-0.1, 0.01, u, table_iv())

    @settings(max_examples=200, deadline=None)
    @given(ps=st.floats(0.0, 10.0), h=st.floats(0.0, 2.0))
    def test_power_never_exceeds_cap(self, ps, h):
        sysp = SystemParams()
        u = UserParams(h=h, g=1e-6)
        assert harvested_power(ps, u, sysp) <= sysp.eh.P_max + 1e-12

    @settings(max_examples=200, deadline=None)
    @given(ps=st.floats(0.0, 1.0), dps=st.floats(0.0, 1.0),
           h=st.floats(0.0, 2.0))
    def test_power_nondecreasing_in_station_power(self, ps, dps, h):
        sysp = SystemParams()
        u = UserParams(h=h, g=1e-6)
        assert harvested_power(ps + dps, u, sysp) \
            >= harvested_power(ps, u, sysp) - 1e-18


class TestOffloadBits:
    def test_log2_identity(self):
        sysp = SystemParams()
        u = UserParams(h=1.0, g=1e-6, v=1.0)
        P = sysp.sigma2 / u.g          # unit SNR
        assert offload_bits_tdma(0.1, P, u, sysp) == pytest.approx(2e5)

    def test_zero_power_zero_bits(self):
        u = UserParams(h=1.0, g=1e-6)
        assert offload_bits_tdma(0.1, 0.0, u, SystemParams()) == 0.0
        assert offload_bits_tdma(0.0, 1.0, u, SystemParams()) == 0.0

    def test_formula_against_arbitrary_precision(self):
        from mpmath import mp, mpf, log
        mp.dps = 50
        sysp = SystemParams()
        u = UserParams(h=1.0, g=1e-6, v=1.1)
        P = 3.0 * sysp.sigma2 / u.g    # SNR = 3
        want = float(mpf(2e6) * mpf("0.1") / mpf("1.1")
                     * log(mpf(4), 2))
        assert offload_bits_tdma(0.1, P, u, sysp) == pytest.approx(
            want, rel=1e-12)

    def test_monotone_in_power(self):
        sysp = SystemParams()
        u = UserParams(h=1.0, g=1e-6)
        bits = [offload_bits_tdma(0.1, p, u, sysp)
                for p in np.linspace(1e-6, 1e-2, 50)]
        assert np.all(np.diff(bits) > 0)


class TestNomaBits:
    def _pair(self, v=1.0):
        sysp = SystemParams(K=2)
        g1, g2 = 1e-6, 2e-6
        users = [UserParams(h=1.0, g=g1, v=v),
                 UserParams(h=1.0, g=g2, v=v)]
        sigma2 = sysp.sigma2
        P = np.array([sigma2 / g1, sigma2 / g2])   # g_k P_k = sigma2 each
        return sysp, users, P

    def test_strongest_user_interference_free(self):
        sysp, users, P = self._pair()
        got = offload_bits_noma(0.1, P, 1, users, sysp)
        assert got == pytest.approx(2e5)
        assert got == pytest.approx(
            offload_bits_tdma(0.1, float(P[1]), users[1], sysp))

    def test_weak_user_sees_interference(self):
        from mpmath import mp, mpf, log
        mp.dps = 50
        sysp, users, P = self._pair()
        want = float(mpf(2e5) * log(mpf(3) / 2, 2))
        assert offload_bits_noma(0.1, P, 0, users, sysp) == pytest.approx(
            want, rel=1e-12)

    def test_zero_power_user(self):
        sysp, users, P = self._pair()
        P = P.copy()
        P[0] = 0.0
        assert offload_bits_noma(0.1, P, 0, users, sysp) == 0.0

    def test_unsorted_gains_rejected(self):
        sysp = SystemParams(K=2)
        users = [UserParams(h=1.0, g=2e-6), UserParams(h=1.0, g=1e-6)]
        with pytest.raises(InvalidDecodingOrder):
            offload_bits_noma(0.1, np.array([1e-3, 1e-3]), 0, users, sysp)

    def test_interference_only_hurts(self):
        sysp = SystemParams(K=3)
        users = [UserParams(h=1.0, g=g) for g in (1e-6, 2e-6, 4e-6)]
        P = np.full(3, 1e-3)
        total = sum(offload_bits_noma(0.1, P, k, users, sysp)
                    for k in range(3))
        solo = sum(offload_bits_tdma(0.1, 1e-3, u, sysp) for u in users)
        assert total <= solo + 1e-9


class TestLocal:
    def test_bits_arithmetic(self):
        assert local_bits(1e6, SystemParams()) == pytest.approx(1000.0)

    def test_energy_arithmetic(self):
        assert local_energy(1e6, SystemParams()) == pytest.approx(1e-10)

    def test_idle(self):
        sysp = SystemParams()
        assert local_bits(0.0, sysp) == 0.0
        assert local_energy(0.0, sysp) == 0.0


class TestEvaluate:
    def _alloc(self, K=2, regime=Regime.TDMA_PARTIAL, alpha=None):
        kw = dict(tau0=0.4, P=np.array([1e-3, 2e-3][:K]),
                  f=np.array([1e7, 2e7][:K]), Ps=0.025)
        if regime.is_noma:
            kw["tau1"] = 0.2
        else:
            kw["tau"] = np.array([0.2, 0.3][:K])
        if alpha is not None:
            kw["alpha"] = np.asarray(alpha, float)
        return Allocation(**kw)

    def test_binary_alpha_zero_collapses_to_local_only(self, table_iv,
                                                       default_users):
        sysp = table_iv(K=2)
        alloc = self._alloc(regime=Regime.TDMA_BINARY, alpha=[0.0, 0.0])
        got = evaluate(alloc, Regime.TDMA_BINARY, default_users, sysp)
        for k, u in enumerate(default_users):
            bits = sysp.T * alloc.f[k] / sysp.C
            energy = alloc.tau0 * u.P_r \
                + sysp.T * sysp.gamma_c * alloc.f[k] ** 3
            assert got[k].bits == pytest.approx(bits, rel=1e-15)
            assert got[k].energy == pytest.approx(energy, rel=1e-15)

    def test_binary_alpha_one_collapses_to_offload_only(self, table_iv,
                                                        default_users):
        sysp = table_iv(K=2)
        alloc = self._alloc(regime=Regime.TDMA_BINARY, alpha=[1.0, 1.0])
        got = evaluate(alloc, Regime.TDMA_BINARY, default_users, sysp)
        for k, u in enumerate(default_users):
            bits = offload_bits_tdma(float(alloc.tau[k]),
                                     float(alloc.P[k]), u, sysp)
            energy = alloc.tau0 * u.P_r + sysp.zeta * alloc.tau[k] \
                * (alloc.P[k] + u.P_c)
            assert got[k].bits == pytest.approx(bits, rel=1e-15)
            assert got[k].energy == pytest.approx(energy, rel=1e-15)

    def test_partial_matches_hand_recomputation(self, table_iv,
                                                default_users):
        sysp = table_iv(K=2)
        alloc = self._alloc()
        got = evaluate(alloc, Regime.TDMA_PARTIAL, default_users, sysp)
        for k, u in enumerate(default_users):
            snr = u.g * alloc.P[k] / sysp.sigma2
            bits = sysp.T * alloc.f[k] / sysp.C \
                + sysp.B * alloc.tau[k] / u.v * math.log2(1 + snr)
            energy = (alloc.tau0 * u.P_r
                      + sysp.zeta * alloc.tau[k] * (alloc.P[k] + u.P_c)
                      + sysp.T * sysp.gamma_c * alloc.f[k] ** 3)
            assert got[k].bits == pytest.approx(bits, rel=1e-14)
            assert got[k].energy == pytest.approx(energy, rel=1e-14)
            assert got[k].ce == pytest.approx(bits / energy, rel=1e-14)

    def test_noma_binary_alpha_weights_interference(self, table_iv,
                                                    default_users):
        sysp = table_iv(K=2)
        alloc = self._alloc(regime=Regime.NOMA_BINARY, alpha=[1.0, 0.0])
        got = evaluate(alloc, Regime.NOMA_BINARY, default_users, sysp)
        u = default_users[0]
        snr = u.g * alloc.P[0] / sysp.sigma2   # interferer weighted out
        bits = sysp.B * alloc.tau1 / u.v * math.log2(1 + snr)
        assert got[0].bits == pytest.approx(bits, rel=1e-14)

    def test_zero_bits_zero_energy_gives_zero_ce(self, table_iv):
        sysp = table_iv(K=1)
        users = [UserParams(h=1.0, g=1e-6, R_min=0.0)]
        alloc = zero_allocation(1, Regime.TDMA_PARTIAL, 0.025)
        got = evaluate(alloc, Regime.TDMA_PARTIAL, users, sysp)
        assert got[0].ce == 0.0

    def test_deterministic(self, table_iv, default_users):
        sysp = table_iv(K=2)
        alloc = self._alloc()
        a = evaluate(alloc, Regime.TDMA_PARTIAL, default_users, sysp)
        b = evaluate(alloc, Regime.TDMA_PARTIAL, default_users, sysp)
        assert all(x.bits == y.bits and x.energy == y.energy
                   and x.ce == y.ce for x, y in zip(a, b))

    def test_ce_halves_when_cycles_per_bit_double(self, default_users):
        alloc = Allocation(tau0=0.2, tau=np.zeros(2), P=np.zeros(2),
                           f=np.array([1e7, 1e7]), Ps=0.025)
        base = evaluate(alloc, Regime.TDMA_PARTIAL, default_users,
                        SystemParams(K=2, C=1e3))
        doubled = evaluate(alloc, Regime.TDMA_PARTIAL, default_users,
                           SystemParams(K=2, C=2e3))
        for m0, m1 in zip(base, doubled):
            assert m1.ce == pytest.approx(m0.ce / 2.0, rel=1e-12)


class TestResiduals:
    def test_all_zero_alloc_feasible_without_bit_floor(self, table_iv):
        sysp = table_iv(K=1)
        users = [UserParams(h=1.0, g=1e-6, R_min=0.0)]
        alloc = zero_allocation(1, Regime.TDMA_PARTIAL, 0.025)
        res = feasibility_residuals(alloc, Regime.TDMA_PARTIAL, users,
                                    sysp)
        assert np.all(res <= 0.0)

    def test_time_budget_violation_detected(self, table_iv, default_users):
        sysp = table_iv(K=2)
        alloc = Allocation(tau0=sysp.T, tau=np.array([0.1, 0.0]),
                           P=np.zeros(2), f=np.zeros(2), Ps=0.025)
        res = feasibility_residuals(alloc, Regime.TDMA_PARTIAL,
                                    default_users, sysp)
        assert res.max() > 0.0

    def test_harvest_boundary_is_tight(self, table_iv):
        sysp = table_iv(K=1)
        u = UserParams(h=1.0, g=1e-6, R_min=0.0)
        tau0 = 0.5
        harvested = harvested_energy(tau0, 0.025, u, sysp)
        spend_budget = harvested - tau0 * u.P_r
        f = (spend_budget / (sysp.T * sysp.gamma_c)) ** (1.0 / 3.0)
        alloc = Allocation(tau0=tau0, tau=np.zeros(1), P=np.zeros(1),
                           f=np.array([f]), Ps=0.025)
        res = feasibility_residuals(alloc, Regime.TDMA_PARTIAL, [u], sysp)
        assert abs(res[1]) <= 1e-12 * max(harvested, 1.0)

    def test_scales_match_residual_vector(self, table_iv, default_users):
        sysp = table_iv(K=2)
        for regime in Regime:
            alloc = zero_allocation(2, regime, 0.025)
            res = feasibility_residuals(
                alloc, regime,
                [UserParams(h=1.0, g=1e-6, R_min=0.0),
                 UserParams(h=1.0, g=2e-6, R_min=0.0)], sysp)
            assert res.shape == residual_scales(regime, default_users,
                                                sysp).shape


class TestSampling:
    def test_sorted_and_reproducible(self):
        a = sample_users(5, np.random.default_rng(7))
        b = sample_users(5, np.random.default_rng(7))
        assert [u.g for u in a] == [u.g for u in b]
        assert all(a[i].g <= a[i + 1].g for i in range(4))

    def test_validation(self):
        with pytest.raises(ValueError):
            UserParams(h=-1.0, g=1e-6)
        with pytest.raises(ValueError):
            UserParams(h=1.0, g=1e-6, v=0.5)
        with pytest.raises(ValueError):
            SystemParams(C=0.5)
        with pytest.raises(ValueError):
            EhParams(kind="quadratic")
