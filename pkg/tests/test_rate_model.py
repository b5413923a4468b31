import numpy as np
import pytest

from risnoma.driver import initialize, normalized_view
from risnoma.errors import ConfigError, DimensionError
from risnoma.rate_model import (BeamformingState, GainTable, PowerSolution,
                                cascade_rows, decoding_order, effective_gain,
                                gain_matrix, gain_table, leakage_ok,
                                received_signal, sinr, sum_rate)


def _random_state(cfg, channels, seed=0):
    _, state = initialize(cfg, normalized_view(channels, cfg).channels,
                          np.random.default_rng(seed))
    return state


def _gain_oracle(h, theta, G, F, w):
    """Element-by-element recomputation of |h^H Theta G F w|^2."""
    acc = 0.0 + 0.0j
    Fw = np.zeros(G.shape[1], dtype=complex)
    for a in range(F.shape[0]):
        Fw[a] = sum(F[a, b] * w[b] for b in range(F.shape[1]))
    Gfw = np.zeros(G.shape[0], dtype=complex)
    for m in range(G.shape[0]):
        Gfw[m] = sum(G[m, a] * Fw[a] for a in range(G.shape[1]))
    for m in range(len(h)):
        acc += np.conj(h[m]) * theta[m] * Gfw[m]
    return abs(acc) ** 2


class TestEffectiveGain:
    def test_zero_beamformer(self):
        rng = np.random.default_rng(0)
        h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        theta = np.exp(1j * rng.uniform(0, 2 * np.pi, 4))
        G = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
        F = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
        assert effective_gain(h, theta, G, F, np.zeros(2)) == 0.0

    def test_all_scalars_one(self):
        one = np.ones(1, dtype=complex)
        assert effective_gain(one, one, np.eye(1, dtype=complex),
                              np.eye(1, dtype=complex), one) == pytest.approx(1.0)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            h = rng.standard_normal(5) + 1j * rng.standard_normal(5)
            theta = np.exp(1j * rng.uniform(0, 2 * np.pi, 5))
            G = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
            F = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
            w = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            got = effective_gain(h, theta, G, F, w)
            assert got == pytest.approx(_gain_oracle(h, theta, G, F, w), rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            effective_gain(np.ones(3), np.ones(4), np.eye(4), np.eye(4), np.ones(4))

    def test_phase_invariance(self, desk_cfg, desk_channels):
        # multiplying any w_n by a unit-modulus scalar changes no gain
        state = _random_state(desk_cfg, desk_channels)
        nch = normalized_view(desk_channels, desk_cfg).channels
        g0 = gain_matrix(nch, state)
        state2 = state.copy()
        state2.digital = state.digital * np.exp(1j * 0.7)
        np.testing.assert_allclose(gain_matrix(nch, state2), g0, rtol=1e-12)


class TestDecodingOrder:
    def test_sorting_oracle(self):
        order = decoding_order([np.array([3.0, 1.0, 2.0])])
        np.testing.assert_array_equal(order[0], [0, 2, 1])

    def test_singleton(self):
        np.testing.assert_array_equal(decoding_order([np.array([5.0])])[0], [0])

    def test_tie_breaks_by_index(self):
        np.testing.assert_array_equal(decoding_order([np.array([2.0, 2.0])])[0],
                                      [0, 1])

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            decoding_order([np.array([1.0, np.nan])])


class TestSinr:
    def table(self, g=1.0):
        return GainTable(own=[np.array([g, g])])

    def powers(self):
        return PowerSolution(group_powers=np.array([1.0]),
                             user_powers=[np.array([0.2, 0.8])])

    def test_zero_power_zero_sinr(self):
        p = PowerSolution(group_powers=np.array([1.0]),
                          user_powers=[np.array([1.0, 0.0])])
        assert sinr(0, 1, self.table(), p, 1.0) == 0.0

    def test_strongest_sees_noise_only(self):
        got = sinr(0, 0, self.table(2.0), self.powers(), 0.5)
        assert got == pytest.approx(2.0 * 0.2 / 0.5)

    def test_hand_example(self):
        # g=1, sigma2=1, powers (0.2, 0.8): weak user gets 0.8/1.2
        got = sinr(0, 1, self.table(), self.powers(), 1.0)
        assert got == pytest.approx(2.0 / 3.0)

    def test_full_mode_never_exceeds_approx(self, desk_cfg, desk_channels):
        state = _random_state(desk_cfg, desk_channels)
        nch = normalized_view(desk_channels, desk_cfg).channels
        table, _ = gain_table(nch, state, group_sizes=desk_cfg.group_sizes)
        powers = PowerSolution(group_powers=np.array([0.5, 0.5]),
                               user_powers=[np.array([0.2, 0.3])] * 2)
        for n in range(2):
            for k in range(2):
                a = sinr(n, k, table, powers, 1e-3, "approx")
                f = sinr(n, k, table, powers, 1e-3, "full")
                assert f <= a + 1e-15

    def test_monotone_in_own_power(self):
        vals = [sinr(0, 1, self.table(),
                     PowerSolution(group_powers=np.array([0.2 + p]),
                                   user_powers=[np.array([0.2, p])]), 1.0)
                for p in (0.1, 0.5, 1.0, 2.0)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_bad_noise_rejected(self):
        with pytest.raises(ConfigError):
            sinr(0, 0, self.table(), self.powers(), 0.0)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            sinr(0, 0, self.table(), self.powers(), 1.0, "bogus")


class TestSumRate:
    def test_all_zero_powers(self):
        table = GainTable(own=[np.array([1.0, 1.0])])
        powers = PowerSolution(group_powers=np.array([0.0]),
                               user_powers=[np.zeros(2)])
        total, per = sum_rate(table, powers, 1.0)
        assert total == 0.0
        np.testing.assert_array_equal(per[0], [0.0, 0.0])

    def test_single_user_unit_snr(self):
        table = GainTable(own=[np.array([1.0])])
        powers = PowerSolution(group_powers=np.array([1.0]),
                               user_powers=[np.array([1.0])])
        total, per = sum_rate(table, powers, 1.0)
        assert total == pytest.approx(1.0)   # log2(2)

    def test_equals_per_user_sum(self, desk_cfg, desk_channels):
        state = _random_state(desk_cfg, desk_channels)
        nch = normalized_view(desk_channels, desk_cfg).channels
        table, _ = gain_table(nch, state, group_sizes=desk_cfg.group_sizes)
        powers = PowerSolution(group_powers=np.array([0.6, 0.4]),
                               user_powers=[np.array([0.25, 0.35]),
                                            np.array([0.15, 0.25])])
        total, per = sum_rate(table, powers, 1e-3)
        # independent per-user oracle summation
        oracle = sum(np.log2(1.0 + sinr(n, k, table, powers, 1e-3))
                     for n in range(2) for k in range(2))
        assert total == pytest.approx(oracle, rel=1e-14)
        assert total == pytest.approx(sum(r.sum() for r in per), rel=1e-14)
        assert total >= 0.0


class TestLeakage:
    def test_zero_cross_beams_ok(self, desk_cfg, desk_channels):
        state = _random_state(desk_cfg, desk_channels)
        state.digital[:, 1] = 0.0     # beam 2 silent
        nch = normalized_view(desk_channels, desk_cfg).channels
        flags, worst = leakage_ok(state, nch, tau=1e-30)
        assert np.all(flags[1][:, 0] | True)
        # group-0 users vs beam 1 must pass (beam silent)
        assert np.all(flags[0][:, 1])

    def test_infinite_tau(self, desk_cfg, desk_channels):
        state = _random_state(desk_cfg, desk_channels)
        nch = normalized_view(desk_channels, desk_cfg).channels
        flags, worst = leakage_ok(state, nch, tau=np.inf)
        assert all(np.all(f) for f in flags)
        assert worst > 0.0

    def test_zero_tau_fails(self, desk_cfg, desk_channels):
        state = _random_state(desk_cfg, desk_channels)
        nch = normalized_view(desk_channels, desk_cfg).channels
        flags, worst = leakage_ok(state, nch, tau=0.0)
        assert not all(np.all(f) for f in flags)
        assert worst > 0.0


class TestReceivedSignal:
    def test_all_zero(self, desk_cfg, desk_channels):
        state = _random_state(desk_cfg, desk_channels)
        powers = PowerSolution(group_powers=np.array([0.5, 0.5]),
                               user_powers=[np.array([0.25, 0.25])] * 2)
        order = [np.array([0, 1]), np.array([0, 1])]
        y = received_signal(state, powers, desk_channels,
                            np.zeros(4, dtype=complex), np.zeros(4, dtype=complex),
                            order)
        np.testing.assert_array_equal(y, np.zeros(4))

    def test_scalar_system(self):
        from risnoma.scenario import ChannelSet, ScenarioConfig
        cfg = ScenarioConfig.desk(n_tx_antennas=1, n_ris_elements=1,
                                  n_rf_chains=1, n_users=1, group_sizes=(1,))
        ch = ChannelSet(ap_ris=np.eye(1, dtype=complex),
                        ris_user=[np.ones((1, 1), dtype=complex)])
        one = np.ones((1, 1), dtype=complex)
        state = BeamformingState(theta=np.ones(1, dtype=complex), analog=one,
                                 digital=one, hybrid=one, analog_modulus=1.0)
        powers = PowerSolution(group_powers=np.array([4.0]),
                               user_powers=[np.array([4.0])])
        s = np.array([1 + 1j])
        u = np.array([0.5 - 0.5j])
        y = received_signal(state, powers, ch, s, u, [np.array([0])])
        np.testing.assert_allclose(y, np.sqrt(4.0) * s + u)

    def test_matrix_chain_oracle(self, desk_cfg, desk_channels):
        state = _random_state(desk_cfg, desk_channels, seed=4)
        rng = np.random.default_rng(9)
        powers = PowerSolution(group_powers=np.array([0.5, 0.5]),
                               user_powers=[np.array([0.3, 0.2]),
                                            np.array([0.4, 0.1])])
        order = [np.array([1, 0]), np.array([0, 1])]
        s = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        u = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        y = received_signal(state, powers, desk_channels, s, u, order)
        # independent oracle: x = F W P s with P scattering sqrt(p)
        p_flat = np.empty(4)
        p_flat[order[0]] = powers.user_powers[0]
        p_flat[2 + order[1]] = powers.user_powers[1]
        streams = np.array([np.sum(np.sqrt(p_flat[:2]) * s[:2]),
                            np.sum(np.sqrt(p_flat[2:]) * s[2:])])
        x = state.analog @ state.digital @ streams
        H = desk_channels.stacked_users()
        expect = H.conj() @ (state.theta * (desk_channels.ap_ris @ x)) + u
        np.testing.assert_allclose(y, expect, rtol=1e-12)

    def test_dimension_check(self, desk_cfg, desk_channels):
        state = _random_state(desk_cfg, desk_channels)
        powers = PowerSolution(group_powers=np.array([0.5, 0.5]),
                               user_powers=[np.array([0.25, 0.25])] * 2)
        with pytest.raises(DimensionError):
            received_signal(state, powers, desk_channels, np.zeros(3),
                            np.zeros(4), [np.array([0, 1])] * 2)


class TestStateInvariants:
    def test_validate_passes_on_feasible(self, desk_cfg, desk_channels):
        state = _random_state(desk_cfg, desk_channels)
        state.validate(atol=1e-9)

    def test_validate_rejects_bad_theta(self, desk_cfg, desk_channels):
        state = _random_state(desk_cfg, desk_channels)
        state.theta = state.theta * 1.01
        with pytest.raises(ValueError):
            state.validate(atol=1e-9)

    def test_power_solution_validation(self):
        ps = PowerSolution(group_powers=np.array([1.0]),
                           user_powers=[np.array([0.4, 0.6])])
        ps.validate(total_power=1.0)
        bad = PowerSolution(group_powers=np.array([1.0]),
                            user_powers=[np.array([0.5, 0.6])])
        with pytest.raises(ValueError):
            bad.validate(total_power=1.0)

    def test_cascade_rows_match_effective_gain(self, desk_cfg, desk_channels):
        state = _random_state(desk_cfg, desk_channels)
        rows = cascade_rows(desk_channels, state)
        H = desk_channels.stacked_users()
        for u in range(desk_cfg.n_users):
            for i in range(desk_cfg.n_groups):
                g = effective_gain(H[u], state.theta, desk_channels.ap_ris,
                                   state.analog, state.digital[:, i])
                assert abs(rows[u, i]) ** 2 == pytest.approx(g, rel=1e-12)
