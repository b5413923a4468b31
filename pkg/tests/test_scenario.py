import dataclasses
import math

import numpy as np
import pytest

from risnoma.errors import ConfigError, DimensionError, GeometryError
from risnoma.scenario import (ScenarioConfig, gen_ap_ris_channel, gen_channels,
                              gen_direct_channels, gen_ris_user_channels,
                              path_loss_db, ula_response, user_distances)


class TestUlaResponse:
    def test_zero_angle_all_ones(self):
        np.testing.assert_allclose(ula_response(4, 0.0), 0.5 * np.ones(4))

    def test_single_element(self):
        np.testing.assert_allclose(ula_response(1, 1.234), [1.0])

    def test_two_elements_broadside(self):
        # exp(j*pi*sin(pi/2)) = exp(j*pi) = -1
        got = ula_response(2, np.pi / 2)
        np.testing.assert_allclose(got, np.array([1.0, -1.0]) / np.sqrt(2),
                                   atol=1e-12)

    def test_unit_norm(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(1, 128))
            a = ula_response(n, rng.uniform(0, 2 * np.pi))
            assert abs(np.linalg.norm(a) - 1.0) < 1e-12

    def test_zero_elements_raises(self):
        with pytest.raises(DimensionError):
            ula_response(0, 0.3)


class TestPathLoss:
    def test_one_meter_is_offset(self):
        assert path_loss_db(1.0, 73.0, 2.92) == pytest.approx(73.0)

    def test_ten_meters(self):
        assert path_loss_db(10.0, 73.0, 2.92) == pytest.approx(102.2)

    def test_ap_ris_distance(self):
        # 73 + 29.2*log10(25), evaluated independently
        expected = 73.0 + 29.2 * math.log10(25.0)
        assert expected == pytest.approx(113.8198483, abs=1e-6)
        assert path_loss_db(25.0, 73.0, 2.92) == pytest.approx(expected)

    def test_shadowing_added(self):
        assert path_loss_db(10.0, 73.0, 2.92, 3.5) == pytest.approx(105.7)

    def test_nonpositive_distance_raises(self):
        with pytest.raises(GeometryError):
            path_loss_db(0.0, 73.0, 2.92)
        with pytest.raises(GeometryError):
            path_loss_db(-3.0, 73.0, 2.92)


class TestApRisChannel:
    def test_rank_one_every_draw(self, desk_cfg):
        rng = np.random.default_rng(7)
        for _ in range(10):
            G, _ = gen_ap_ris_channel(desk_cfg, rng)
            s = np.linalg.svd(G, compute_uv=False)
            assert s[1] / s[0] < 1e-12

    def test_outer_product_structure(self, desk_cfg):
        from risnoma.scenario import ula_response as ula
        G, meta = gen_ap_ris_channel(desk_cfg, np.random.default_rng(3))
        rebuilt = meta["alpha"] * np.outer(
            ula(desk_cfg.n_ris_elements, meta["phi"]),
            ula(desk_cfg.n_tx_antennas, meta["vartheta"]))
        np.testing.assert_allclose(G, rebuilt, rtol=1e-15)

    def test_degenerate_1x1(self):
        cfg = ScenarioConfig.desk(n_tx_antennas=1, n_ris_elements=1,
                                  n_rf_chains=1, n_users=1, group_sizes=(1,))
        G, meta = gen_ap_ris_channel(cfg, np.random.default_rng(0))
        assert G.shape == (1, 1)
        # alpha forced to 1 gives exactly [[1]]
        np.testing.assert_allclose(G / meta["alpha"], [[1.0]], rtol=1e-15)

    def test_deterministic(self, desk_cfg):
        G1, _ = gen_ap_ris_channel(desk_cfg, np.random.default_rng(42))
        G2, _ = gen_ap_ris_channel(desk_cfg, np.random.default_rng(42))
        assert np.array_equal(G1, G2)


class TestRisUserChannels:
    def test_single_path_reconstruction(self, desk_cfg):
        from risnoma.scenario import ula_response as ula
        cfg = dataclasses.replace(desk_cfg, paths_per_user=1)
        rng = np.random.default_rng(5)
        groups, meta = gen_ris_user_channels(cfg, rng)
        h = groups[0][0]
        beta = meta["betas"][0][0]
        ang = meta["path_angles"][0][0]
        np.testing.assert_allclose(h, beta * ula(cfg.n_ris_elements, ang),
                                   rtol=1e-14)

    def test_multipath_sum_matches_direct_formula(self, desk_cfg):
        from risnoma.scenario import ula_response as ula
        rng = np.random.default_rng(6)
        groups, meta = gen_ris_user_channels(desk_cfg, rng)
        flat = [h for grp in groups for h in grp]
        for u, h in enumerate(flat):
            rebuilt = sum(b * ula(desk_cfg.n_ris_elements, a)
                          for b, a in zip(meta["betas"][u], meta["path_angles"][u]))
            np.testing.assert_allclose(h, rebuilt, rtol=1e-13)

    def test_norms_positive_and_finite(self, desk_channels):
        for grp in desk_channels.ris_user:
            norms = np.linalg.norm(grp, axis=1)
            assert np.all(np.isfinite(norms)) and np.all(norms > 0)

    def test_beta_linearity(self, desk_cfg):
        # h is linear in the path coefficients: doubling every beta
        # doubles every entry
        from risnoma.scenario import ula_response as ula
        rng = np.random.default_rng(9)
        groups, meta = gen_ris_user_channels(desk_cfg, rng)
        h = groups[1][0]
        u = desk_cfg.group_sizes[0]   # flat index of group 1, user 0
        doubled = sum(2 * b * ula(desk_cfg.n_ris_elements, a)
                      for b, a in zip(meta["betas"][u], meta["path_angles"][u]))
        np.testing.assert_allclose(doubled, 2 * h, rtol=1e-13)

    def test_zero_paths_rejected(self, desk_cfg):
        with pytest.raises(ConfigError):
            dataclasses.replace(desk_cfg, paths_per_user=0)


class TestChannelSet:
    def test_determinism_bit_identical(self, desk_cfg):
        a = gen_channels(desk_cfg, np.random.default_rng(11))
        b = gen_channels(desk_cfg, np.random.default_rng(11))
        assert np.array_equal(a.ap_ris, b.ap_ris)
        for x, y in zip(a.ris_user, b.ris_user):
            assert np.array_equal(x, y)

    def test_stacked_users_shape(self, desk_cfg, desk_channels):
        H = desk_channels.stacked_users()
        assert H.shape == (desk_cfg.n_users, desk_cfg.n_ris_elements)

    def test_direct_channels(self, desk_cfg):
        ch = gen_direct_channels(desk_cfg, np.random.default_rng(2))
        assert ch.direct
        assert ch.ap_ris.shape == (desk_cfg.n_tx_antennas,) * 2
        np.testing.assert_array_equal(ch.ap_ris, np.eye(desk_cfg.n_tx_antennas))
        assert ch.stacked_users().shape == (desk_cfg.n_users, desk_cfg.n_tx_antennas)

    def test_blockage_weakens_direct_link(self, desk_cfg):
        # the blocked direct channel should be far weaker than the
        # RIS-side channels at comparable distances
        strong = dataclasses.replace(desk_cfg, blockage_loss_db=0.0)
        weak = dataclasses.replace(desk_cfg, blockage_loss_db=40.0)
        a = gen_direct_channels(strong, np.random.default_rng(3))
        b = gen_direct_channels(weak, np.random.default_rng(3))
        ratio = np.linalg.norm(b.stacked_users()) / np.linalg.norm(a.stacked_users())
        assert ratio == pytest.approx(10 ** (-40.0 / 20.0), rel=1e-9)


class TestGeometry:
    def test_distance_ranges(self, desk_cfg):
        rng = np.random.default_rng(0)
        d_ris, d_ap = user_distances(desk_cfg, rng)
        r, dio, dao = (desk_cfg.user_circle_radius, desk_cfg.d_ris_obstacle,
                       desk_cfg.d_ap_obstacle)
        assert np.all(d_ris >= r - dio - 1e-9) and np.all(d_ris <= r + dio + 1e-9)
        assert np.all(d_ap >= r - dao - 1e-9) and np.all(d_ap <= r + dao + 1e-9)

    def test_override_wins(self, desk_cfg):
        cfg = dataclasses.replace(desk_cfg, user_ris_distances=(10., 20., 30., 40.))
        d_ris, _ = user_distances(cfg, np.random.default_rng(0))
        np.testing.assert_array_equal(d_ris, [10., 20., 30., 40.])


class TestConfig:
    def test_defaults_match_reference_setup(self):
        cfg = ScenarioConfig()
        assert cfg.n_tx_antennas == 32
        assert cfg.n_ris_elements == 64
        assert cfg.n_rf_chains == 3
        assert cfg.n_users == 6
        assert cfg.total_power == pytest.approx(1.0)         # 30 dBm
        assert cfg.noise_power == pytest.approx(1e-15)       # -120 dBm
        assert cfg.eta_a == 73.0 and cfg.eta_b == 2.92 and cfg.sigma_beta == 8.7
        assert cfg.d_ap_ris == 25.0
        assert cfg.tau == cfg.noise_power                    # default tau

    def test_json_roundtrip(self):
        cfg = ScenarioConfig.desk(rng_seed=5, min_rates=(1.0, 0.5, 1.0, 2.0))
        back = ScenarioConfig.from_json(cfg.to_json())
        assert back == cfg

    def test_json_partial_uses_defaults(self):
        cfg = ScenarioConfig.from_json('{"n_users": 9, "group_sizes": [3,3,3]}')
        assert cfg.n_users == 9 and cfg.n_tx_antennas == 32

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_json('{"bogus": 1}')

    def test_group_sizes_must_sum(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(n_users=6, group_sizes=(2, 2))

    def test_negative_min_rate_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(min_rates=-0.5)

    def test_positive_powers_required(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(total_power=0.0)

    def test_min_rate_vector_broadcast(self):
        cfg = ScenarioConfig.desk(min_rates=1.5)
        np.testing.assert_array_equal(cfg.min_rate_vector(), [1.5] * 4)
