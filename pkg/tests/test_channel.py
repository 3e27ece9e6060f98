import numpy as np
import pytest

from vqprecode.channel import (ArrayGeometry, ChannelError, DatasetConfig,
                               UserScenario, build_dataset, draw_scenarios,
                               load_dataset, sample_channel, save_dataset,
                               steering_vector)


GEOM = ArrayGeometry(n_v=2, n_h=8)


def test_boresight_is_all_ones():
    a = steering_vector(GEOM, 0.0, 0.0)
    assert np.allclose(a, np.ones(GEOM.n_antennas))


def test_two_element_closed_form():
    geom = ArrayGeometry(n_v=1, n_h=2, d_h=0.5)
    theta = 0.7
    a = steering_vector(geom, theta, 0.0)
    assert np.allclose(a, [1.0, np.exp(1j * np.pi * np.sin(theta))])


def test_steering_norm_is_n_for_any_angles():
    rng = np.random.default_rng(0)
    for _ in range(50):
        az = rng.uniform(-np.pi, np.pi)
        el = rng.uniform(-np.pi / 2, np.pi / 2)
        a = steering_vector(GEOM, az, el)
        assert abs(np.sum(np.abs(a) ** 2) - GEOM.n_antennas) < 1e-10


def test_steering_rejects_out_of_range():
    with pytest.raises(ChannelError):
        steering_vector(GEOM, 4.0, 0.0)


def _single_cluster(az=0.4, el=0.1, spread=0.0, seed=3):
    return UserScenario(
        azimuths=np.array([az]), elevations=np.array([el]),
        spreads_az=np.array([spread]), spreads_el=np.array([spread]),
        gain_vars=np.array([1.0]), seed=seed)


def test_single_cluster_zero_spread_is_scaled_steering():
    scen = _single_cluster()
    h = sample_channel(scen, GEOM, np.random.default_rng(1))
    a = steering_vector(GEOM, scen.azimuths[0], scen.elevations[0])
    ratios = h / a
    assert np.allclose(ratios, ratios[0])


def test_sample_determinism():
    scen = _single_cluster(spread=0.05)
    h1 = sample_channel(scen, GEOM, np.random.default_rng(42))
    h2 = sample_channel(scen, GEOM, np.random.default_rng(42))
    assert np.array_equal(h1, h2)


def test_mean_energy_matches_construction():
    scenarios = draw_scenarios(20, seed=9)
    rng = np.random.default_rng(123)
    energies = []
    for _ in range(10_000):
        scen = scenarios[rng.integers(len(scenarios))]
        h = sample_channel(scen, GEOM, rng)
        energies.append(np.sum(np.abs(h) ** 2))
    mean = np.mean(energies)
    assert abs(mean - GEOM.n_antennas) / GEOM.n_antennas < 0.03


def test_zero_spread_covariance_is_rank_one():
    scen = _single_cluster(az=-1.2, el=0.2)
    rng = np.random.default_rng(7)
    hs = np.array([sample_channel(scen, GEOM, rng) for _ in range(200)])
    cov = hs.conj().T @ hs / len(hs)
    eig = np.linalg.eigvalsh(cov)[::-1]
    assert eig[1] / eig[0] < 1e-10


def test_scenario_invariants_enforced():
    with pytest.raises(ChannelError):
        UserScenario(azimuths=np.array([0.0]), elevations=np.array([0.0]),
                     spreads_az=np.array([0.01]), spreads_el=np.array([0.01]),
                     gain_vars=np.array([0.5]), seed=0)


class TestDataset:
    CFG = DatasetConfig(geometry=GEOM, n_scenarios=10, samples_per_scenario=12,
                        eval_size=20, seed=5)

    def test_normalization_exact_on_generating_set(self):
        ds = build_dataset(self.CFG)
        mean = np.mean(np.sum(np.abs(ds.samples) ** 2, axis=1))
        assert mean == pytest.approx(GEOM.n_antennas, rel=1e-12)

    def test_split_sizes_and_disjointness(self):
        ds = build_dataset(self.CFG)
        pre, fine, ev = set(ds.pretrain_idx), set(ds.finetune_idx), set(ds.eval_idx)
        assert len(ev) == 20
        assert abs(len(pre) - len(fine)) <= 1
        assert not (pre & fine) and not (pre & ev) and not (fine & ev)
        assert len(pre | fine | ev) == len(ds.samples)

    def test_halves_equal_for_even_pool(self):
        cfg = DatasetConfig(geometry=GEOM, n_scenarios=5, samples_per_scenario=210,
                            eval_size=50, seed=1)
        ds = build_dataset(cfg)
        assert len(ds.pretrain_idx) == len(ds.finetune_idx) == 500

    def test_every_scenario_in_every_split(self):
        ds = build_dataset(self.CFG)
        for split in ("pretrain", "finetune", "eval"):
            assert len(ds.scenario_samples(split)) == self.CFG.n_scenarios

    def test_eval_size_exceeding_pool_rejected(self):
        with pytest.raises(ChannelError):
            build_dataset(DatasetConfig(geometry=GEOM, n_scenarios=2,
                                        samples_per_scenario=3, eval_size=6, seed=0))

    def test_roundtrip_bit_identical(self, tmp_path):
        ds = build_dataset(self.CFG)
        path = tmp_path / "data.bin"
        save_dataset(ds, str(path))
        back = load_dataset(str(path))
        assert np.array_equal(back.samples, ds.samples)
        assert np.array_equal(back.scenario_ids, ds.scenario_ids)
        for split in ("pretrain", "finetune", "eval"):
            assert np.array_equal(back.split(split), ds.split(split))
        assert back.norm_scale == ds.norm_scale
        assert back.geometry == ds.geometry
        save_dataset(back, str(tmp_path / "again.bin"))
        assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()

    def test_rebuild_is_deterministic(self):
        d1 = build_dataset(self.CFG)
        d2 = build_dataset(self.CFG)
        assert np.array_equal(d1.samples, d2.samples)
