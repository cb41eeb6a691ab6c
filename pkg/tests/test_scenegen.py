import json

import numpy as np
import pytest

from flowradio.core import GridShape
from flowradio.scenegen import (
    Building,
    GeneratorConfig,
    Scenario,
    Transmitter,
    build_dataset,
    generate_scenario,
    load_dataset,
    render_map,
    scenario_seed,
)

SHAPE = GridShape(16, 16)


def lone(tx_row=8.5, tx_col=8.5, power=0.0, n=2.0, **kw):
    return Scenario(SHAPE, (Transmitter(tx_row, tx_col, power, n),), **kw)


class TestGenerateScenario:
    def test_deterministic(self):
        a = generate_scenario(SHAPE, GeneratorConfig(), 7)
        b = generate_scenario(SHAPE, GeneratorConfig(), 7)
        assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)

    def test_seed_changes_transmitters(self):
        a = generate_scenario(SHAPE, GeneratorConfig(), 7)
        b = generate_scenario(SHAPE, GeneratorConfig(), 8)
        assert [(t.row, t.col) for t in a.transmitters] != [(t.row, t.col) for t in b.transmitters]

    def test_default_transmitter_count(self):
        assert len(generate_scenario(SHAPE, None, 0).transmitters) == 7

    def test_no_buildings(self):
        assert generate_scenario(SHAPE, GeneratorConfig(n_buildings=0), 3).buildings == ()

    def test_buildings_covering_everything(self):
        cfg = GeneratorConfig(n_buildings=1, building_size=(16, 16))
        with pytest.raises(ValueError, match="cannot fit"):
            generate_scenario(SHAPE, cfg, 0)

    def test_transmitters_outside_buildings(self):
        s = generate_scenario(SHAPE, GeneratorConfig(n_buildings=10), 4)
        for t in s.transmitters:
            for b in s.buildings:
                assert not (b.row0 <= int(t.row) < b.row1 and b.col0 <= int(t.col) < b.col1)

    def test_exponent_bounds(self):
        with pytest.raises(ValueError):
            Transmitter(1.0, 1.0, 0.0, 5.0)
        with pytest.raises(ValueError):
            GeneratorConfig(exponent_range=(1.0, 2.0))


class TestRenderMap:
    def test_reference_distance_gives_tx_power(self):
        # cell (8, 8) has its center at (8.5, 8.5): distance 0 < d0
        m = render_map(lone(power=-3.25))
        assert m[(8, 8)] == pytest.approx(-3.25, abs=1e-12)

    def test_double_distance_n2(self):
        # cell (8, 10) center is 2.0 from the transmitter
        m = render_map(lone(power=0.0, n=2.0))
        assert m[(8, 10)] == pytest.approx(-20.0 * np.log10(2.0), abs=1e-3)
        assert m[(8, 10)] == pytest.approx(-6.0206, abs=1e-3)

    def test_two_colocated_transmitters(self):
        one = render_map(lone(power=1.0, n=2.5))
        two = render_map(Scenario(SHAPE, (Transmitter(8.5, 8.5, 1.0, 2.5),) * 2))
        np.testing.assert_allclose(two.values - one.values, 10 * np.log10(2.0), atol=1e-9)
        assert float(np.mean(two.values - one.values)) == pytest.approx(3.0103, abs=1e-3)

    def test_monotone_along_rays(self):
        m = render_map(lone(tx_row=0.5, tx_col=0.5, n=3.0)).values
        assert np.all(np.diff(m[0, :]) <= 0)
        assert np.all(np.diff(m[:, 0]) <= 0)
        assert np.all(np.diff(np.diag(m)) <= 0)

    def test_wall_attenuation(self):
        b = Building(4, 0, 6, 16, wall_loss=7.0)
        free = render_map(lone(tx_row=1.5, tx_col=8.5))
        walled = render_map(lone(tx_row=1.5, tx_col=8.5, buildings=(b,)))
        # beyond the building: two wall crossings; inside: one
        assert walled[(10, 8)] == pytest.approx(free[(10, 8)] - 14.0, abs=1e-9)
        assert walled[(5, 8)] == pytest.approx(free[(5, 8)] - 7.0, abs=1e-9)
        assert walled[(2, 8)] == pytest.approx(free[(2, 8)], abs=1e-12)

    def test_floor_clamp(self):
        m = render_map(lone(tx_row=0.5, tx_col=0.5, power=-140.0, n=4.5, floor=-150.0))
        assert m.values.min() == -150.0

    def test_deterministic_and_bounded(self):
        cfg = GeneratorConfig()
        for seed in range(5):
            s = generate_scenario(SHAPE, cfg, seed)
            a, b = render_map(s), render_map(s)
            assert np.array_equal(a.values, b.values)
            ceiling = max(t.power for t in s.transmitters) + 3 * len(s.transmitters)
            assert a.values.min() >= s.floor and a.values.max() <= ceiling

    def test_shadowing_changes_map(self):
        a = render_map(lone(shadowing_sigma=0.0))
        b = render_map(lone(shadowing_sigma=3.0, shadowing_radius=1, seed=5))
        assert not np.array_equal(a.values, b.values)


class TestDataset:
    def test_single_map_size(self, tmp_path):
        m = build_dataset(1, (8, 8), None, 0, tmp_path / "d")
        assert (tmp_path / "d" / "maps.f32").stat().st_size == 8 * 8 * 4
        assert m.count == 1

    def test_regeneration_byte_identical(self, tmp_path):
        build_dataset(3, (8, 8), None, 5, tmp_path / "a")
        build_dataset(3, (8, 8), None, 5, tmp_path / "b")
        for name in ("maps.f32", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_test_split_seeds_disjoint(self, tmp_path):
        train = build_dataset(40, (8, 8), None, 1, tmp_path / "train", "train")
        test = build_dataset(30, (8, 8), None, 1, tmp_path / "test", "test")
        assert len(test.scenario_seeds) == 30
        assert not set(train.scenario_seeds) & set(test.scenario_seeds)
        assert scenario_seed(1, 0, "test") not in {scenario_seed(1, i, "train") for i in range(1 << 10)}

    def test_manifest_statistics(self, tmp_path):
        m = build_dataset(4, (8, 8), None, 2, tmp_path / "d")
        maps, loaded = load_dataset(tmp_path / "d")
        assert maps.shape == (4, 8, 8)
        assert loaded.db_min == maps.min() and loaded.db_max == maps.max()
        assert loaded.to_json() == m.to_json()

    def test_zero_count_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            build_dataset(0, (8, 8), None, 0, tmp_path)

    def test_unwritable_destination(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="file"):
            build_dataset(1, (8, 8), None, 0, blocker / "sub")
