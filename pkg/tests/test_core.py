import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flowradio.core import (
    AffineTransform,
    Cell,
    GridShape,
    ObservationSet,
    RadioMap,
    apply_degradation,
    db_to_linear,
    degradation_adjoint,
    denormalize,
    manhattan,
    nmse,
    normalize,
)


def nmse_oracle(truth, est):
    num = den = 0.0
    rows, cols = len(truth), len(truth[0])
    for i in range(rows):
        for j in range(cols):
            pt = 10.0 ** (truth[i][j] / 10.0)
            pe = 10.0 ** (est[i][j] / 10.0)
            num += (pt - pe) ** 2
            den += pt * pt
    return num / den


finite_db = st.floats(-60, 30, allow_nan=False)


class TestTypes:
    def test_grid_minimum(self):
        with pytest.raises(ValueError):
            GridShape(1, 5)

    def test_radio_map_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            RadioMap.from_array([[0.0, np.inf], [1.0, 2.0]])

    def test_radio_map_size_check(self):
        with pytest.raises(ValueError):
            RadioMap(GridShape(2, 2), np.zeros(5))

    def test_observation_mask_and_order(self):
        obs = ObservationSet.from_entries((3, 3), [((2, 1), -5.0), ((0, 0), 1.0)])
        assert obs.entries == [(Cell(2, 1), -5.0), (Cell(0, 0), 1.0)]
        assert obs.mask.sum() == 2 and obs.mask[2, 1] and obs.mask[0, 0]
        assert len(obs) == 2

    def test_observation_duplicates_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            ObservationSet.from_entries((3, 3), [((1, 1), 0.0), ((1, 1), 2.0)])

    def test_affine_zero_scale(self):
        with pytest.raises(ValueError):
            AffineTransform(0.0, 1.0)

    def test_from_range_maps_to_unit_interval(self):
        t = AffineTransform.from_range(-40.0, 10.0)
        assert t.apply(-40.0) == pytest.approx(-1.0)
        assert t.apply(10.0) == pytest.approx(1.0)


class TestDbToLinear:
    @pytest.mark.parametrize("x, expected", [(0.0, 1.0), (10.0, 10.0)])
    def test_trivial(self, x, expected):
        assert db_to_linear(x) == expected

    def test_minus_thirty(self):
        assert db_to_linear(-30.0) == pytest.approx(10.0 ** (-3.0), rel=1e-15)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            db_to_linear(np.nan)


class TestNmse:
    def test_identical_maps(self, rng):
        m = rng.uniform(-50, 10, (5, 6))
        assert nmse(m, m) == 0.0

    def test_doubling_power(self):
        truth = np.zeros((3, 3))
        est = np.full((3, 3), 10.0 * np.log10(2.0))
        assert nmse(truth, est) == pytest.approx(1.0, abs=1e-12)

    def test_matches_double_loop_oracle(self, rng):
        for _ in range(5):
            a, b = rng.uniform(-40, 10, (4, 4)), rng.uniform(-40, 10, (4, 4))
            assert nmse(RadioMap.from_array(a), RadioMap.from_array(b)) == pytest.approx(
                nmse_oracle(a.tolist(), b.tolist()), abs=1e-12, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nmse(np.zeros((2, 2)), np.zeros((2, 3)))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=finite_db), arrays(np.float64, (3, 4), elements=finite_db),
           st.floats(-20, 20))
    def test_common_offset_invariance(self, a, b, c):
        assert nmse(a + c, b + c) == pytest.approx(nmse(a, b), rel=1e-9, abs=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (3, 3), elements=finite_db))
    def test_self_zero(self, a):
        assert nmse(a, a) == 0.0


class TestDegradation:
    def test_empty(self):
        m = RadioMap.from_array(np.arange(16.0).reshape(4, 4))
        assert apply_degradation(m, ObservationSet((4, 4))).shape == (0,)

    def test_single(self):
        v = np.zeros((4, 4))
        v[0, 0] = -42.0
        obs = ObservationSet.from_entries((4, 4), [((0, 0), 0.0)])
        assert apply_degradation(RadioMap.from_array(v), obs).tolist() == [-42.0]

    def test_manual_lookup_respects_order(self):
        v = np.arange(16.0).reshape(4, 4)
        obs = ObservationSet.from_entries((4, 4), [((3, 2), 0.0), ((0, 1), 0.0), ((2, 0), 0.0)])
        assert apply_degradation(v, obs).tolist() == [14.0, 1.0, 8.0]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            apply_degradation(np.zeros((3, 3)), ObservationSet((4, 4)))

    def test_linearity_exact(self, rng):
        obs = ObservationSet((5, 5), [(0, 0), (4, 4), (2, 3)], [0.0, 0.0, 0.0])
        z1, z2 = rng.integers(-50, 50, (5, 5)).astype(float), rng.integers(-50, 50, (5, 5)).astype(float)
        a, b = 3.0, -2.0
        np.testing.assert_array_equal(
            apply_degradation(a * z1 + b * z2, obs),
            a * apply_degradation(z1, obs) + b * apply_degradation(z2, obs))

    def test_adjoint(self, rng):
        obs = ObservationSet((4, 5), [(1, 1), (3, 0)], [0.0, 0.0])
        z = rng.standard_normal((4, 5))
        y = rng.standard_normal(2)
        lhs = float(apply_degradation(z, obs) @ y)
        rhs = float(np.sum(z * degradation_adjoint(y, obs)))
        assert lhs == pytest.approx(rhs, abs=1e-12)


class TestManhattan:
    def test_identity(self):
        assert manhattan((3, 4), (3, 4)) == 0

    def test_value(self):
        assert manhattan(Cell(0, 0), Cell(2, 3)) == 5

    def test_symmetric_and_triangle(self, rng):
        pts = rng.integers(0, 50, (1000, 3, 2))
        for a, b, c in pts[:100]:
            assert manhattan(a, b) == manhattan(b, a)
        for a, b, c in pts:
            assert manhattan(a, c) <= manhattan(a, b) + manhattan(b, c)


class TestNormalize:
    def test_identity(self, rng):
        m = RadioMap.from_array(rng.standard_normal((3, 3)))
        np.testing.assert_array_equal(normalize(m, AffineTransform()).values, m.values)

    def test_offset(self):
        m = RadioMap.from_array(np.zeros((2, 3)))
        np.testing.assert_array_equal(normalize(m, AffineTransform(1.0, 5.0)).values, np.full((2, 3), 5.0))

    def test_round_trip(self, rng):
        m = RadioMap.from_array(rng.uniform(-150, 30, (8, 8)))
        t = AffineTransform.from_range(-48.7, 17.3)
        back = denormalize(normalize(m, t), t)
        assert np.max(np.abs(back.values - m.values)) < 1e-9
