import math

import numpy as np
import pytest

from learnedbp.errors import ConfigError, ShapeMismatchError
from learnedbp.forward import ForwardOperator, SensorData
from learnedbp.geometry import DetectorArray, ImageGrid, Scenario, TimeGrid, make_detectors
from learnedbp.phantoms import Image
from learnedbp.recon import (
    BackprojectionOperator,
    ContribTensor,
    WeightTensor,
    backproject_contrib,
    integral_weights,
    singular_integral,
    time_filter,
    weighted_ubp,
)


def _scenario(n=32, n_s=8, n_t=60, t_final=3.0, directivity=False, label="B_sparse"):
    return Scenario(
        grid=ImageGrid(n=n),
        detectors=make_detectors(label, n_s, 1.0),
        time=TimeGrid(n_t=n_t, t_final=t_final),
        directivity_enabled=directivity,
        label=label,
    )


def _smooth_data(scenario, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((scenario.time.n_t, scenario.detectors.n_s))
    # cumulative sums make the traces smooth enough for interpolation checks
    smooth = np.cumsum(np.cumsum(raw, axis=0), axis=0)
    smooth *= scale / max(1.0, np.abs(smooth).max())
    return SensorData(smooth, scenario.time, scenario.detectors)


class TestTimeFilter:
    def _data(self, values, n_s=3, n_t=50, t_final=2.0):
        det = make_detectors("B_sparse", n_s, 1.0)
        time = TimeGrid(n_t=n_t, t_final=t_final)
        t = time.samples()
        vals = np.repeat(values(t)[:, None], n_s, axis=1)
        return SensorData(vals, time, det)

    def test_linear_trace_filters_to_zero(self):
        data = self._data(lambda t: 4.0 * t)
        assert np.array_equal(time_filter(data), np.zeros_like(data.values))

    def test_quadratic_trace_filters_to_one(self):
        data = self._data(lambda t: t * t)
        np.testing.assert_allclose(time_filter(data), 1.0, atol=1e-11)

    def test_cubic_trace(self):
        data = self._data(lambda t: t**3)
        t = data.time.samples()
        q = time_filter(data)
        np.testing.assert_allclose(q[1:-1, 0], 2.0 * t[1:-1], rtol=1e-10)
        assert q[0, 0] == pytest.approx(t[0] + t[1], rel=1e-10)
        assert q[-1, 0] == pytest.approx(t[-2] + t[-1], rel=1e-10)

    def test_sound_speed_rescales_axis(self):
        c = 2.0
        det = make_detectors("B_sparse", 2, 1.0)
        time = TimeGrid(n_t=40, t_final=1.5)
        t = time.samples()
        vals = np.repeat(((c * t) ** 2)[:, None], 2, axis=1)
        q = time_filter(SensorData(vals, time, det), sound_speed=c)
        np.testing.assert_allclose(q, 1.0, atol=1e-11)


class TestSingularIntegral:
    def test_constant_integrand_closed_form(self):
        time = TimeGrid(n_t=300, t_final=3.0)
        q = np.ones(300)
        d = 1.0
        expected = math.log((3.0 + math.sqrt(9.0 - d * d)) / d)
        assert singular_integral(q, d, time) == pytest.approx(expected, rel=1e-12)

    def test_linear_integrand_closed_form(self):
        time = TimeGrid(n_t=240, t_final=3.0)
        t = time.samples()
        q = 2.0 + 0.5 * t
        d = 0.73
        s = math.sqrt(9.0 - d * d)
        expected = 2.0 * math.log((3.0 + s) / d) + 0.5 * s
        assert singular_integral(q, d, time) == pytest.approx(expected, rel=1e-12)

    def test_zero_beyond_window(self):
        time = TimeGrid(n_t=100, t_final=3.0)
        q = np.ones(100)
        assert singular_integral(q, 3.0, time) == 0.0
        assert singular_integral(q, 5.0, time) == 0.0

    def test_rejects_nonpositive_distance(self):
        time = TimeGrid(n_t=100, t_final=3.0)
        with pytest.raises(ConfigError):
            singular_integral(np.ones(100), 0.0, time)
        with pytest.raises(ConfigError):
            singular_integral(np.ones(100), -1.0, time)

    def test_wrong_length_rejected(self):
        time = TimeGrid(n_t=100, t_final=3.0)
        with pytest.raises(ShapeMismatchError):
            singular_integral(np.ones(99), 1.0, time)

    def test_matrix_rows_match_scalar_calls(self):
        time = TimeGrid(n_t=80, t_final=3.0)
        rng = np.random.default_rng(3)
        q = rng.standard_normal(80)
        ds = np.array([0.2, 0.9, 1.7, 2.9])
        mat = integral_weights(ds, time)
        for m, d in enumerate(ds):
            assert mat[m] @ q == pytest.approx(singular_integral(q, float(d), time), rel=1e-13)


class TestBackprojection:
    def test_zero_data_zero_image(self):
        sc = _scenario()
        op = BackprojectionOperator.from_scenario(sc)
        data = SensorData(np.zeros((sc.time.n_t, sc.detectors.n_s)), sc.time, sc.detectors)
        assert np.all(op.standard(data).values == 0.0)
        w = WeightTensor.ones(sc.grid, sc.detectors.n_s)
        assert np.all(op.apply(w, data).values == 0.0)

    def test_ones_weights_match_standard_bitwise(self):
        sc = _scenario()
        op = BackprojectionOperator.from_scenario(sc)
        data = _smooth_data(sc, seed=1)
        w = WeightTensor.ones(sc.grid, sc.detectors.n_s)
        assert np.array_equal(op.apply(w, data).values, op.standard(data).values)

    def test_weight_sign_irrelevant(self):
        sc = _scenario()
        op = BackprojectionOperator.from_scenario(sc)
        data = _smooth_data(sc, seed=2)
        rng = np.random.default_rng(5)
        w = WeightTensor(rng.standard_normal((sc.grid.n, sc.grid.n, sc.detectors.n_s)), sc.grid)
        w_neg = WeightTensor(-w.values, sc.grid)
        assert np.array_equal(op.apply(w, data).values, op.apply(w_neg, data).values)

    def test_quadratic_weight_homogeneity(self):
        sc = _scenario()
        op = BackprojectionOperator.from_scenario(sc)
        data = _smooth_data(sc, seed=3)
        rng = np.random.default_rng(6)
        w = WeightTensor(rng.standard_normal((sc.grid.n, sc.grid.n, sc.detectors.n_s)), sc.grid)
        w2 = WeightTensor(2.0 * w.values, sc.grid)
        # doubling the weights quadruples the image, exactly in binary
        assert np.array_equal(op.apply(w2, data).values, 4.0 * op.apply(w, data).values)

    def test_linear_in_data(self):
        sc = _scenario()
        op = BackprojectionOperator.from_scenario(sc)
        d1 = _smooth_data(sc, seed=4)
        d2 = _smooth_data(sc, seed=5)
        both = SensorData(d1.values + d2.values, sc.time, sc.detectors)
        lhs = op.standard(both).values
        rhs = op.standard(d1).values + op.standard(d2).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-11 * max(1.0, np.abs(rhs).max()))

    def test_detector_column_locality(self):
        sc = _scenario(n_s=6)
        op = BackprojectionOperator.from_scenario(sc)
        data = _smooth_data(sc, seed=7)
        vals = data.values.copy()
        vals[:, 2] = 0.0
        b = op.contrib(SensorData(vals, sc.time, sc.detectors))
        assert np.all(b.values[:, :, 2] == 0.0)
        assert np.any(b.values[:, :, 3] != 0.0)

    def test_causality_zeroes_far_pixels(self):
        # a short time window cannot reach distant pixels, so their
        # contributions vanish no matter the data
        sc = _scenario(n=16, n_s=4, n_t=30, t_final=1.2)
        op = BackprojectionOperator.from_scenario(sc)
        data = _smooth_data(sc, seed=8)
        b = op.contrib(data)
        pixels = sc.grid.pixel_centers().reshape(-1, 2)
        for j in range(4):
            dist = np.linalg.norm(pixels - sc.detectors.positions[j], axis=1)
            far = (dist >= 1.2).reshape(sc.grid.n, sc.grid.n)
            assert far.any()
            assert np.all(b.values[:, :, j][far] == 0.0)

    def test_exact_mode_close_to_table(self):
        sc = _scenario(n=24, n_s=5, n_t=80)
        data = _smooth_data(sc, seed=9)
        b_table = BackprojectionOperator.from_scenario(sc).contrib(data)
        b_exact = BackprojectionOperator.from_scenario(sc, exact=True).contrib(data)
        scale = np.abs(b_exact.values).max()
        np.testing.assert_allclose(b_table.values, b_exact.values, atol=2e-3 * scale)

    def test_detector_on_pixel_center_rejected(self):
        grid = ImageGrid(n=4, extent=1.0)
        radius = math.hypot(0.75, 0.25)
        pos = np.array([[0.75, 0.25], [-0.75, -0.25]])
        normals = pos / radius
        det = DetectorArray(pos, normals, 0.1, radius)
        with pytest.raises(ConfigError):
            BackprojectionOperator(grid, det, TimeGrid(n_t=20, t_final=3.0))

    def test_data_shape_mismatch_rejected(self):
        sc = _scenario(n_s=4)
        op = BackprojectionOperator.from_scenario(sc)
        other = make_detectors("B_sparse", 5, 1.0)
        data = SensorData(np.zeros((sc.time.n_t, 5)), sc.time, other)
        with pytest.raises(ShapeMismatchError):
            op.standard(data)

    def test_weight_shape_mismatch_rejected(self):
        sc = _scenario(n_s=4)
        op = BackprojectionOperator.from_scenario(sc)
        data = _smooth_data(sc, seed=10)
        wrong = WeightTensor(np.ones((sc.grid.n, sc.grid.n, 3)), sc.grid)
        with pytest.raises(ShapeMismatchError):
            op.apply(wrong, data)

    def test_module_level_wrappers(self):
        sc = _scenario(n=16, n_s=4, n_t=40)
        data = _smooth_data(sc, seed=11)
        op = BackprojectionOperator.from_scenario(sc)
        b = backproject_contrib(data, sc.grid)
        assert np.array_equal(b.values, op.contrib(data).values)
        w = WeightTensor.ones(sc.grid, 4)
        img = weighted_ubp(w, data)
        assert np.array_equal(img.values, op.apply(w, data).values)


class TestRoundTripAccuracy:
    def test_dense_full_view_recovers_smooth_source(self):
        n = 64
        label = "B_sparse"
        sc = Scenario(
            grid=ImageGrid(n=n),
            detectors=make_detectors(label, 100, 1.0),
            time=TimeGrid(n_t=200, t_final=3.0),
            directivity_enabled=False,
            label=label,
        )
        pts = sc.grid.pixel_centers()
        d2 = (pts[:, :, 0] - 0.1) ** 2 + (pts[:, :, 1] + 0.05) ** 2
        img = Image(sc.grid, np.exp(-d2 / (2.0 * 0.15**2)))
        data = ForwardOperator(sc).simulate(img)
        recon = BackprojectionOperator.from_scenario(sc).standard(data)
        rel = np.linalg.norm(recon.values - img.values) / np.linalg.norm(img.values)
        assert rel < 0.05


class TestWeightTensor:
    def test_ones_factory(self):
        grid = ImageGrid(n=8)
        w = WeightTensor.ones(grid, 5)
        assert w.values.shape == (8, 8, 5)
        assert w.n_s == 5
        assert np.all(w.values == 1.0)

    def test_shape_validation(self):
        grid = ImageGrid(n=8)
        with pytest.raises(ShapeMismatchError):
            WeightTensor(np.ones((8, 7, 3)), grid)
        with pytest.raises(ShapeMismatchError):
            WeightTensor(np.ones((8, 8)), grid)
        with pytest.raises(ShapeMismatchError):
            WeightTensor(np.ones((8, 8, 0)), grid)

    def test_finite_validation(self):
        grid = ImageGrid(n=8)
        bad = np.ones((8, 8, 2))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ShapeMismatchError):
            WeightTensor(bad, grid)


class TestContribTensor:
    def test_sum_image(self):
        grid = ImageGrid(n=4)
        rng = np.random.default_rng(1)
        vals = rng.standard_normal((4, 4, 3))
        b = ContribTensor(vals, grid)
        assert np.array_equal(b.sum_image().values, vals.sum(axis=2))
        assert b.n_s == 3
