import numpy as np
import pytest

from farm.core import SparseObservation, VoxelGridSpec
from farm.kriging import (VariogramModel, empirical_variogram, fit_variogram,
                          idw_predict, kriging_predict, kriging_system)


def _spec():
    return VoxelGridSpec(L=12, W=12, H=4, delta=2.0)


def _observation(spec, n=40, seed=0, field=None):
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(spec.n_voxels, size=n, replace=False))
    if field is None:
        coords = np.stack(np.unravel_index(idx, spec.shape), axis=1)
        values = (coords @ np.array([1.0, -0.5, 2.0])
                  + rng.standard_normal(n) * 0.1)
    else:
        values = field.ravel()[idx]
    return SparseObservation(indices=idx, values=values, sample_rate=n / spec.n_voxels,
                             spec=spec)


class TestVariogramModel:
    def test_nugget_at_zero(self):
        v = VariogramModel(nugget=0.5, sill=2.0, range_m=10.0)
        assert v.gamma(0.0) == pytest.approx(0.5)

    def test_monotone(self):
        v = VariogramModel(nugget=0.0, sill=2.0, range_m=10.0)
        h = np.linspace(0, 100, 50)
        assert np.all(np.diff(v.gamma(h)) >= 0)

    def test_validation(self):
        with pytest.raises(ValueError):
            VariogramModel(nugget=-1.0, sill=1.0, range_m=1.0)
        with pytest.raises(ValueError):
            VariogramModel(nugget=0.0, sill=0.0, range_m=1.0)
        with pytest.raises(ValueError):
            VariogramModel(nugget=0.0, sill=1.0, range_m=0.0)


class TestEmpiricalVariogram:
    def test_recovers_increasing_structure(self):
        spec = _spec()
        obs = _observation(spec, n=80, seed=1)
        coords = obs.coords().astype(float) * spec.delta
        lags, semis = empirical_variogram(coords, obs.values)
        assert lags.size > 5
        # linear-trend data: semivariance grows with distance
        assert semis[-1] > semis[0]

    def test_fit_produces_valid_model(self):
        spec = _spec()
        obs = _observation(spec, n=60, seed=2)
        coords = obs.coords().astype(float) * spec.delta
        v = fit_variogram(*empirical_variogram(coords, obs.values))
        assert v.nugget >= 0 and v.sill > 0 and v.range_m > 0


class TestKrigingSystem:
    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(3)
        coords = rng.uniform(0, 20, (15, 3))
        vario = VariogramModel(nugget=0.1, sill=3.0, range_m=8.0)
        for _ in range(10):
            w, _ = kriging_system(coords, vario, rng.uniform(0, 20, 3))
            assert abs(w.sum() - 1.0) < 1e-9

    def test_symmetric_pair_gets_equal_weights(self):
        coords = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
        vario = VariogramModel(nugget=0.0, sill=2.0, range_m=5.0)
        w, _ = kriging_system(coords, vario, np.array([5.0, 0.0, 0.0]))
        assert w[0] == pytest.approx(0.5, abs=1e-9)
        assert w[1] == pytest.approx(0.5, abs=1e-9)

    def test_exact_interpolation_weights_zero_nugget(self):
        rng = np.random.default_rng(4)
        coords = rng.uniform(0, 20, (10, 3))
        vario = VariogramModel(nugget=0.0, sill=2.0, range_m=5.0)
        w, _ = kriging_system(coords, vario, coords[3])
        expect = np.zeros(10)
        expect[3] = 1.0
        assert np.allclose(w, expect, atol=1e-9)


class TestKrigingPredict:
    def test_constant_field_reproduced(self):
        spec = _spec()
        field = np.full(spec.shape, -70.0)
        obs = _observation(spec, n=20, seed=5, field=field)
        vol, meta = kriging_predict(obs, spec)
        assert np.allclose(vol.values, -70.0, atol=1e-9)

    def test_exact_at_samples_zero_nugget(self):
        spec = _spec()
        obs = _observation(spec, n=30, seed=6)
        vario = VariogramModel(nugget=0.0, sill=5.0, range_m=10.0)
        vol, meta = kriging_predict(obs, spec, vario=vario)
        assert meta["method"] == "ordinary_kriging"
        pred_at_samples = vol.values.ravel()[obs.indices]
        assert np.abs(pred_at_samples - obs.values).max() < 1e-6

    def test_smooth_field_reasonable_interpolation(self):
        spec = _spec()
        ll, ww, hh = np.meshgrid(np.arange(spec.L), np.arange(spec.W),
                                 np.arange(spec.H), indexing="ij")
        field = -60.0 - 0.8 * ll - 0.3 * ww + 1.1 * hh
        obs = _observation(spec, n=120, seed=7, field=field)
        vol, _ = kriging_predict(obs, spec)
        err = np.abs(vol.values - field).mean()
        assert err < 2.0

    def test_too_few_samples_rejected(self):
        spec = _spec()
        obs = _observation(spec, n=3, seed=8)
        with pytest.raises(ValueError, match="at least 4"):
            kriging_predict(obs, spec)

    def test_identical_locations_rejected(self):
        spec = _spec()
        obs = SparseObservation(indices=np.array([5]), values=np.array([1.0]),
                                sample_rate=0.01, spec=spec)
        with pytest.raises(ValueError):
            kriging_predict(obs, spec)

    def test_subsampling_recorded(self):
        spec = VoxelGridSpec(L=12, W=12, H=4, delta=2.0)
        obs = _observation(spec, n=120, seed=9)
        vol, meta = kriging_predict(obs, spec, max_samples=50)
        assert meta["subsampled_to"] == 50


class TestIdwFallback:
    def test_exact_at_samples(self):
        rng = np.random.default_rng(10)
        coords = rng.uniform(0, 10, (8, 3))
        values = rng.standard_normal(8)
        out = idw_predict(coords, values, coords)
        assert np.allclose(out, values, atol=1e-9)

    def test_weighted_mean_bounds(self):
        coords = np.array([[0.0, 0, 0], [10.0, 0, 0]])
        values = np.array([0.0, 1.0])
        out = idw_predict(coords, values, np.array([[3.0, 0, 0]]))
        assert 0.0 < out[0] < 1.0
