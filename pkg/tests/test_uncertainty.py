import numpy as np
import pytest

from cyclofrag.ingest import tower_arrays
from cyclofrag.uncertainty import (
    FS_CONFIG,
    EnsembleSet,
    LhsDesign,
    Mode,
    WindEnsemble,
    bootstrap_indices,
    build_ensembles,
    combined_replicate,
    decode_config,
    derive_seed,
    ecdf_quantile,
    fs_replicate,
    im_replicate,
    lhs_design,
    make_replicate,
    replicate_percentiles,
)
from cyclofrag.windfield import Rwpm, WindConfig, gust_field


class TestLhs:
    def test_single_row(self):
        d = lhs_design(1, seed=4)
        assert d.rows.shape == (1, 3)
        assert np.all((d.rows > 0) & (d.rows < 1))

    def test_stratification(self):
        d = lhs_design(1000, seed=9)
        for c in range(3):
            counts = np.bincount(np.floor(d.rows[:, c] * 1000).astype(int), minlength=1000)
            assert np.all(counts == 1)
        assert np.sum(d.rows[:, 0] < 0.001) == 1

    def test_same_seed(self):
        assert np.array_equal(lhs_design(50, 7).rows, lhs_design(50, 7).rows)
        assert not np.array_equal(lhs_design(50, 7).rows, lhs_design(50, 8).rows)

    def test_invalid(self):
        with pytest.raises(ValueError):
            lhs_design(0)


class TestDecode:
    def test_thirds(self):
        assert decode_config(0.2, 0.5, 0.5) == WindConfig(Rwpm.WSE, 0.80, 1.58)

    def test_one_sigma(self):
        cfg = decode_config(0.9, 0.9, 0.8413)
        assert cfg.model is Rwpm.HOL and cfg.cf == 0.90
        # ndtri(0.8413) = 0.99982
        assert cfg.gf == pytest.approx(1.6799821, abs=1e-6)

    def test_right_closed_boundaries(self):
        assert decode_config(1 / 3, 1 / 3, 0.5).model is Rwpm.WSE
        assert decode_config(1 / 3, 1 / 3, 0.5).cf == 0.75
        assert decode_config(2 / 3, 2 / 3, 0.5).model is Rwpm.WDE
        assert decode_config(2 / 3 + 1e-12, 2 / 3 + 1e-12, 0.5).model is Rwpm.HOL

    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5])
    def test_outside_unit_interval(self, bad):
        with pytest.raises(ValueError):
            decode_config(bad, 0.5, 0.5)
        with pytest.raises(ValueError):
            decode_config(0.5, 0.5, bad)

    def test_tiny_r3_is_finite(self):
        assert np.isfinite(decode_config(0.5, 0.5, 1e-300).gf)


class TestEnsembles:
    def test_small_design(self, small_scenario, small_track):
        d = LhsDesign(np.array([[0.1, 0.1, 0.5], [0.5, 0.5, 0.5], [0.9, 0.9, 0.5]]))
        ens = build_ensembles(d, small_track, small_scenario.towers[:1])
        (e,) = list(ens)
        assert e.samples.shape == (3,)
        assert e.ecdf.min() == e.samples.min() and e.ecdf.max() == e.samples.max()
        assert np.all(np.diff(e.ecdf) >= 0)

    def test_median_within_model_span(self, small_scenario, small_track):
        towers = small_scenario.towers[:30]
        d = lhs_design(60, seed=2)
        ens = build_ensembles(d, small_track, towers)
        lo = np.full(len(towers), np.inf)
        hi = np.zeros(len(towers))
        for model in Rwpm:
            for cf in (0.75, 0.80, 0.90):
                g = gust_field(small_track, WindConfig(model, cf, 1.58), towers)
                lo, hi = np.minimum(lo, g), np.maximum(hi, g)
        med = ens.quantile(0.5)
        # the 3x3 grid at gf=1.58 brackets the median up to the gust-factor spread
        assert np.all(med >= 0.9 * lo) and np.all(med <= 1.1 * hi)

    def test_ecdf_quantile(self):
        e = WindEnsemble("a", [200.0, 100.0])
        assert ecdf_quantile(e, 0.5) == 150.0
        assert ecdf_quantile(e, 1e-12) == pytest.approx(100.0)
        assert ecdf_quantile(e, 1 - 1e-12) == pytest.approx(200.0)

    def test_ecdf_quantile_type7(self, rng):
        x = rng.normal(200, 20, 37)
        e = WindEnsemble("a", x)
        for p in (0.01, 0.16, 0.5, 0.84, 0.975):
            assert ecdf_quantile(e, p) == pytest.approx(np.quantile(x, p, method="linear"), rel=1e-14)

    def test_ecdf_quantile_errors(self):
        with pytest.raises(ValueError):
            ecdf_quantile(WindEnsemble("a", []), 0.5)
        with pytest.raises(ValueError):
            ecdf_quantile(WindEnsemble("a", [1.0]), 0.0)

    def test_ensembleset_shape_check(self):
        with pytest.raises(ValueError):
            EnsembleSet(["a", "b"], np.zeros((3, 4)))


def _ens(rng, n_towers=50, n=40):
    return EnsembleSet([f"t{i}" for i in range(n_towers)], rng.uniform(100, 300, (n_towers, n)))


class TestReplicates:
    def test_im_median(self, rng):
        ens = _ens(rng)
        rep = im_replicate(ens, 0.5)
        assert np.allclose(rep.winds, np.median(ens.samples, axis=1))
        assert np.array_equal(rep.towers, np.arange(len(ens)))
        assert rep.mode is Mode.IM

    def test_im_near_max(self, rng):
        ens = _ens(rng)
        assert np.allclose(im_replicate(ens, 1 - 1e-12).winds, ens.samples.max(axis=1))

    def test_identical_ensembles_identical_winds(self, rng):
        row = rng.uniform(100, 300, 40)
        ens = EnsembleSet(["a", "b"], np.vstack([row, row[::-1]]))
        w = im_replicate(ens, 0.37).winds
        assert w[0] == w[1]

    def test_bootstrap_basic(self):
        assert bootstrap_indices(1, 5).tolist() == [0]
        idx = bootstrap_indices(1000, 5)
        assert idx.shape == (1000,) and idx.min() >= 0 and idx.max() < 1000

    def test_bootstrap_distinct_fraction(self):
        fr = [np.unique(bootstrap_indices(10_000, derive_seed(0, 9, i))).size / 10_000 for i in range(20)]
        assert np.mean(fr) == pytest.approx(1 - np.exp(-1), abs=0.02)

    def test_fs_replicate(self, small_scenario, small_track):
        towers = small_scenario.towers
        a = fs_replicate(towers, FS_CONFIG, small_track, seed=1)
        b = fs_replicate(towers, FS_CONFIG, small_track, seed=2)
        assert np.array_equal(a.wind, b.wind)
        assert not np.array_equal(a.towers, b.towers)
        assert len(a.towers) == len(towers)
        c = fs_replicate(towers, FS_CONFIG, small_track, seed=1)
        assert np.array_equal(a.towers, c.towers)

    def test_fs_needs_inputs(self, small_scenario):
        with pytest.raises(ValueError):
            fs_replicate(small_scenario.towers)

    def test_combined_identity_equals_im(self, rng):
        ens = _ens(rng)
        c = combined_replicate(ens, 0.5, seed=3, bootstrap=False)
        assert np.array_equal(c.winds, im_replicate(ens, 0.5).winds)

    def test_combined_reproducible(self, rng):
        ens = _ens(rng)
        a = combined_replicate(ens, 0.3, seed=derive_seed(1, 4, 0))
        b = combined_replicate(ens, 0.3, seed=derive_seed(1, 4, 0))
        assert np.array_equal(a.winds, b.winds)

    def test_make_replicate_order_independent(self, rng):
        ens = _ens(rng)
        fs = rng.uniform(100, 300, len(ens))
        pct = replicate_percentiles(10, 5)
        fwd = [make_replicate(Mode.COMBINED, i, 5, ensembles=ens, percentiles=pct).winds for i in range(10)]
        rev = [make_replicate(Mode.COMBINED, i, 5, ensembles=ens, percentiles=pct).winds for i in reversed(range(10))]
        for a, b in zip(fwd, rev[::-1]):
            assert np.array_equal(a, b)
        f1 = make_replicate(Mode.FS, 3, 5, fs_wind=fs)
        assert np.array_equal(f1.winds, make_replicate(Mode.FS, 3, 5, fs_wind=fs).winds)

    def test_replicate_size_mismatch(self, rng):
        from cyclofrag.uncertainty import Replicate

        with pytest.raises(ValueError):
            Replicate(np.zeros(3), np.arange(2), Mode.FS)


def test_gf_sample_moments():
    u = np.random.default_rng(0).random(100_000)
    u = np.clip(u, 1e-12, 1 - 1e-12)
    gf = np.array([decode_config(0.5, 0.5, x).gf for x in u])
    assert gf.mean() == pytest.approx(1.58, abs=0.01)
    assert gf.std() == pytest.approx(0.10, abs=0.01)
