import numpy as np
import pytest

from brdfdiff.brdf import AnalyticBrdf, MeasuredBrdf, grid_index, valid_mask
from brdfdiff.experiments import (
    FACTORS, SPARSE_BATCH, SuperresReport, downsample_grid, format_table, glossy_material, nn_baseline,
    sample_counts, sparse_fit_config, superres_experiment,
)
from brdfdiff.field import FitConfig, nf_fit
from brdfdiff.metrics import ssim
from brdfdiff.render import RenderConfig, render_sphere

CFG = RenderConfig(width=48, height=48)


@pytest.fixture(scope="module")
def glossy_tab():
    return glossy_material().to_measured()


class TestDownsample:
    @pytest.mark.parametrize("x", FACTORS)
    def test_counts(self, x, glossy_tab):
        n = (1 + 89 // x, 1 + 89 // x, 1 + 179 // x)
        assert sample_counts(x) == n
        assert downsample_grid(glossy_tab, x).shape == n

    def test_published_rows(self):
        assert sample_counts(16) == (6, 6, 12)
        assert sample_counts(32) == (3, 3, 6)

    def test_identity(self, glossy_tab):
        s = downsample_grid(glossy_tab, 1)
        assert np.array_equal(s.values, glossy_tab.values)
        assert s.n_valid() == int(valid_mask().sum())

    def test_kept_cells(self, glossy_tab):
        s = downsample_grid(glossy_tab, 8)
        i, j, k = 3, 5, 11
        assert np.array_equal(s.values[i, j, k], glossy_tab.values[8 * i, 8 * j, 8 * k])

    def test_bad_factor(self, glossy_tab):
        with pytest.raises(ValueError):
            downsample_grid(glossy_tab, 0)


class TestBaseline:
    def test_floor_lookup(self, glossy_tab):
        rng = np.random.default_rng(0)
        for x in (2, 16, 24):
            base = nn_baseline(downsample_grid(glossy_tab, x))
            idx = (rng.integers(0, 90, 200), rng.integers(0, 90, 200), rng.integers(0, 180, 200))
            tab = base.tabulate()
            expect = glossy_tab.values[(idx[0] // x) * x, (idx[1] // x) * x, (idx[2] // x) * x]
            np.testing.assert_array_equal(tab[idx], expect)

    def test_eval_matches_tabulation(self, glossy_tab):
        from brdfdiff.brdf import cell_center_angles
        base = nn_baseline(downsample_grid(glossy_tab, 4))
        ang = cell_center_angles(np.array([0, 7, 45]), np.array([3, 3, 80]), np.array([1, 100, 179]))
        assert grid_index(ang)[0].tolist() == [0, 7, 45]
        np.testing.assert_array_equal(base.eval(*ang), base.tabulate()[[0, 7, 45], [3, 3, 80], [1, 100, 179]])

    def test_piecewise_constant(self, glossy_tab):
        tab = nn_baseline(downsample_grid(glossy_tab, 16)).tabulate()
        assert np.all(tab[0:16, 0:16, 0:16] == tab[0, 0, 0])

    def test_identity_ssim(self, glossy_tab):
        truth = render_sphere(glossy_tab, CFG)
        assert ssim(truth, render_sphere(nn_baseline(downsample_grid(glossy_tab, 1)), CFG)) == 1.0

    @pytest.mark.parametrize("brdf", [
        glossy_material(width=0.6, ks=(1, 1, 1)),
        AnalyticBrdf(lambda th, td, pd: (0.05 + 0.3 * np.exp(-th ** 2 / 0.5) * (1 + 0.2 * np.cos(pd)))[..., None]
                     * np.ones(3)),
    ])
    def test_nonincreasing_in_x(self, brdf):
        tab = brdf.to_measured()
        truth = render_sphere(tab, CFG)
        s = [ssim(truth, render_sphere(nn_baseline(downsample_grid(tab, x)), CFG)) for x in FACTORS]
        assert s[0] == 1.0
        assert np.all(np.diff(s) <= 1e-12)


class TestFitConfig:
    def test_scaling(self):
        base = FitConfig()
        assert sparse_fit_config(base, 1) == base
        assert sparse_fit_config(base, 8).epochs == base.epochs
        assert sparse_fit_config(base, 8).batch_size == SPARSE_BATCH
        assert sparse_fit_config(base, 16).epochs == 4 * base.epochs
        assert sparse_fit_config(base, 32).epochs == 4 * base.epochs


class TestSuperres:
    def test_no_leakage(self, glossy_tab):
        x = 16
        corrupted = glossy_tab.values.copy()
        keep = np.zeros(corrupted.shape[:3], bool)
        keep[::x, ::x, ::x] = True
        corrupted[~keep] = 123.0
        a, b = downsample_grid(glossy_tab, x), downsample_grid(MeasuredBrdf(corrupted), x)
        cfg = sparse_fit_config(FitConfig(epochs=5), x)
        wa, wb = nf_fit(a, cfg), nf_fit(b, cfg)
        assert np.array_equal(wa.flat, wb.flat)

    def test_glossy_field_beats_baseline(self):
        rep, w = superres_experiment(glossy_material(), 16, render_cfg=CFG)
        assert rep.counts == (6, 6, 12) and rep.n_samples == 432
        assert -1 <= rep.ssim_baseline <= 1 and -1 <= rep.ssim_field <= 1
        assert rep.ssim_field > rep.ssim_baseline
        assert rep.to_dict()["counts"] == [6, 6, 12]

    def test_table(self):
        reps = [SuperresReport(1, sample_counts(1), 1.0, 0.99, 0), SuperresReport(16, sample_counts(16), 0.9, 0.96, 0),
                SuperresReport(16, sample_counts(16), 0.92, 0.97, 0)]
        lines = format_table(reps).splitlines()
        assert len(lines) == 3
        assert "90^2 x 180" in lines[1] and "1.0000" in lines[1]
        assert "6^2 x 12" in lines[2] and "0.9100" in lines[2] and "0.9650" in lines[2]
