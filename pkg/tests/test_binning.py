import numpy as np
import pytest

from flowfit import (
    BinGrid,
    CovariateSeries,
    CytogramSeries,
    DataError,
    Hyperparams,
    bin_particles,
    biomass_multiplicity,
    penalized_objective,
    verify_binning_bound,
)
from flowfit.binning import OUT_OF_RANGE
from flowfit.simulate import make_noisy_covariates_experiment

from conftest import toy_params


def unit_grid(D, d=1):
    return BinGrid(np.zeros(d), np.ones(d), np.full(d, D))


class TestLocate:
    def test_interior_point(self):
        g = unit_grid(2)
        assert g.locate([[0.3]])[0] == 0
        np.testing.assert_allclose(g.centers([0])[0], [0.25])

    def test_closed_top_edge(self):
        g = unit_grid(2)
        assert g.locate([[1.0]])[0] == 1

    def test_2d_flat_index_center(self):
        g = unit_grid(2, d=2)
        b = g.locate([[0.6, 0.1]])[0]
        np.testing.assert_allclose(g.centers([b])[0], [0.75, 0.25])

    def test_out_of_range_marker(self):
        g = unit_grid(4)
        flat = g.locate([[-0.01], [0.5], [1.01]])
        assert flat[0] == OUT_OF_RANGE and flat[2] == OUT_OF_RANGE
        assert flat[1] == 2

    def test_locate_of_center_is_identity(self):
        rng = np.random.default_rng(3)
        for d in (1, 2, 3):
            for D in (1, 2, 7, 33, 64):
                lo = rng.uniform(-5, 0, d)
                hi = lo + rng.uniform(0.5, 4, d)
                g = BinGrid(lo, hi, np.full(d, D))
                idx = rng.integers(0, g.total_bins, size=50)
                np.testing.assert_array_equal(g.locate(g.centers(idx)), idx)

    def test_displacement_bounded_by_half_width(self, rng):
        for d in (1, 2):
            g = BinGrid(np.zeros(d), np.ones(d) * 2.0, np.full(d, 8))
            pts = rng.uniform(0, 2, (200, d))
            centers = g.centers(g.locate(pts))
            assert np.all(np.abs(pts - centers) <= 0.5 * g.widths + 1e-12)


class TestBinParticles:
    def test_counts_aggregate(self):
        Y = CytogramSeries((np.array([[0.1], [0.12], [0.11]]),), (np.ones(3),))
        binned = bin_particles(Y, unit_grid(2), mode="counts")
        assert binned.bins[0].tolist() == [0]
        assert binned.weights[0].tolist() == [3.0]

    def test_weights_aggregate_and_conserve(self, rng):
        coords = tuple(rng.uniform(0, 1, (30, 2)) for _ in range(3))
        wts = tuple(rng.uniform(0.1, 2, 30) for _ in range(3))
        Y = CytogramSeries(coords, wts)
        binned = bin_particles(Y, unit_grid(4, d=2), mode="weights")
        for t in range(3):
            assert abs(binned.weights[t].sum() - wts[t].sum()) < 1e-9 * wts[t].sum()

    def test_counts_conservation_exact(self, rng):
        coords = (rng.uniform(0, 1, (57, 1)),)
        Y = CytogramSeries(coords, (np.ones(57),))
        binned = bin_particles(Y, unit_grid(9), mode="counts")
        assert binned.weights[0].sum() == 57.0

    def test_strict_mode_rejects_stray_particles(self):
        Y = CytogramSeries((np.array([[2.0]]),), (np.ones(1),))
        with pytest.raises(DataError):
            bin_particles(Y, unit_grid(2), mode="counts")
        tolerant = bin_particles(Y, unit_grid(2), mode="counts", strict=False)
        assert len(tolerant.bins[0]) == 0

    def test_centers_are_fixed_points_of_objective(self):
        # particles placed exactly at bin centers: binned equals unbinned
        g = unit_grid(4)
        centers = g.centers(np.array([0, 1, 3]))
        X = CovariateSeries(np.array([[0.1, 0.2], [0.0, -0.1]]), ("a", "b"))
        Y = CytogramSeries(
            (centers, centers[:2]),
            (np.array([1.0, 2.0, 1.0]), np.array([3.0, 1.0])),
        )
        binned = bin_particles(Y, g, mode="weights").to_cytograms()
        hyper = Hyperparams(0.05, 0.05, 10.0)
        params = toy_params()
        a = penalized_objective(params, X, Y, hyper)
        b = penalized_objective(params, X, binned, hyper)
        assert abs(a - b) < 1e-10


class TestBiomass:
    def test_raw_diameter_cubed(self):
        assert biomass_multiplicity(np.array([[2.0]]), 0)[0] == 8.0

    def test_log_zero_is_one(self):
        assert biomass_multiplicity(np.array([[0.0]]), 0, log_scale=True)[0] == 1.0

    def test_log_of_two(self):
        val = biomass_multiplicity(np.array([[np.log(2.0)]]), 0, log_scale=True)[0]
        assert abs(val - 8.0) < 1e-12

    def test_nonpositive_raw_rejected(self):
        with pytest.raises(DataError):
            biomass_multiplicity(np.array([[-1.0]]), 0)

    def test_selects_axis(self):
        val = biomass_multiplicity(np.array([[9.0, 3.0]]), 1)[0]
        assert val == 27.0


class TestBinningBound:
    def test_gap_zero_at_centers(self):
        g = unit_grid(8)
        centers = g.centers(np.array([1, 5]))
        X = CovariateSeries(np.array([[0.0, 0.0]]), ("a", "b"))
        Y = CytogramSeries((centers,), (np.ones(2),))
        hyper = Hyperparams(0.0, 0.0, 10.0)
        rows = verify_binning_bound(toy_params(), X, Y, [g], hyper)
        assert rows[0][1] <= 1e-10

    def test_factor_halves_when_doubling_1d(self):
        X = CovariateSeries(np.array([[0.0, 0.0]]), ("a", "b"))
        Y = CytogramSeries((np.array([[0.2], [0.8]]),), (np.ones(2),))
        hyper = Hyperparams(0.0, 0.0, 10.0)
        grids = [unit_grid(10), unit_grid(20)]
        rows = verify_binning_bound(toy_params(), X, Y, grids, hyper)
        assert abs(rows[0][2] / rows[1][2] - 2.0) < 1e-12

    def test_gap_decreases_monotonically(self, rng):
        # random 1-d cytogram, fixed feasible params, oracle = exact objective
        T = 4
        X = CovariateSeries(rng.standard_normal((T, 2)), ("a", "b"))
        coords = tuple(rng.normal(0.4, 1.1, (80, 1)) for _ in range(T))
        Y = CytogramSeries(coords, tuple(np.ones(80) for _ in range(T)))
        grids = [BinGrid.from_data(Y, D) for D in (8, 16, 32, 64)]
        hyper = Hyperparams(0.02, 0.02, 10.0)
        rows = verify_binning_bound(toy_params(), X, Y, grids, hyper)
        gaps = [r[1] for r in rows]
        assert all(g1 > g2 for g1, g2 in zip(gaps, gaps[1:]))

    def test_synthetic_experiment_gaps_decrease(self):
        truth, observed, Y = make_noisy_covariates_experiment(0.0, seed=11)
        hyper = Hyperparams(0.0, 0.0, 1.0)
        grids = [BinGrid.from_data(Y, D) for D in (10, 20, 40, 80)]
        rows = verify_binning_bound(truth.params, truth.covariates, Y, grids, hyper)
        gaps = [r[1] for r in rows]
        assert all(g1 > g2 for g1, g2 in zip(gaps, gaps[1:]))
