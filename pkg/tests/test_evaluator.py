"""Composite evaluation, wall residuals, and slope fitting."""

import numpy as np
import pytest

from roughflow.cascade import run_cascade
from roughflow.evaluator import (boundary_residual, error_table_rows,
                                 error_vs_reference, evaluate_expansion,
                                 fit_rates, write_error_csv, write_slope_csv)
from roughflow.fields import BLGrid, MacroGrid
from roughflow.params import PhysicalParams, RoughflowError, RoughnessProfile
from roughflow.reference import ReferenceGrid, solve_reference

PROF = RoughnessProfile.cosine(1.0, 0.5)


@pytest.fixture(scope="module")
def newt_state():
    return run_cascade(1, PhysicalParams(retardation=0.0), PROF,
                       MacroGrid(1, 32), BLGrid(PROF, 17, 48, 8.0))


class TestFitRates:
    def test_pure_power(self):
        eps = np.array([0.1, 0.05, 0.025, 0.0125])
        fit = fit_rates(eps, eps**1.5)
        assert fit.slope == pytest.approx(1.5, abs=1e-12)
        assert fit.r2 == pytest.approx(1.0, abs=1e-12)
        assert fit.n_used == 4
        assert not any(fit.excluded)

    def test_linear_with_prefactor(self):
        eps = np.array([0.1, 0.05, 0.025])
        fit = fit_rates(eps, 3.0 * eps)
        assert fit.slope == pytest.approx(1.0, abs=1e-12)

    def test_floor_exclusion(self):
        eps = np.array([0.1, 0.05, 0.025, 0.0125])
        err = eps**2.0
        err[-1] = 2.5e-4          # saturated point, below 3 * floor
        fit = fit_rates(eps, err, floor=1e-4)
        assert fit.n_used == 3
        assert fit.excluded == (False, False, False, True)
        assert fit.slope == pytest.approx(2.0, abs=1e-12)

    def test_too_few_survivors(self):
        eps = np.array([0.1, 0.05, 0.025])
        with pytest.raises(RoughflowError):
            fit_rates(eps, eps**2, floor=1.0)


class TestCompositeEvaluation:
    def test_zero_force_composite_is_zero(self):
        params = PhysicalParams(
            retardation=0.0,
            body_force=lambda x, y: (np.zeros_like(y), np.zeros_like(y)))
        st = run_cascade(0, params, PROF, MacroGrid(1, 32),
                         BLGrid(PROF, 9, 40, 8.0))
        grid = ReferenceGrid(PROF, 0.1, 9, 24)
        u, p, s = evaluate_expansion(st, 0, 0.1, grid)
        assert np.abs(u).max() < 1e-10
        assert np.abs(s).max() < 1e-10
        assert np.abs(p - p.mean()).max() < 1e-10
        d, n = boundary_residual(st, 0, 0.1)
        assert d < 1e-10 and n < 1e-10

    def test_wall_law_matches_oscillating_far_from_wall(self, newt_state):
        # above the layer the strip oscillation is exponentially small, so
        # dropping it (keeping the far-field constants) changes nothing there
        grid = ReferenceGrid(PROF, 0.1, 17, 40)
        u_full, _, _ = evaluate_expansion(newt_state, 1, 0.1, grid)
        u_wl, _, _ = evaluate_expansion(newt_state, 1, 0.1, grid,
                                        oscillating=False)
        upper = grid.y_phys[0] > 0.5
        assert np.abs(u_full[:, :, upper] - u_wl[:, :, upper]).max() < 1e-5

    def test_order_mismatch_rejected(self, newt_state):
        grid = ReferenceGrid(PROF, 0.1, 9, 24)
        with pytest.raises(RoughflowError):
            evaluate_expansion(newt_state, 5, 0.1, grid)
        with pytest.raises(RoughflowError):
            boundary_residual(newt_state, 5, 0.1)

    def test_epsilon_mismatch_rejected(self, newt_state):
        grid = ReferenceGrid(PROF, 0.1, 9, 24)
        with pytest.raises(RoughflowError):
            evaluate_expansion(newt_state, 0, 0.2, grid)

    def test_wrong_profile_rejected(self, newt_state):
        other = RoughnessProfile.cosine(1.0, 0.3)
        grid = ReferenceGrid(other, 0.1, 9, 24)
        with pytest.raises(RoughflowError):
            evaluate_expansion(newt_state, 0, 0.1, grid)


class TestAgainstReference:
    def test_error_drops_with_order_and_epsilon(self, newt_state):
        params = PhysicalParams(retardation=0.0)
        reps = {}
        for eps in (0.1, 0.05):
            ref = solve_reference(PROF, eps, params, 17, 40)
            reps[eps] = {N: error_vs_reference(newt_state, N, ref)
                         for N in (0, 1)}
        for eps in reps:
            assert reps[eps][1]["u"].l2 < reps[eps][0]["u"].l2
        # order-0 velocity error is O(eps): halving eps must shrink it
        assert reps[0.05][0]["u"].l2 < 0.7 * reps[0.1][0]["u"].l2

    def test_dirichlet_residual_shrinks(self, newt_state):
        d1, _ = boundary_residual(newt_state, 0, 0.1)
        d2, _ = boundary_residual(newt_state, 0, 0.05)
        assert d2 < 0.7 * d1


class TestCsvOutput:
    def test_error_rows_and_determinism(self, newt_state, tmp_path):
        params = PhysicalParams(retardation=0.0)
        ref = solve_reference(PROF, 0.1, params, 9, 32)
        rep = error_vs_reference(newt_state, 0, ref)
        rows = error_table_rows(0.1, 0, rep)
        assert len(rows) == 9          # 3 unknowns x 3 norms
        assert all(r[0] == 0.1 and r[1] == 0 for r in rows)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_error_csv(p1, rows)
        write_error_csv(p2, rows)
        assert p1.read_bytes() == p2.read_bytes()

    def test_slope_csv_carries_counts_and_flags(self, tmp_path):
        eps = np.array([0.1, 0.05, 0.025, 0.0125])
        err = eps**2.0
        err[-1] = 2.5e-4
        fit = fit_rates(eps, err, floor=1e-4)
        path = tmp_path / "slopes.csv"
        write_slope_csv(path, [(0, "u", "l2", fit)])
        header, row = path.read_text().strip().splitlines()
        assert header.split(",") == ["N", "unknown", "norm", "slope", "r2",
                                     "n_used", "excluded"]
        cells = row.split(",")
        assert cells[5] == "3"
        assert cells[6] == "0;0;0;1"
