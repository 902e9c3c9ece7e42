"""Boundary-fitted rough-cell solver: metrics, flat limit, residuals."""

import numpy as np
import pytest

from roughflow.fields import MacroGrid
from roughflow.macrosolver import solve_macro
from roughflow.params import PhysicalParams, RoughnessProfile
from roughflow.reference import (ReferenceGrid, default_stretch,
                                 reference_ops, residual_check,
                                 solve_reference)

PROF = RoughnessProfile.cosine(1.0, 0.5)


class TestGridAndOps:
    def test_even_nx_rejected(self):
        with pytest.raises(ValueError):
            ReferenceGrid(PROF, 0.1, 8, 32)

    def test_wall_reaching_top_rejected(self):
        with pytest.raises(ValueError):
            ReferenceGrid(PROF, 0.7, 9, 32)

    def test_stretch_validation(self):
        with pytest.raises(ValueError):
            ReferenceGrid(PROF, 0.1, 9, 32, stretch=-0.5)
        # stretch >= 1 degenerates to the identity map
        g = ReferenceGrid(PROF, 0.1, 9, 32, stretch=1.0)
        assert np.allclose(g.s, g.t)

    def test_default_stretch(self):
        assert default_stretch(0.5) is None
        assert default_stretch(0.05) == pytest.approx(0.4)

    @pytest.mark.parametrize("stretch", [None, 0.25])
    def test_vertical_machinery_exact(self, stretch):
        g = ReferenceGrid(None, 0.1, 5, 40, stretch=stretch)
        f = g.s**3
        assert np.abs(g.Ds @ f - 3 * g.s**2).max() < 1e-9
        assert g.ws @ f == pytest.approx(0.25, abs=1e-12)
        sq = np.array([0.2, 0.5, 0.9])
        assert np.abs(g.eval_s(f, sq) - sq**3).max() < 1e-12

    @pytest.mark.parametrize("stretch", [None, 0.25])
    def test_physical_derivatives_on_rough_cell(self, stretch):
        g = ReferenceGrid(PROF, 0.1, 17, 40, stretch=stretch)
        ops = reference_ops(g)
        # F(x, y) = y^3 is polynomial in the vertical, periodic trivially
        F = (g.y_phys**3).ravel()
        assert np.abs(ops.Dy @ F - (3 * g.y_phys**2).ravel()).max() < 1e-7
        assert np.abs(ops.Dx @ F).max() < 1e-6
        assert np.abs(ops.Lap @ F - (6 * g.y_phys).ravel()).max() < 1e-4

    def test_quadrature_measures_cell_area(self):
        # mean depth of the cell per unit slow length is 1 + eps*mean(H)
        g = ReferenceGrid(PROF, 0.1, 17, 40, stretch=0.3)
        assert g.quad_weights.sum() == pytest.approx(1.1, abs=1e-10)


class TestFlatLimit:
    def test_matches_smooth_channel(self):
        params = PhysicalParams()
        ref = solve_reference(None, 0.1, params, 5, 48)
        mac = solve_macro(MacroGrid(1, 48), params)
        du = ref.velocity.data.mean(axis=1) - mac.velocity.data[:, 0, :]
        ds = ref.stress.data.mean(axis=1) - mac.stress.data[:, 0, :]
        assert np.abs(du).max() < 1e-9
        assert np.abs(ds).max() < 1e-9

    def test_matches_smooth_channel_stretched(self):
        params = PhysicalParams()
        ref = solve_reference(None, 0.1, params, 5, 48, stretch=0.25)
        mac = solve_macro(MacroGrid(1, 48), params)
        yq = np.linspace(0.05, 0.95, 7)
        a = ref.grid.eval_s(ref.velocity.data[0].mean(axis=0), yq)
        b = mac.grid.eval_y(mac.velocity.data[0, 0], yq)
        assert np.abs(a - b).max() < 1e-9


@pytest.fixture(scope="module")
def rough_newtonian():
    params = PhysicalParams(retardation=0.0)
    return params, solve_reference(PROF, 0.1, params, 17, 48)


class TestResiduals:
    def test_collocation_residual_tiny(self, rough_newtonian):
        params, sol = rough_newtonian
        res = residual_check(sol, params, refine=0)
        assert max(res.values()) < 1e-8

    def test_between_node_residual_converges(self, rough_newtonian):
        params, sol = rough_newtonian
        coarse = solve_reference(PROF, 0.1, params, 17, 32)
        r_c = residual_check(coarse, params)
        r_f = residual_check(sol, params)
        assert max(r_f.values()) < 0.2 * max(r_c.values())

    def test_nonlinear_residual(self):
        params = PhysicalParams(reynolds=2.0, weissenberg=0.2,
                                retardation=0.4, slip_parameter=1.0)
        sol = solve_reference(PROF, 0.1, params, 17, 40)
        res = residual_check(sol, params, refine=0)
        assert max(res.values()) < 1e-7
        assert sol.converged


class TestStretchEquivalence:
    def test_same_solution_at_common_points(self):
        params = PhysicalParams(reynolds=1.0, weissenberg=0.3,
                                retardation=0.4, slip_parameter=0.5)
        s1 = solve_reference(PROF, 0.1, params, 17, 48)
        s2 = solve_reference(PROF, 0.1, params, 17, 48, stretch=0.3)
        sq = np.linspace(0.05, 0.95, 9)
        a = s1.grid.eval_s(s1.velocity.data[0], sq)
        b = s2.grid.eval_s(s2.velocity.data[0], sq)
        assert np.abs(a - b).max() < 1e-4
