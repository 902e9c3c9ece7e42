"""Half-strip cell solves: Stokes correctors, stress Laplace, decay fits."""

import numpy as np
import pytest

from roughflow.blsolver import (compatibility_integral, certify_decay,
                                fit_mode_decay, mode0_explicit_solve,
                                solve_bl_laplace, solve_bl_stokes)
from roughflow.fields import BLGrid, Field
from roughflow.params import RoughflowError, RoughnessProfile

Y_MAX = 12.0


@pytest.fixture(scope="module")
def rough_grid():
    return BLGrid(RoughnessProfile.cosine(1.0, 0.5), 17, 48, Y_MAX)


@pytest.fixture(scope="module")
def flat_grid():
    return BLGrid(RoughnessProfile({0: 1.0}), 5, 80, Y_MAX)


class TestStokesSolve:
    def test_constant_data_is_exact(self, rough_grid):
        # U = (1, 0) solves the homogeneous problem exactly for any wall shape
        g = rough_grid
        dirichlet = np.zeros((2, 1, g.nx))
        dirichlet[0] = 1.0
        cor = solve_bl_stokes(g, Field.zeros(g, "vector"), dirichlet)
        assert np.allclose(cor.velocity.data[0], 1.0, atol=1e-9)
        assert np.allclose(cor.velocity.data[1], 0.0, atol=1e-9)
        assert np.allclose(cor.u_infinity, [[1.0], [0.0]], atol=1e-9)

    def test_oscillating_data_decays(self, flat_grid):
        # mean-free wall data on a flat wall leaves no far-field constant
        g = flat_grid
        dirichlet = np.zeros((2, 1, g.nx))
        dirichlet[0] = np.cos(2 * np.pi * g.X)
        cor = solve_bl_stokes(g, Field.zeros(g, "vector"), dirichlet)
        assert np.abs(cor.u_infinity).max() < 1e-9
        assert cor.far_drift < 1e-6
        cert = certify_decay(cor)
        assert cert.passed

    def test_rough_wall_slip_constant(self, rough_grid):
        # the same data on a rough wall does induce a horizontal far field,
        # the wall-law constant; it must agree between top and interior bands
        g = rough_grid
        dirichlet = np.zeros((2, 1, g.nx))
        dirichlet[0] = np.cos(2 * np.pi * g.X)
        cor = solve_bl_stokes(g, Field.zeros(g, "vector"), dirichlet)
        assert np.abs(cor.u_infinity[0, 0]) > 1e-2
        assert abs(cor.u_infinity[1, 0]) < 1e-9  # no net vertical transport
        # the interior band still sees the e^{-0.75 y_max} tail of mode 0
        assert cor.far_drift < 1e-2

    def test_net_flux_rejected(self, rough_grid):
        g = rough_grid
        dirichlet = np.zeros((2, 1, g.nx))
        dirichlet[1] = 1.0   # constant vertical wall velocity pumps fluid in
        with pytest.raises(RoughflowError, match="flux"):
            solve_bl_stokes(g, Field.zeros(g, "vector"), dirichlet)

    def test_undecayed_forcing_rejected(self, rough_grid):
        g = rough_grid
        f = Field.zeros(g, "vector")
        f.data[0] = 1.0      # no decay toward the truncation height
        with pytest.raises(RoughflowError, match="decayed"):
            solve_bl_stokes(g, f, np.zeros((2, 1, g.nx)))

    def test_input_validation(self, rough_grid):
        g = rough_grid
        with pytest.raises(ValueError):
            solve_bl_stokes(g, Field.zeros(g, "scalar"),
                            np.zeros((2, 1, g.nx)))
        with pytest.raises(ValueError):
            solve_bl_stokes(g, Field.zeros(g, "vector"), np.zeros((2, g.nx)))
        with pytest.raises(ValueError):
            solve_bl_stokes(g, Field.zeros(g, "vector"),
                            np.zeros((2, 1, g.nx)), viscosity=0.0)


class TestMode0Oracle:
    def test_full_solver_matches_quadrature(self, flat_grid):
        """Horizontal-mean forcing on a flat strip: PDE solve vs quadrature."""
        g = flat_grid
        f = Field.zeros(g, "vector")
        f.data[0] = np.exp(-(g.Y + 1.0))[None]
        cor = solve_bl_stokes(g, f, np.zeros((2, 1, g.nx)), viscosity=0.6)

        Yd = np.linspace(-1.0, Y_MAX, 4000)
        oracle = mode0_explicit_solve(Yd, [np.exp(-(Yd + 1.0)),
                                           np.zeros_like(Yd)],
                                      [0.0, 0.0], viscosity=0.6)
        sq = (Yd + 1.0) / (Y_MAX + 1.0)
        u1 = g.eval_s(cor.velocity.data[0].mean(axis=(0, 1)), sq)
        # quadrature tolerance: composite trapezoid on 4000 points
        assert np.abs(u1 - oracle["U1"]).max() < 5e-6
        assert np.abs(cor.u_infinity[0, 0]
                      - oracle["u_infinity"][0]) < 5e-6
        assert np.abs(cor.u_infinity[1, 0]) < 1e-9

    def test_oracle_closed_form(self):
        # F1 = e^{-Y} on Y >= 0: U1' = e^{-Y}/nu, U1 = (1 - e^{-Y})/nu
        Y = np.linspace(0.0, 30.0, 6000)
        out = mode0_explicit_solve(Y, [np.exp(-Y), np.zeros_like(Y)],
                                   [0.0, 0.0], viscosity=2.0)
        assert np.abs(out["U1"] - (1.0 - np.exp(-Y)) / 2.0).max() < 5e-6
        assert out["u_infinity"][0] == pytest.approx(0.5, abs=5e-6)


class TestStressLaplace:
    def test_compatibility_integral_closed_form(self, rough_grid):
        g = rough_grid
        src = Field.zeros(g, "scalar")
        src.data[:] = 2.0
        defect = compatibility_integral(src, np.full((1, 1, g.nx), -1.5))
        area = Y_MAX + 1.0
        assert defect[0, 0] == pytest.approx(2.0 * area - 1.5, abs=1e-9)

    def test_flat_single_mode_solution(self):
        # S = e^{-2 pi (Y + 1)} cos(2 pi X) / (2 pi D) is harmonic with
        # D * d_N S = cos(2 pi X) on the flat wall Y = -1
        D = 0.7
        g = BLGrid(RoughnessProfile({0: 1.0}), 9, 64, Y_MAX)
        flux = np.cos(2 * np.pi * g.X)[None, None, :]
        S = solve_bl_laplace(g, Field.zeros(g, "scalar"), flux, diffusion=D)
        want = np.exp(-2 * np.pi * (g.Y + 1.0)) \
            * np.cos(2 * np.pi * g.X)[:, None] / (2 * np.pi * D)
        assert np.abs(S.data[0, 0] - want).max() < 1e-8

    def test_unbalanced_flux_rejected(self, rough_grid):
        g = rough_grid
        with pytest.raises(RoughflowError, match="compatibility"):
            solve_bl_laplace(g, Field.zeros(g, "scalar"),
                             np.ones((1, 1, g.nx)))

    def test_undecayed_source_rejected(self, rough_grid):
        g = rough_grid
        src = Field.zeros(g, "scalar")
        src.data[:] = 1.0
        flux = np.full((1, 1, g.nx), -(Y_MAX + 1.0))  # balances exactly
        with pytest.raises(RoughflowError, match="decayed"):
            solve_bl_laplace(g, src, flux)

    def test_input_validation(self, rough_grid):
        g = rough_grid
        with pytest.raises(ValueError):
            solve_bl_laplace(g, Field.zeros(g, "scalar"),
                             np.zeros((1, g.nx)))
        with pytest.raises(ValueError):
            solve_bl_laplace(g, Field.zeros(g, "scalar"),
                             np.zeros((1, 1, g.nx)), diffusion=-1.0)


class TestDecayFitting:
    def test_pure_exponential(self):
        Y = np.linspace(0.0, 8.0, 400)
        rate = fit_mode_decay(Y, 2.0 * np.exp(-1.3 * Y), floor=1e-10)
        assert rate == pytest.approx(1.3, abs=1e-3)

    def test_algebraic_prefactor_recovered(self):
        # a plain log-linear fit on (2 + 0.5 Y) e^{-2 Y} would read slow;
        # the prefactor-aware fit must still find the true exponent
        Y = np.linspace(0.0, 8.0, 400)
        mag = (2.0 + 0.5 * Y) * np.exp(-2.0 * Y)
        rate = fit_mode_decay(Y, mag, floor=1e-10)
        assert rate == pytest.approx(2.0, abs=1e-2)

    def test_subfloor_signal_unfalsifiable(self):
        Y = np.linspace(0.0, 8.0, 50)
        assert fit_mode_decay(Y, np.full_like(Y, 1e-15), floor=1e-12) \
            == np.inf
        assert fit_mode_decay(Y[:2], np.ones(2), floor=1e-12) == np.inf

    def test_certificate_flags_slow_decay(self, rough_grid):
        # a corrector that artificially decays at rate ~0.2 must fail mode 0
        g = rough_grid
        cor = solve_bl_stokes(g, Field.zeros(g, "vector"),
                              np.zeros((2, 1, g.nx)))
        cor.velocity.data[0] = np.exp(-0.2 * (g.Y + 1.0))[None]
        cor.u_infinity = np.zeros((2, 1))
        cert = certify_decay(cor)
        assert not cert.passed
        assert cert.rates[0] < cert.required[0]
