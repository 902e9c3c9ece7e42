"""Grids, field containers, and differential/tensor operators."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roughflow.fields import (BLGrid, Field, MacroGrid, advect, div,
                              field_norms, g_a, grad, horizontal_average,
                              skew_grad, sym_grad, tensor_to_matrix)
from roughflow.params import RoughnessProfile


@pytest.fixture(scope="module")
def mgrid():
    return MacroGrid(9, 24)


@pytest.fixture(scope="module")
def blgrid():
    return BLGrid(RoughnessProfile.cosine(1.0, 0.5), 17, 40, 8.0)


class TestMacroGrid:
    def test_even_nx_rejected(self):
        with pytest.raises(ValueError):
            MacroGrid(8, 24)

    def test_spectral_derivatives(self, mgrid):
        xg, yg = np.meshgrid(mgrid.x, mgrid.y, indexing="ij")
        f = np.sin(2 * np.pi * xg) * yg**3
        fx = mgrid.dx(f[None])[0]
        fy = mgrid.dy(f[None])[0]
        assert np.allclose(fx, 2 * np.pi * np.cos(2 * np.pi * xg) * yg**3,
                           atol=1e-10)
        assert np.allclose(fy, np.sin(2 * np.pi * xg) * 3 * yg**2, atol=1e-10)

    def test_quadrature_unit_area(self, mgrid):
        assert mgrid.quad_weights.sum() == pytest.approx(1.0, abs=1e-13)

    def test_interpolation_exact_for_polynomials(self, mgrid):
        data = mgrid.y**5 - 2.0 * mgrid.y
        yq = np.array([0.123, 0.5, 0.987])
        assert np.allclose(mgrid.eval_y(data, yq), yq**5 - 2.0 * yq,
                           atol=1e-12)


class TestBLGrid:
    def test_chain_rule_metric(self, blgrid):
        # F(X, Y) = Y must have dY = 1, dX = 0 despite the fitted vertical map
        F = blgrid.Y[None]
        assert np.allclose(blgrid.dY(F), 1.0, atol=1e-9)
        assert np.allclose(blgrid.dX(F), 0.0, atol=1e-9)

    def test_purely_horizontal_function(self, blgrid):
        F = np.broadcast_to(np.cos(2 * np.pi * blgrid.X)[:, None],
                            (blgrid.nx, blgrid.ny)).copy()
        want = -2 * np.pi * np.sin(2 * np.pi * blgrid.X)[:, None]
        assert np.allclose(blgrid.dX(F[None])[0], want, atol=1e-8)
        assert np.allclose(blgrid.dY(F[None])[0], 0.0, atol=1e-10)

    def test_quadrature_measures_strip_area(self, blgrid):
        # area of {-H(X) < Y < Y_max} = Y_max + mean(H) = 8 + 1
        assert blgrid.quad_weights.sum() == pytest.approx(9.0, abs=1e-10)

    def test_wall_and_top_indices(self, blgrid):
        flat = blgrid.Y.ravel()
        assert np.allclose(flat[blgrid.bottom_idx], -blgrid.H, atol=1e-12)
        assert np.allclose(flat[blgrid.top_idx], blgrid.y_max, atol=1e-12)


class TestFieldContainer:
    def test_component_count_enforced(self, mgrid):
        with pytest.raises(ValueError):
            Field(mgrid, "vector", np.zeros((3, mgrid.nx, mgrid.ny)))

    def test_mode_extraction(self, mgrid):
        data = np.cos(2 * np.pi * mgrid.x)[None, :, None] \
            * np.ones((1, 1, mgrid.ny))
        f = Field(mgrid, "scalar", data)
        assert np.allclose(f.mode(1), 0.5, atol=1e-14)
        assert np.allclose(f.mode(0), 0.0, atol=1e-14)

    def test_arithmetic(self, mgrid):
        a = Field(mgrid, "scalar", np.ones((1, mgrid.nx, mgrid.ny)))
        b = 2.0 * a - a
        assert np.allclose(b.data, 1.0)


class TestOperators:
    def _analytic_vector(self, mgrid):
        xg, yg = np.meshgrid(mgrid.x, mgrid.y, indexing="ij")
        u = np.stack([np.sin(2 * np.pi * xg) * yg,
                      np.cos(2 * np.pi * xg) * yg**2])
        return Field(mgrid, "vector", u), xg, yg

    def test_grad_splits_into_sym_plus_skew(self, mgrid):
        u, _, _ = self._analytic_vector(mgrid)
        total = grad(u).data
        s = tensor_to_matrix(sym_grad(u)).data
        w = skew_grad(u).data
        assert np.allclose(total, s + w, atol=1e-12)

    def test_divergence_analytic(self, mgrid):
        u, xg, yg = self._analytic_vector(mgrid)
        want = 2 * np.pi * np.cos(2 * np.pi * xg) * yg \
            + 2.0 * np.cos(2 * np.pi * xg) * yg
        assert np.allclose(div(u).data[0], want, atol=1e-9)

    def test_advection_analytic(self, mgrid):
        u, xg, yg = self._analytic_vector(mgrid)
        f = Field(mgrid, "scalar", (yg**2)[None])
        out = advect(u, f)
        want = u.data[1] * 2.0 * yg
        assert np.allclose(out.data[0], want, atol=1e-10)

    def test_horizontal_average(self, mgrid):
        data = (1.0 + np.cos(2 * np.pi * mgrid.x))[None, :, None] \
            * np.ones((1, 1, mgrid.ny))
        f = Field(mgrid, "scalar", data)
        assert np.allclose(horizontal_average(f), 1.0, atol=1e-14)


class TestNorms:
    def test_constant_scalar(self, mgrid):
        f = Field(mgrid, "scalar", np.full((1, mgrid.nx, mgrid.ny), 3.0))
        rep = field_norms(f)
        assert rep.l2 == pytest.approx(3.0, abs=1e-12)
        assert rep.h1_semi == pytest.approx(0.0, abs=1e-8)
        assert rep.linf == 3.0

    def test_offdiagonal_counts_twice(self, mgrid):
        data = np.zeros((3, mgrid.nx, mgrid.ny))
        data[1] = 1.0
        rep = field_norms(Field(mgrid, "tensor", data))
        assert rep.l2 == pytest.approx(np.sqrt(2.0), abs=1e-12)


class TestGa:
    """Objective-derivative form against a dense 2x2 matrix oracle."""

    @staticmethod
    def _oracle(j, s, a):
        J = np.array([[j[0], j[1]], [j[2], j[3]]])
        S = np.array([[s[0], s[1]], [s[1], s[2]]])
        D = 0.5 * (J + J.T)
        W = 0.5 * (J - J.T)
        return S @ W - W @ S - a * (S @ D + D @ S)

    def test_matches_dense_oracle(self):
        grid = MacroGrid(1, 4)
        rng = np.random.default_rng(0)
        for _ in range(100):
            j = rng.standard_normal(4)
            s = rng.standard_normal(3)
            a = rng.uniform(-1.0, 1.0)
            ju = Field(grid, "matrix", np.tile(j[:, None, None], (1, 1, 4)))
            sig = Field(grid, "tensor", np.tile(s[:, None, None], (1, 1, 4)))
            got = g_a(ju, sig, a).data[:, 0, 0]
            want = self._oracle(j, s, a)
            assert abs(got[0] - want[0, 0]) < 1e-13
            assert abs(got[1] - want[0, 1]) < 1e-13
            assert abs(got[1] - want[1, 0]) < 1e-13  # output stays symmetric
            assert abs(got[2] - want[1, 1]) < 1e-13

    @given(st.floats(-1.0, 1.0))
    @settings(max_examples=25, deadline=None)
    def test_corotational_part_is_traceless(self, w12):
        grid = MacroGrid(1, 4)
        j = np.array([0.0, w12, -w12, 0.0])
        s = np.array([0.7, -0.3, 0.2])
        ju = Field(grid, "matrix", np.tile(j[:, None, None], (1, 1, 4)))
        sig = Field(grid, "tensor", np.tile(s[:, None, None], (1, 1, 4)))
        out = g_a(ju, sig, 0.0).data[:, 0, 0]
        assert abs(out[0] + out[2]) < 1e-13

    def test_identity_stress_reduces_to_stretching(self):
        # sigma = I commutes with W; g_a(J, I, a) = -2 a D(u)
        grid = MacroGrid(1, 4)
        rng = np.random.default_rng(1)
        j = rng.standard_normal(4)
        ju = Field(grid, "matrix", np.tile(j[:, None, None], (1, 1, 4)))
        sig = Field(grid, "tensor",
                    np.tile(np.array([1.0, 0.0, 1.0])[:, None, None],
                            (1, 1, 4)))
        out = g_a(ju, sig, 0.8).data[:, 0, 0]
        D = self._oracle(j, np.array([1.0, 0.0, 1.0]), 0.8)
        assert np.allclose(out, [D[0, 0], D[0, 1], D[1, 1]], atol=1e-14)

    def test_kind_mismatch_rejected(self):
        grid = MacroGrid(1, 4)
        vec = Field.zeros(grid, "vector")
        ten = Field.zeros(grid, "tensor")
        with pytest.raises(ValueError):
            g_a(vec, ten, 0.0)
