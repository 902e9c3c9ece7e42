"""Field representations and differential operators.

Two tensor-product grids back every unknown:

* MacroGrid - the smooth channel, uniform-in-x (unit torus) times Chebyshev
  nodes across (0, 1).  Field data has shape (ncomp, nx, ny).
* BLGrid - the truncated rough half-strip, with a slow-x axis for the
  macroscopic variable, uniform fast-X nodes on the cell torus and Chebyshev
  nodes in the mapped vertical coordinate s = (Y + H(X)) / (Y_max + H(X)).
  Field data has shape (ncomp, sx, nx, ny).

All horizontal differentiation is spectral; vertical differentiation is
Chebyshev collocation.  Boundary-layer operators carry the chain-rule metric
terms of the vertical map, so d/dX below always means the derivative at fixed
physical Y, not fixed s.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .numerics import (bary_interp, cheb_bary_weights, cheb_diffmat,
                       cheb_nodes, clencurt_weights, fourier_diffmat,
                       fourier_modes, fourier_nodes)
from .params import RoughnessProfile

RANK_NCOMP = {"scalar": 1, "vector": 2, "tensor": 3, "matrix": 4}


class MacroGrid:
    """Smooth channel omega_0 = T^1 x (0, 1)."""

    def __init__(self, nx: int, ny: int):
        if nx > 1 and nx % 2 == 0:
            raise ValueError("horizontal grid size must be odd (Nyquist aliasing)")
        self.nx = nx
        self.ny = ny
        self.x = fourier_nodes(nx)
        self.y = cheb_nodes(ny, 0.0, 1.0)
        self.Dx = fourier_diffmat(nx)
        self.Dy = cheb_diffmat(ny, 0.0, 1.0)
        self.wy = clencurt_weights(ny, 0.0, 1.0)
        self.bary_w = cheb_bary_weights(ny)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """(nx, ny) weights integrating over omega_0 (unit area)."""
        return np.ones((self.nx, 1)) / self.nx * self.wy[None, :]

    def dx(self, data: np.ndarray) -> np.ndarray:
        return np.moveaxis(np.tensordot(data, self.Dx, axes=([-2], [1])), -1, -2)

    def dy(self, data: np.ndarray) -> np.ndarray:
        return np.tensordot(data, self.Dy, axes=([-1], [1]))

    def dyn(self, data: np.ndarray, order: int) -> np.ndarray:
        out = data
        for _ in range(order):
            out = self.dy(out)
        return out

    def eval_y(self, data: np.ndarray, yq: np.ndarray) -> np.ndarray:
        """Interpolate (..., ny) data at arbitrary heights."""
        return bary_interp(self.y, self.bary_w, data, yq)


class BLGrid:
    """Truncated rough half-strip, boundary-fitted in the vertical."""

    def __init__(self, profile: RoughnessProfile, nx: int, ny: int,
                 y_max: float, sx: int = 1):
        if nx % 2 == 0:
            # the Nyquist mode of an even grid has zero collocation derivative,
            # which injects spurious constants into the cell solves
            raise ValueError("fast horizontal grid size must be odd")
        self.profile = profile
        self.sx = sx
        self.nx = nx
        self.ny = ny
        self.y_max = y_max
        self.X = fourier_nodes(nx)
        self.s = cheb_nodes(ny, 0.0, 1.0)
        self.H = profile.eval(self.X)
        self.Hp = profile.eval(self.X, 1)
        self.depth = y_max + self.H                      # (nx,)
        self.Y = self.s[None, :] * self.depth[:, None] - self.H[:, None]
        self.Dx_slow = fourier_diffmat(sx)
        self.DX = fourier_diffmat(nx)
        self.Ds = cheb_diffmat(ny, 0.0, 1.0)
        self.ws = clencurt_weights(ny, 0.0, 1.0)
        self.bary_w = cheb_bary_weights(ny)
        # dX at fixed Y = dX at fixed s + sX * ds
        self.metric_sX = (self.Hp[:, None] * (1.0 - self.s[None, :])
                          / self.depth[:, None])         # (nx, ny)
        self.metric_sY = 1.0 / self.depth                # (nx,)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """(nx, ny) weights integrating over the truncated strip (area element
        includes the Jacobian of the vertical map)."""
        return (self.depth[:, None] / self.nx) * self.ws[None, :]

    def ds(self, data: np.ndarray) -> np.ndarray:
        return np.tensordot(data, self.Ds, axes=([-1], [1]))

    def dX(self, data: np.ndarray) -> np.ndarray:
        fast = np.moveaxis(np.tensordot(data, self.DX, axes=([-2], [1])), -1, -2)
        return fast + self.metric_sX * self.ds(data)

    def dY(self, data: np.ndarray) -> np.ndarray:
        return self.metric_sY[:, None] * self.ds(data)

    def dx_slow(self, data: np.ndarray) -> np.ndarray:
        if self.sx == 1:
            return np.zeros_like(data)
        return np.moveaxis(np.tensordot(data, self.Dx_slow, axes=([-3], [1])), -1, -3)

    def eval_s(self, data: np.ndarray, sq: np.ndarray) -> np.ndarray:
        return bary_interp(self.s, self.bary_w, data, sq)

    # solver-facing dense operators on the (nx*ny,) cell unknown, index ix*ny+iy
    @cached_property
    def DXm(self) -> np.ndarray:
        m = np.kron(self.DX, np.eye(self.ny))
        m += np.diag(self.metric_sX.ravel()) @ np.kron(np.eye(self.nx), self.Ds)
        return m

    @cached_property
    def DYm(self) -> np.ndarray:
        scale = np.repeat(self.metric_sY, self.ny)
        return scale[:, None] * np.kron(np.eye(self.nx), self.Ds)

    @cached_property
    def Lapm(self) -> np.ndarray:
        return self.DXm @ self.DXm + self.DYm @ self.DYm

    @cached_property
    def bottom_idx(self) -> np.ndarray:
        return np.arange(self.nx) * self.ny

    @cached_property
    def top_idx(self) -> np.ndarray:
        return np.arange(self.nx) * self.ny + self.ny - 1


@dataclass
class Field:
    """A scalar, vector or symmetric-tensor unknown on one of the grids.

    Component layout: vector (u1, u2); tensor (s11, s12, s22); matrix
    (a11, a12, a21, a22) for non-symmetric gradients.
    """

    grid: object
    kind: str
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        expect = RANK_NCOMP[self.kind]
        if self.data.shape[0] != expect:
            raise ValueError(f"{self.kind} field needs {expect} components, "
                             f"got shape {self.data.shape}")

    @classmethod
    def zeros(cls, grid, kind: str) -> "Field":
        ncomp = RANK_NCOMP[kind]
        if isinstance(grid, BLGrid):
            shape = (ncomp, grid.sx, grid.nx, grid.ny)
        else:
            shape = (ncomp, grid.nx, grid.ny)
        return cls(grid, kind, np.zeros(shape))

    @property
    def ncomp(self) -> int:
        return self.data.shape[0]

    def copy(self) -> "Field":
        return Field(self.grid, self.kind, self.data.copy())

    def __add__(self, other: "Field") -> "Field":
        return Field(self.grid, self.kind, self.data + other.data)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.grid, self.kind, self.data - other.data)

    def __mul__(self, a: float) -> "Field":
        return Field(self.grid, self.kind, self.data * a)

    __rmul__ = __mul__

    def mode(self, j: int) -> np.ndarray:
        """Complex Fourier coefficient j along the fast horizontal axis."""
        coeffs = fourier_modes(self.data, axis=-2)
        n = self.data.shape[-2]
        return coeffs[..., j % n, :]


@dataclass(frozen=True)
class NormReport:
    l2: float
    h1_semi: float
    linf: float


def _component_weights(kind: str) -> np.ndarray:
    # Frobenius weight: off-diagonal entry of a symmetric tensor counts twice.
    if kind == "tensor":
        return np.array([1.0, 2.0, 1.0])
    return np.ones(RANK_NCOMP[kind])


def _grad_components(f: Field) -> np.ndarray:
    """Stack (d/dx, d/dy) (macro) or (d/dX, d/dY) (BL) of every component."""
    g = f.grid
    if isinstance(g, BLGrid):
        return np.stack([g.dX(f.data), g.dY(f.data)], axis=1)
    return np.stack([g.dx(f.data), g.dy(f.data)], axis=1)


def grad(f: Field) -> Field:
    """Gradient; scalar -> vector, vector -> matrix (entry ij = d_j u_i)."""
    if f.kind == "scalar":
        comps = _grad_components(f)[0]
        return Field(f.grid, "vector", comps)
    if f.kind == "vector":
        comps = _grad_components(f)              # (2, 2, ...) = (comp, dir, ...)
        return Field(f.grid, "matrix",
                     comps.reshape((4,) + comps.shape[2:]))
    raise ValueError("gradient of a tensor field is not supported")


def grad_x(f: Field) -> np.ndarray:
    """Slow-x derivative of every component of a boundary-layer field."""
    return f.grid.dx_slow(f.data)


def sym_grad(u: Field) -> Field:
    j = grad(u).data                             # (4 = 11,12,21,22, ...)
    return Field(u.grid, "tensor",
                 np.stack([j[0], 0.5 * (j[1] + j[2]), j[3]]))


def skew_grad(u: Field) -> Field:
    j = grad(u).data
    w = 0.5 * (j[1] - j[2])                      # W_12
    z = np.zeros_like(w)
    return Field(u.grid, "matrix", np.stack([z, w, -w, z]))


def g_a(grad_u: Field, sigma: Field, a: float) -> Field:
    """Objective-derivative bilinear form sigma*W - W*sigma - a*(sigma*D + D*sigma)."""
    if grad_u.kind != "matrix" or sigma.kind != "tensor":
        raise ValueError("g_a expects a velocity-gradient matrix and a symmetric tensor")
    j = grad_u.data
    d11, d22 = j[0], j[3]
    d12 = 0.5 * (j[1] + j[2])
    w = 0.5 * (j[1] - j[2])
    s11, s12, s22 = sigma.data
    g11 = -2.0 * w * s12 - 2.0 * a * (s11 * d11 + s12 * d12)
    g12 = w * (s11 - s22) - a * (s11 * d12 + s12 * (d11 + d22) + s22 * d12)
    g22 = 2.0 * w * s12 - 2.0 * a * (s12 * d12 + s22 * d22)
    return Field(sigma.grid, "tensor", np.stack([g11, g12, g22]))


def advect(velocity: Field, f: Field) -> Field:
    """(velocity . grad) f, componentwise, in the field's fast variables."""
    comps = _grad_components(f)
    out = velocity.data[0] * comps[:, 0] + velocity.data[1] * comps[:, 1]
    return Field(f.grid, f.kind, out)


def div(f: Field) -> Field:
    comps = _grad_components(f)
    if f.kind == "vector":
        return Field(f.grid, "scalar", (comps[0, 0] + comps[1, 1])[None])
    if f.kind == "tensor":
        return Field(f.grid, "vector",
                     np.stack([comps[0, 0] + comps[1, 1],
                               comps[1, 0] + comps[2, 1]]))
    raise ValueError(f"divergence undefined for {f.kind} field")


def tensor_to_matrix(t: Field) -> Field:
    s11, s12, s22 = t.data
    return Field(t.grid, "matrix", np.stack([s11, s12, s12, s22]))


def field_norms(f: Field) -> NormReport:
    """L2, H1-seminorm and Linf over the field's own domain.

    Boundary-layer fields are measured in cell variables (X, Y) with the
    vertical-map Jacobian; the slow-x direction is averaged (unit torus).
    """
    w = f.grid.quad_weights
    cw = _component_weights(f.kind)
    sq = np.einsum("c,c...->...", cw, f.data**2)
    grads = _grad_components(f)
    gsq = np.einsum("c,cd...->...", cw, grads**2)
    if isinstance(f.grid, BLGrid):
        sq = sq.mean(axis=0)
        gsq = gsq.mean(axis=0)
    l2 = float(np.sqrt(np.sum(w * sq)))
    h1 = float(np.sqrt(np.sum(w * gsq)))
    linf = float(np.abs(f.data).max()) if f.data.size else 0.0
    return NormReport(l2, h1, linf)


def horizontal_average(f: Field) -> np.ndarray:
    """Mean over the fast horizontal variable: the j = 0 Fourier mode.

    Returns a vertical profile of shape (ncomp, ny) for macro fields and
    (ncomp, sx, ny) for boundary-layer fields.
    """
    return f.data.mean(axis=-2)
