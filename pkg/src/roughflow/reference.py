"""Direct solver in the rough channel, used as the convergence reference.

One periodicity cell of the rough wall is mapped onto the unit square by the
boundary-fitted transform y_tilde = (y + eps*H(x/eps)) / (1 + eps*H(x/eps)),
so the generic channel assembler applies with variable-coefficient derivative
operators.  The nonlinear terms are resolved by a defect-correction loop
around a single LU factorization of the Stokes-diffusion part: the matrix is
assembled and factored once, every sweep only re-evaluates the quadratic
couplings as matrix-vector products.
"""

from __future__ import annotations

import numpy as np

from .fields import Field
from .macrosolver import (ChannelBC, ChannelOps, ChannelSolution,
                          _ga_freeze_coeffs, _interior_pressure_ops,
                          _pack_solution, _unpack, _update_norm,
                          assemble_oldroyd, build_rhs)
from .numerics import (bary_interp, bary_weights, cheb_bary_weights,
                       cheb_diffmat, cheb_nodes, clencurt_weights, diffmat,
                       factor_equilibrated, fourier_diffmat, fourier_nodes,
                       solve_equilibrated)
from .params import PhysicalParams, RoughflowError, RoughnessProfile


class ReferenceGrid:
    """Boundary-fitted tensor grid on one cell of the rough channel.

    The cell is x in [0, eps) with the wall at y = -eps*H(x/eps) and the top
    at y = 1; profile=None selects the flat wall H = 0 (the domain is then
    the smooth channel, which the consistency tests exploit).  Vertical
    collocation runs in the mapped coordinate s in [0, 1] (s = 0 wall,
    s = 1 top); y_phys holds the physical heights per node.

    stretch < 1 activates an exponential wall-clustering map s = g(t) with
    g'(0) = stretch, applied on top of the Chebyshev nodes t: the solution
    carries gradient layers of thickness ~eps/(2 pi j) above the rough wall,
    and the plain Lobatto spacing cannot follow them once eps is small.  The
    map enters only through the chain rule (d/ds = g'(t)^-1 d/dt) and the
    quadrature weights, so interpolation stays on Chebyshev nodes.
    """

    def __init__(self, profile: RoughnessProfile | None, epsilon: float,
                 nx: int, ny: int, stretch: float | None = None):
        if nx % 2 == 0:
            raise ValueError("horizontal grid size must be odd (Nyquist aliasing)")
        if epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        self.profile = profile
        self.epsilon = epsilon
        self.nx = nx
        self.ny = ny
        self.stretch = stretch
        self.X = fourier_nodes(nx)
        self.t = cheb_nodes(ny, 0.0, 1.0)
        self.bary_w = cheb_bary_weights(ny)
        if stretch is None or stretch >= 1.0:
            self._beta = 0.0
            self.s = self.t
            self.sp = np.ones(ny)
        else:
            if stretch <= 0.0:
                raise ValueError("stretch must lie in (0, 1]")
            # solve g'(0) = beta/(e^beta - 1) = stretch
            from scipy.optimize import brentq
            beta = brentq(lambda b: b / np.expm1(b) - stretch, 1e-9, 80.0)
            self._beta = beta
            self.s = np.expm1(beta * self.t) / np.expm1(beta)
            self.s[-1] = 1.0
            self.sp = beta * np.exp(beta * self.t) / np.expm1(beta)
        self.Dfast = fourier_diffmat(nx)
        self.Ds = cheb_diffmat(ny, 0.0, 1.0) / self.sp[:, None]
        self.ws = clencurt_weights(ny, 0.0, 1.0) * self.sp
        if profile is None:
            self.H = np.zeros(nx)
            self.Hp = np.zeros(nx)
        else:
            self.H = profile.eval(self.X)
            self.Hp = profile.eval(self.X, 1)
            if epsilon * self.H.max() >= 1.0:
                raise ValueError("rough wall reaches the top of the channel")
        self.depth = 1.0 + epsilon * self.H                    # (nx,)
        self.x_phys = epsilon * self.X
        # y(s, X) = s*(1 + eps H) - eps H
        self.y_phys = self.s[None, :] * self.depth[:, None] \
            - epsilon * self.H[:, None]                        # (nx, ny)

    @property
    def quad_weights(self) -> np.ndarray:
        """(nx, ny) weights of the physical cell integral, per unit x-length."""
        return self.depth[:, None] / self.nx * self.ws[None, :]

    def eval_s(self, data: np.ndarray, sq: np.ndarray) -> np.ndarray:
        if self._beta:
            sq = np.log1p(np.clip(np.asarray(sq, dtype=float), 0.0, None)
                          * np.expm1(self._beta)) / self._beta
        return bary_interp(self.t, self.bary_w, data, sq)


def default_stretch(epsilon: float) -> float | None:
    """Wall-clustering strength for a reference solve at a given epsilon.

    g'(0) = 8 eps keeps the number of collocation nodes inside the leading
    eps-thick gradient layer roughly constant as eps shrinks; above
    eps = 1/8 the plain Lobatto spacing already resolves the layer.
    """
    s = 8.0 * epsilon
    return None if s >= 1.0 else s


def reference_ops(grid: ReferenceGrid) -> ChannelOps:
    """Physical-derivative operator set of the mapped rough cell."""
    cached = getattr(grid, "_channel_ops", None)
    if cached is not None:
        return cached
    nx, ny, eps = grid.nx, grid.ny, grid.epsilon
    Ks = np.kron(np.eye(nx), grid.Ds)
    Kx = np.kron(grid.Dfast, np.eye(ny)) / eps
    # d/dx = (1/eps) d/dX + H'(X)(1-s)/(1+eps H) d/ds ;  d/dy = d/ds /(1+eps H)
    mx = (grid.Hp[:, None] * (1.0 - grid.s[None, :])
          / grid.depth[:, None]).ravel()
    my = np.repeat(1.0 / grid.depth, ny)
    Dx = Kx + mx[:, None] * Ks
    Dy = my[:, None] * Ks
    Lap = Dx @ Dx + Dy @ Dy
    t_int = grid.t[1:-1]
    Ds_int = diffmat(t_int, bary_weights(t_int)) / grid.sp[1:-1][:, None]
    DxP, DyP = _interior_pressure_ops(
        grid.s, nx, grid.Dfast / eps,
        metric_sX=mx.reshape(nx, ny), metric_sY=1.0 / grid.depth,
        Ds_int=Ds_int)
    int_idx = np.add.outer(np.arange(nx) * ny, np.arange(1, ny - 1)).ravel()
    bottom = np.arange(nx) * ny
    top = np.arange(nx) * ny + ny - 1
    # outward normal at the rough wall is along -(H', 1)
    rows_bot = -(grid.Hp[:, None] * Dx[bottom] + Dy[bottom])
    ops = ChannelOps(grid=grid, nx=nx, ny=ny, Dx=Dx, Dy=Dy, Lap=Lap,
                     DxP=DxP, DyP=DyP, int_idx=int_idx, bottom_idx=bottom,
                     top_idx=top, sigma_rows_bottom=rows_bot,
                     sigma_rows_top=Dy[top],
                     quad=grid.quad_weights.ravel())
    grid._channel_ops = ops
    return ops


def _nonlinear_defect(ops: ChannelOps, params: PhysicalParams,
                      u: np.ndarray, s: np.ndarray,
                      with_stress: bool) -> np.ndarray:
    """Quadratic couplings Re u.grad u and We(u.grad sigma + g_a) as a
    right-hand-side defect (zero on wall, continuity and gauge rows)."""
    M, Mp = ops.M, ops.Mp
    nblocks = 5 if with_stress else 2
    out = np.zeros(nblocks * M + Mp + 1)
    re, we, a = params.reynolds, params.weissenberg, params.slip_parameter
    walls = np.concatenate([ops.bottom_idx, ops.top_idx])
    if re != 0.0:
        for i in range(2):
            adv = u[0] * (ops.Dx @ u[i]) + u[1] * (ops.Dy @ u[i])
            adv[walls] = 0.0
            out[i * M:(i + 1) * M] = re * adv
    if with_stress and we != 0.0:
        jf = [ops.Dx @ u[0], ops.Dy @ u[0], ops.Dx @ u[1], ops.Dy @ u[1]]
        gfree = _ga_freeze_coeffs(*jf, a)
        for c in range(3):
            term = u[0] * (ops.Dx @ s[c]) + u[1] * (ops.Dy @ s[c])
            for cc in range(3):
                term += gfree[c][cc] * s[cc]
            term[walls] = 0.0
            out[2 * M + Mp + c * M:2 * M + Mp + (c + 1) * M] = we * term
    return out


def residual_check(sol: ChannelSolution, params: PhysicalParams,
                   refine: int = 8,
                   forcing: np.ndarray = None) -> dict[str, float]:
    """Independent L2 residuals of the stationary system for a cell solution.

    refine > 0 interpolates the fields onto a vertically refined lattice
    before applying freshly assembled operators, probing the solution
    between its own collocation nodes; refine = 0 re-evaluates at the
    original nodes (residuals then reflect the linear-algebra tolerance).
    Boundary rows carry boundary conditions, so residuals are interior-only.
    """
    grid = sol.grid
    if refine:
        fine = ReferenceGrid(grid.profile, grid.epsilon, grid.nx,
                             grid.ny + refine, stretch=grid.stretch)
        lift = lambda d: grid.eval_s(d, fine.s)
    else:
        fine, lift = grid, lambda d: d
    ops = reference_ops(fine)
    re, we = params.reynolds, params.weissenberg
    r, Dd = params.retardation, params.stress_diffusion
    u = lift(sol.velocity.data).reshape(2, -1)
    p = lift(sol.pressure.data).reshape(-1)
    s = lift(sol.stress.data).reshape(3, -1)
    if forcing is None:
        forcing = params.force_at(fine.x_phys[:, None] * np.ones(fine.ny),
                                  fine.y_phys)
    f = forcing.reshape(2, -1)

    interior = np.zeros(ops.M, dtype=bool)
    interior[ops.int_idx] = True
    w = fine.quad_weights.ravel() * interior

    def l2(rows):
        return float(np.sqrt(sum(np.sum(w * rr**2) for rr in rows)))

    gp = np.stack([ops.Dx @ p, ops.Dy @ p])
    div_s = np.stack([ops.Dx @ s[0] + ops.Dy @ s[1],
                      ops.Dx @ s[1] + ops.Dy @ s[2]])
    mom = [re * (u[0] * (ops.Dx @ u[i]) + u[1] * (ops.Dy @ u[i]))
           - (1.0 - r) * (ops.Lap @ u[i]) + gp[i] - div_s[i] - f[i]
           for i in range(2)]
    cont = [ops.Dx @ u[0] + ops.Dy @ u[1]]
    jf = [ops.Dx @ u[0], ops.Dy @ u[0], ops.Dx @ u[1], ops.Dy @ u[1]]
    gfree = _ga_freeze_coeffs(*jf, params.slip_parameter)
    two_rd = [2.0 * r * jf[0], r * (jf[1] + jf[2]), 2.0 * r * jf[3]]
    constit = []
    for c in range(3):
        term = u[0] * (ops.Dx @ s[c]) + u[1] * (ops.Dy @ s[c])
        for cc in range(3):
            term += gfree[c][cc] * s[cc]
        constit.append(we * term + s[c] - Dd * (ops.Lap @ s[c]) - two_rd[c])
    return {"momentum": l2(mom), "continuity": l2(cont),
            "constitutive": l2(constit)}


def solve_reference(profile: RoughnessProfile | None, epsilon: float,
                    params: PhysicalParams, nx: int, ny: int,
                    forcing: np.ndarray = None, tol: float = 1e-10,
                    max_iter: int = 200, verbose: bool = False,
                    stretch: float | None = None) -> ChannelSolution:
    """Stationary flow in one rough-wall cell at a given epsilon.

    forcing: (2, nx, ny) samples at the physical nodes; defaults to the body
    force of params.  Homogeneous walls: no-slip velocity, zero stress flux.
    stretch (optional, in (0, 1]) activates the wall-clustering vertical map.
    """
    grid = ReferenceGrid(profile, epsilon, nx, ny, stretch=stretch)
    ops = reference_ops(grid)
    if forcing is None:
        forcing = params.force_at(grid.x_phys[:, None] * np.ones(ny),
                                  grid.y_phys)
    bc = ChannelBC.zero(nx)
    with_stress = not (params.retardation == 0.0 and params.weissenberg == 0.0)
    stress_rhs = np.zeros((3, nx, ny))
    rhs = build_rhs(ops, forcing, stress_rhs, bc, with_stress)

    frozen = PhysicalParams(
        reynolds=0.0, weissenberg=0.0, retardation=params.retardation,
        slip_parameter=params.slip_parameter,
        stress_diffusion=params.stress_diffusion,
        body_force=params.body_force)
    A = assemble_oldroyd(ops, frozen, np.zeros((2, ops.M)),
                         with_stress=with_stress)
    fac = factor_equilibrated(A)
    del A

    linear = params.reynolds == 0.0 and params.weissenberg == 0.0
    u = np.zeros((2, ops.M))
    s = np.zeros((3, ops.M))
    ratios: list = []
    prev = None
    p_int = np.zeros((nx, ny - 2))
    for it in range(1, (1 if linear else max_iter) + 1):
        defect = _nonlinear_defect(ops, params, u, s, with_stress)
        sol = solve_equilibrated(fac, rhs - defect, "reference cell solve")
        u_new, p_int, s_new = _unpack(ops, sol, with_stress)
        u_new = u_new.reshape(2, -1)
        s_new = s_new.reshape(3, -1)
        dn = _update_norm(ops, u_new - u, s_new - s)
        scale = max(_update_norm(ops, u_new, s_new), 1e-30)
        u, s = u_new, s_new
        if prev is not None and prev > 0:
            ratios.append(dn / prev)
        prev = dn
        if verbose:
            print(f"  reference sweep {it}: update {dn / scale:.3e}")
        if linear or dn / scale < tol:
            return _pack_solution(ops, u.reshape(2, nx, ny), p_int,
                                  s.reshape(3, nx, ny), it, ratios, True)
        if not np.isfinite(dn):
            raise RoughflowError(
                "reference defect-correction sweep diverged "
                f"(epsilon={epsilon:g})")
    raise RoughflowError(
        f"reference solve did not converge in {max_iter} sweeps "
        f"(epsilon={epsilon:g}, last ratio {ratios[-1] if ratios else np.nan:.3f})")
