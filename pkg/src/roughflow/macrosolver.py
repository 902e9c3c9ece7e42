"""Stationary diffusive Oldroyd solver on a channel-type tensor grid.

One generic collocation assembler covers both the smooth macroscopic channel
and (through a caller-supplied operator set) the mapped rough reference
domain.  Unknowns per node: velocity (u1, u2), pressure on the interior
vertical levels, and the symmetric extra stress (s11, s12, s22).  The
momentum and constitutive equations hold at interior nodes; walls carry
velocity Dirichlet rows and stress flux (Robin-free Neumann) rows; the
continuity rows and a mean-pressure gauge are bordered to remove the
additive pressure constant.

The nonlinear terms (Re u.grad u, We (u.grad sigma + g_a(grad u, sigma)))
are handled by a Picard loop that freezes the transporting velocity and the
g_a gradient at the previous iterate, with parameter continuation as a
fallback when the straight iteration diverges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import Field, MacroGrid
from .numerics import (bary_weights, diffmat, factor_equilibrated,
                       solve_equilibrated)
from .params import PhysicalParams, RoughflowError


@dataclass
class ChannelOps:
    """Dense operator set of a channel-type grid, flat node index ix*ny+iy.

    sigma_rows_* are the wall rows of the stress flux functional d_n sigma
    (outward normal derivative, one row per wall node); the assembler scales
    them by the stress diffusion coefficient.
    """

    grid: object
    nx: int
    ny: int
    Dx: np.ndarray
    Dy: np.ndarray
    Lap: np.ndarray
    DxP: np.ndarray
    DyP: np.ndarray
    int_idx: np.ndarray
    bottom_idx: np.ndarray
    top_idx: np.ndarray
    sigma_rows_bottom: np.ndarray
    sigma_rows_top: np.ndarray
    quad: np.ndarray

    @property
    def M(self) -> int:
        return self.nx * self.ny

    @property
    def Mp(self) -> int:
        return self.nx * (self.ny - 2)


def _interior_pressure_ops(nodes: np.ndarray, nx: int, Dx_fast: np.ndarray,
                           metric_sX=None, metric_sY=None, Ds_int=None):
    """Pressure-gradient matrices on the interior vertical levels.

    nodes: full vertical collocation nodes; the pressure uses nodes[1:-1].
    Optional metric arrays (full (nx, ny) / (nx,)) apply a vertical-map chain
    rule, as in the boundary-fitted reference domain.  Ds_int overrides the
    interior derivative matrix (needed when the vertical nodes are themselves
    images of a stretching map and differentiation runs in the pre-image).
    """
    ny_i = len(nodes) - 2
    if Ds_int is None:
        s_int = nodes[1:-1]
        Ds_i = diffmat(s_int, bary_weights(s_int))
    else:
        Ds_i = Ds_int
    Kx = np.kron(Dx_fast, np.eye(ny_i))
    Ks = np.kron(np.eye(nx), Ds_i)
    if metric_sX is None:
        DxP = Kx
        DyP = Ks
    else:
        DxP = Kx + metric_sX[:, 1:-1].ravel()[:, None] * Ks
        DyP = np.repeat(metric_sY, ny_i)[:, None] * Ks
    return DxP, DyP


def macro_ops(grid: MacroGrid) -> ChannelOps:
    """Operator set of the smooth channel T x (0, 1)."""
    cached = getattr(grid, "_channel_ops", None)
    if cached is not None:
        return cached
    nx, ny = grid.nx, grid.ny
    Dx = np.kron(grid.Dx, np.eye(ny))
    Dy = np.kron(np.eye(nx), grid.Dy)
    Lap = Dx @ Dx + Dy @ Dy
    DxP, DyP = _interior_pressure_ops(grid.y, nx, grid.Dx)
    int_idx = np.add.outer(np.arange(nx) * ny, np.arange(1, ny - 1)).ravel()
    bottom = np.arange(nx) * ny
    top = np.arange(nx) * ny + ny - 1
    ops = ChannelOps(grid=grid, nx=nx, ny=ny, Dx=Dx, Dy=Dy, Lap=Lap,
                     DxP=DxP, DyP=DyP, int_idx=int_idx, bottom_idx=bottom,
                     top_idx=top,
                     sigma_rows_bottom=-Dy[bottom],   # d_n = -d_y at y = 0
                     sigma_rows_top=Dy[top],          # d_n = +d_y at y = 1
                     quad=grid.quad_weights.ravel())
    grid._channel_ops = ops
    return ops


@dataclass
class ChannelBC:
    """Wall data: velocity values and stress flux values D*d_n(sigma)."""

    u_bottom: np.ndarray
    u_top: np.ndarray
    sigma_bottom: np.ndarray
    sigma_top: np.ndarray

    @classmethod
    def zero(cls, nx: int) -> "ChannelBC":
        return cls(np.zeros((2, nx)), np.zeros((2, nx)),
                   np.zeros((3, nx)), np.zeros((3, nx)))


def _ga_freeze_coeffs(j11, j12, j21, j22, a):
    """Per-node couplings of g_a(grad_u_frozen, sigma), rows = (11, 12, 22)."""
    d11, d22 = j11, j22
    d12 = 0.5 * (j12 + j21)
    w = 0.5 * (j12 - j21)
    z = np.zeros_like(w)
    return [
        [-2 * a * d11, -2 * w - 2 * a * d12, z],
        [w - a * d12, -a * (d11 + d22), -w - a * d12],
        [z, 2 * w - 2 * a * d12, -2 * a * d22],
    ]


def _ga_base_coeffs(s11, s12, s22, a):
    """Per-node couplings of g_a(grad_v, sigma_frozen) on (j11,j12,j21,j22)."""
    z = np.zeros_like(s11)
    return [
        [-2 * a * s11, -(1 + a) * s12, (1 - a) * s12, z],
        [-a * s12, 0.5 * (s11 - s22) - 0.5 * a * (s11 + s22),
         -0.5 * (s11 - s22) - 0.5 * a * (s11 + s22), -a * s12],
        [z, (1 - a) * s12, -(1 + a) * s12, -2 * a * s22],
    ]


def assemble_oldroyd(ops: ChannelOps, params: PhysicalParams,
                     frozen_u: np.ndarray, base=None,
                     with_stress: bool = True) -> np.ndarray:
    """Linearized system matrix at a frozen transport state.

    frozen_u: (2, M) transporting velocity (Picard state or expansion base).
    base: optional (u0 (2, M), sigma0 (3, M)) adding the first-variation
    couplings v.grad(u0) in momentum and We (v.grad(sigma0) +
    g_a(grad v, sigma0)) in the constitutive rows, as needed by the
    linearized cascade problems.  with_stress=False drops the stress block
    entirely (Newtonian shortcut, sigma identically zero).
    """
    M, Mp = ops.M, ops.Mp
    re, we = params.reynolds, params.weissenberg
    r, a, Dd = params.retardation, params.slip_parameter, params.stress_diffusion
    nun = 1.0 - r
    igl = ops.int_idx
    bot, top = ops.bottom_idx, ops.top_idx

    nblocks = 5 if with_stress else 2
    n = nblocks * M + Mp + 1
    iu1, iu2, ip = 0, M, 2 * M
    isig = [2 * M + Mp + c * M for c in range(3)]
    ilam = n - 1

    Adv = frozen_u[0][:, None] * ops.Dx + frozen_u[1][:, None] * ops.Dy
    mom = re * Adv - nun * ops.Lap

    A = np.zeros((n, n))
    # momentum
    A[iu1:iu1 + M, iu1:iu1 + M] = mom
    A[iu2:iu2 + M, iu2:iu2 + M] = mom
    A[iu1 + igl, ip:ip + Mp] = ops.DxP
    A[iu2 + igl, ip:ip + Mp] = ops.DyP
    if with_stress:
        A[iu1:iu1 + M, isig[0]:isig[0] + M] = -ops.Dx
        A[iu1:iu1 + M, isig[1]:isig[1] + M] = -ops.Dy
        A[iu2:iu2 + M, isig[1]:isig[1] + M] = -ops.Dx
        A[iu2:iu2 + M, isig[2]:isig[2] + M] = -ops.Dy
    if base is not None:
        u0 = base[0]
        for i, row0 in ((0, iu1), (1, iu2)):
            A[row0:row0 + M, iu1:iu1 + M] += re * np.diag(ops.Dx @ u0[i])
            A[row0:row0 + M, iu2:iu2 + M] += re * np.diag(ops.Dy @ u0[i])

    # continuity (bordered), in the row slot matching the pressure columns
    icont = ip
    A[icont:icont + Mp, iu1:iu1 + M] = ops.Dx[igl]
    A[icont:icont + Mp, iu2:iu2 + M] = ops.Dy[igl]
    A[icont:icont + Mp, ilam] = 1.0

    if with_stress:
        # constitutive: We(adv + g_a freeze) + I - D Lap - 2r D(v)
        stress_op = we * Adv + np.eye(M) - Dd * ops.Lap
        jf = [ops.Dx @ frozen_u[0], ops.Dy @ frozen_u[0],
              ops.Dx @ frozen_u[1], ops.Dy @ frozen_u[1]]
        gfree = _ga_freeze_coeffs(*jf, a)
        for c in range(3):
            A[isig[c]:isig[c] + M, isig[c]:isig[c] + M] += stress_op
            for cc in range(3):
                A[isig[c]:isig[c] + M, isig[cc]:isig[cc] + M] += \
                    we * np.diag(gfree[c][cc])
        A[isig[0]:isig[0] + M, iu1:iu1 + M] += -2 * r * ops.Dx
        A[isig[1]:isig[1] + M, iu1:iu1 + M] += -r * ops.Dy
        A[isig[1]:isig[1] + M, iu2:iu2 + M] += -r * ops.Dx
        A[isig[2]:isig[2] + M, iu2:iu2 + M] += -2 * r * ops.Dy
        if base is not None:
            u0, s0 = base
            gb = _ga_base_coeffs(s0[0], s0[1], s0[2], a)
            vcols = [(ops.Dx, iu1), (ops.Dy, iu1), (ops.Dx, iu2), (ops.Dy, iu2)]
            for c in range(3):
                A[isig[c]:isig[c] + M, iu1:iu1 + M] += \
                    we * np.diag(ops.Dx @ s0[c])
                A[isig[c]:isig[c] + M, iu2:iu2 + M] += \
                    we * np.diag(ops.Dy @ s0[c])
                for k, (Dm, col) in enumerate(vcols):
                    A[isig[c]:isig[c] + M, col:col + M] += \
                        we * (gb[c][k][:, None] * Dm)

    # wall rows
    for row0 in (iu1, iu2):
        for b in np.concatenate([bot, top]):
            A[row0 + b, :] = 0.0
            A[row0 + b, row0 + b] = 1.0
    if with_stress:
        for c in range(3):
            for k, b in enumerate(bot):
                A[isig[c] + b, :] = 0.0
                A[isig[c] + b, isig[c]:isig[c] + M] = \
                    Dd * ops.sigma_rows_bottom[k]
            for k, t in enumerate(top):
                A[isig[c] + t, :] = 0.0
                A[isig[c] + t, isig[c]:isig[c] + M] = Dd * ops.sigma_rows_top[k]

    # pressure gauge
    A[ilam, ip:ip + Mp] = 1.0 / Mp
    return A


def build_rhs(ops: ChannelOps, forcing: np.ndarray, stress_rhs,
              bc: ChannelBC, with_stress: bool = True) -> np.ndarray:
    """Right-hand side matching assemble_oldroyd's row layout."""
    M, Mp = ops.M, ops.Mp
    nblocks = 5 if with_stress else 2
    rhs = np.zeros(nblocks * M + Mp + 1)
    f1 = forcing[0].ravel().copy()
    f2 = forcing[1].ravel().copy()
    f1[ops.bottom_idx] = bc.u_bottom[0]
    f1[ops.top_idx] = bc.u_top[0]
    f2[ops.bottom_idx] = bc.u_bottom[1]
    f2[ops.top_idx] = bc.u_top[1]
    rhs[0:M] = f1
    rhs[M:2 * M] = f2
    if with_stress:
        for c in range(3):
            g = stress_rhs[c].ravel().copy()
            g[ops.bottom_idx] = bc.sigma_bottom[c]
            g[ops.top_idx] = bc.sigma_top[c]
            rhs[2 * M + Mp + c * M:2 * M + Mp + (c + 1) * M] = g
    return rhs


@dataclass
class ChannelSolution:
    """Converged flow state with iteration diagnostics."""

    grid: object
    velocity: Field
    pressure: Field
    stress: Field
    iterations: int = 0
    update_ratios: list = field(default_factory=list)
    converged: bool = True

    def velocity_trace_stack(self, n_deriv: int) -> np.ndarray:
        """Wall y-derivatives at y = 0: shape (n_deriv + 1, 2, nx)."""
        g = self.grid
        out = [self.velocity.data[..., 0]]
        d = self.velocity.data
        for _ in range(n_deriv):
            d = g.dy(d)
            out.append(d[..., 0])
        return np.stack(out)

    def stress_trace_stack(self, n_deriv: int) -> np.ndarray:
        g = self.grid
        out = [self.stress.data[..., 0]]
        d = self.stress.data
        for _ in range(n_deriv):
            d = g.dy(d)
            out.append(d[..., 0])
        return np.stack(out)


def _unpack(ops: ChannelOps, sol: np.ndarray, with_stress: bool):
    M, Mp = ops.M, ops.Mp
    nx, ny = ops.nx, ops.ny
    u = np.stack([sol[0:M].reshape(nx, ny), sol[M:2 * M].reshape(nx, ny)])
    p_int = sol[2 * M:2 * M + Mp].reshape(nx, ny - 2)
    if with_stress:
        s = np.stack([sol[2 * M + Mp + c * M:2 * M + Mp + (c + 1) * M]
                      .reshape(nx, ny) for c in range(3)])
    else:
        s = np.zeros((3, nx, ny))
    return u, p_int, s


def _pressure_to_full(grid, nodes: np.ndarray, p_int: np.ndarray) -> np.ndarray:
    from .numerics import bary_interp
    s_int = nodes[1:-1]
    return bary_interp(s_int, bary_weights(s_int), p_int, nodes)


def _update_norm(ops: ChannelOps, du: np.ndarray, ds: np.ndarray) -> float:
    """H1-type magnitude |grad du|_L2 + |ds|_L2 + |grad ds|_L2 of an update."""
    w = ops.quad
    acc = 0.0
    for c in range(2):
        acc += np.sum(w * ((ops.Dx @ du[c])**2 + (ops.Dy @ du[c])**2))
    g1 = float(np.sqrt(acc))
    cw = [1.0, 2.0, 1.0]
    l2 = h1 = 0.0
    for c in range(3):
        l2 += cw[c] * np.sum(w * ds[c]**2)
        h1 += cw[c] * np.sum(w * ((ops.Dx @ ds[c])**2 + (ops.Dy @ ds[c])**2))
    return g1 + float(np.sqrt(l2)) + float(np.sqrt(h1))


def solve_channel(ops: ChannelOps, params: PhysicalParams,
                  forcing: np.ndarray, stress_rhs=None, bc: ChannelBC = None,
                  base=None, tol: float = 1e-10, max_iter: int = 200,
                  verbose: bool = False) -> ChannelSolution:
    """Solve the stationary system on a channel operator set.

    forcing: (2, nx, ny); stress_rhs: (3, nx, ny) or None; bc defaults to
    homogeneous.  With base set the problem is the linearized cascade system
    (a single solve, transport frozen at base velocity); otherwise the
    nonlinear terms are resolved by Picard iteration with continuation.
    """
    nx, ny = ops.nx, ops.ny
    if bc is None:
        bc = ChannelBC.zero(nx)
    if stress_rhs is None:
        stress_rhs = np.zeros((3, nx, ny))
    newtonian = (params.retardation == 0.0 and params.weissenberg == 0.0
                 and np.abs(stress_rhs).max() == 0.0
                 and np.abs(bc.sigma_bottom).max() == 0.0
                 and np.abs(bc.sigma_top).max() == 0.0)
    with_stress = not newtonian
    rhs = build_rhs(ops, forcing, stress_rhs, bc, with_stress)

    if base is not None:
        frozen = base[0]
        A = assemble_oldroyd(ops, params, frozen, base=base,
                             with_stress=with_stress)
        sol = solve_equilibrated(factor_equilibrated(A), rhs,
                                 "linearized channel system")
        u, p_int, s = _unpack(ops, sol, with_stress)
        return _pack_solution(ops, u, p_int, s, 1, [], True)

    linear = params.reynolds == 0.0 and params.weissenberg == 0.0
    u = np.zeros((2, ops.M))
    s = np.zeros((3, ops.M))
    p_int = np.zeros((nx, ny - 2))
    ratios: list = []
    iters = 0
    prev_norm = None
    for it in range(1, (1 if linear else max_iter) + 1):
        A = assemble_oldroyd(ops, params, u, with_stress=with_stress)
        sol = solve_equilibrated(factor_equilibrated(A), rhs,
                                 "channel Picard step")
        u_new, p_int, s_new = _unpack(ops, sol, with_stress)
        dn = _update_norm(ops, u_new.reshape(2, -1) - u,
                          s_new.reshape(3, -1) - s.reshape(3, -1))
        scale = max(_update_norm(ops, u_new.reshape(2, -1),
                                 s_new.reshape(3, -1)), 1e-30)
        u = u_new.reshape(2, -1)
        s = s_new
        iters = it
        rel = dn / scale
        if prev_norm is not None and prev_norm > 0:
            ratios.append(dn / prev_norm)
        prev_norm = dn
        if verbose:
            print(f"  picard {it}: update {rel:.3e}")
        if linear or rel < tol:
            return _pack_solution(ops, u.reshape(2, nx, ny), p_int, s,
                                  iters, ratios, True)
        if not np.isfinite(dn) or (len(ratios) >= 3
                                   and min(ratios[-3:]) > 1.0):
            break
    else:
        raise RoughflowError(
            f"Picard iteration did not converge in {max_iter} steps "
            f"(last relative update {rel:.3e})")

    # continuation: ramp the nonlinear couplings up in stages
    if verbose:
        print("  picard diverged; restarting with parameter continuation")
    staged = None
    for theta in (0.25, 0.5, 0.75, 1.0):
        pstage = PhysicalParams(
            reynolds=theta * params.reynolds,
            weissenberg=theta * params.weissenberg,
            retardation=params.retardation,
            slip_parameter=params.slip_parameter,
            stress_diffusion=params.stress_diffusion,
            body_force=params.body_force)
        staged = _picard_stage(ops, pstage, rhs, with_stress, tol, max_iter,
                               warm=staged)
    u, p_int, s, iters2, ratios2 = staged
    return _pack_solution(ops, u.reshape(2, nx, ny), p_int, s,
                          iters + iters2, ratios2, True)


def _picard_stage(ops, params, rhs, with_stress, tol, max_iter, warm=None):
    nx, ny = ops.nx, ops.ny
    u = np.zeros((2, ops.M)) if warm is None else warm[0]
    s = np.zeros((3, nx, ny)) if warm is None else warm[2]
    ratios: list = []
    prev = None
    for it in range(1, max_iter + 1):
        A = assemble_oldroyd(ops, params, u, with_stress=with_stress)
        sol = solve_equilibrated(factor_equilibrated(A), rhs,
                                 "channel Picard step")
        u_new, p_int, s_new = _unpack(ops, sol, with_stress)
        dn = _update_norm(ops, u_new.reshape(2, -1) - u,
                          s_new.reshape(3, -1) - s.reshape(3, -1))
        scale = max(_update_norm(ops, u_new.reshape(2, -1),
                                 s_new.reshape(3, -1)), 1e-30)
        u = u_new.reshape(2, -1)
        s = s_new
        if prev is not None and prev > 0:
            ratios.append(dn / prev)
        prev = dn
        if dn / scale < tol:
            return u, p_int, s, it, ratios
        if not np.isfinite(dn):
            break
    raise RoughflowError(
        "Picard continuation failed: nonlinear couplings too strong for the "
        "stationary solver")


def _pack_solution(ops, u, p_int, s, iters, ratios, converged):
    grid = ops.grid
    # interpolate in the pre-map coordinate: the boundary-fitted grid may
    # carry a vertical stretching, where s-space interpolation is unstable
    nodes = grid.y if isinstance(grid, MacroGrid) else getattr(grid, "t", grid.s)
    p = _pressure_to_full(grid, nodes, p_int)
    return ChannelSolution(
        grid=grid,
        velocity=Field(grid, "vector", u),
        pressure=Field(grid, "scalar", p[None]),
        stress=Field(grid, "tensor", s),
        iterations=iters, update_ratios=ratios, converged=converged)


def solve_macro(grid: MacroGrid, params: PhysicalParams, forcing=None,
                **kwargs) -> ChannelSolution:
    """Base flow in the smooth channel with no-slip walls.

    forcing defaults to the body force of params sampled on the grid.
    """
    if forcing is None:
        xg, yg = np.meshgrid(grid.x, grid.y, indexing="ij")
        forcing = params.force_at(xg, yg)
    return solve_channel(macro_ops(grid), params, forcing, **kwargs)
