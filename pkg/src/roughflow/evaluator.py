"""Composite-expansion evaluation and convergence diagnostics.

Samples the truncated two-scale ansatz on the rough-cell lattice, forms
error norms against the direct reference solve, measures how well the
composite satisfies the wall conditions, and fits convergence slopes over
an epsilon sweep.  The macro fields live on the smooth channel, so below
y = 0 they are continued by their wall Taylor polynomial (barycentric
extrapolation of a high-degree interpolant is unstable at these depths);
strip fields are interpolated spectrally in X and barycentrically in the
mapped vertical, and replaced by their far-field values above the
truncation height.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .cascade import ExpansionState
from .fields import NormReport
from .macrosolver import ChannelSolution
from .numerics import fourier_eval, fourier_nodes
from .params import RoughflowError
from .reference import ReferenceGrid, reference_ops

# terms of the wall Taylor polynomial continuing macro fields below y = 0;
# depth is at most eps*max(H), so the truncation error is
# (eps max H)^(n+1)/(n+1)! times a moderate derivative
N_TAYLOR = 6


def _wall_taylor_stack(mgrid, data: np.ndarray, n: int = N_TAYLOR) -> np.ndarray:
    """(n + 1, ..., sx) wall values of the first n y-derivatives."""
    out = [data[..., 0]]
    d = data
    for _ in range(n):
        d = mgrid.dy(d)
        out.append(d[..., 0])
    return np.stack(out)


def _macro_samples(mgrid, data: np.ndarray, grid: ReferenceGrid) -> np.ndarray:
    """Sample a macro field (ncomp, sx, ny) on the rough-cell lattice."""
    xq = np.mod(grid.x_phys, 1.0)
    wall = _wall_taylor_stack(mgrid, data)
    # x first (spectral, exact), vertical per column afterwards
    data_x = np.moveaxis(fourier_eval(data, xq, axis=-2), -1, -2)
    wall_x = fourier_eval(wall, xq, axis=-1)      # (n+1, ncomp, grid.nx)
    out = np.empty(data.shape[:-2] + (grid.nx, grid.ny))
    for ix in range(grid.nx):
        yq = grid.y_phys[ix]
        below = yq < 0.0
        out[..., ix, :] = mgrid.eval_y(data_x[..., ix, :], yq)
        if below.any():
            yb = yq[below]
            acc = np.zeros(data.shape[:-2] + (yb.size,))
            for q in range(wall.shape[0]):
                acc += wall_x[q][..., ix, None] * yb**q / math.factorial(q)
            out[..., ix, below] = acc
    return out


def _bl_samples(blgrid, data: np.ndarray, grid: ReferenceGrid,
                far: np.ndarray | None = None) -> np.ndarray:
    """Sample a strip field (ncomp, sx, nx, ny) on the rough-cell lattice.

    Above the truncation height the field is replaced by `far` (its
    far-field constant; zeros when omitted), per component and slow-x node.
    """
    sx = data.shape[-3]
    xq = np.mod(grid.x_phys, 1.0)
    # fast X: the cell torus coordinate of the lattice is grid.X itself
    fast = np.moveaxis(fourier_eval(data, grid.X, axis=-2), -1, -2)
    if sx == 1:
        fast = fast[..., 0, :, :]
        far_x = None if far is None else np.broadcast_to(
            far[..., 0, None], far.shape[:-1] + (grid.nx,))
    else:
        # the slow coordinate of lattice column i is xq[i]: evaluate the
        # slow axis there and keep the diagonal (slow, fast) pairing
        sl = np.moveaxis(fourier_eval(fast, xq, axis=-3), -1, -3)
        fast = np.stack([sl[..., i, i, :] for i in range(grid.nx)], axis=-2)
        far_x = None if far is None else fourier_eval(far, xq, axis=-1)
    out = np.empty(data.shape[:-3] + (grid.nx, grid.ny))
    for ix in range(grid.nx):
        Y = grid.y_phys[ix] / grid.epsilon
        st = (Y + grid.H[ix]) / (blgrid.y_max + grid.H[ix])
        beyond = st > 1.0
        out[..., ix, :] = blgrid.eval_s(fast[..., ix, :], np.minimum(st, 1.0))
        if beyond.any():
            fv = 0.0 if far_x is None else far_x[..., ix, None]
            out[..., ix, beyond] = fv
    return out


def _check_compatible(state: ExpansionState, N: int,
                      grid: ReferenceGrid) -> None:
    if N > state.order:
        raise RoughflowError(
            f"expansion evaluated at order {N} but cascade holds {state.order}")
    if grid.profile is not state.profile and (
            grid.profile is None
            or not np.allclose(grid.profile.eval(grid.X),
                               state.profile.eval(grid.X))):
        raise RoughflowError("evaluation lattice built for a different wall")


def evaluate_expansion(state: ExpansionState, N: int, epsilon: float,
                       grid: ReferenceGrid, oscillating: bool = True
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Truncated composite (u, p, sigma) on the rough-cell lattice.

    Sums eps^k (macro_k + strip_k) for k <= N; the strip pressure enters one
    order lower than its velocity, so the order-k pressure pairs the channel
    p_k with the strip P_{k+1}.  oscillating=False keeps only the far-field
    constants of the strip velocities (and none of the strip pressure or
    stress): that is the effective wall-law approximation, the object whose
    error carries the half-power convergence rates.
    """
    _check_compatible(state, N, grid)
    if abs(epsilon - grid.epsilon) > 1e-14:
        raise RoughflowError("epsilon does not match the evaluation lattice")
    mg = state.macro_grid
    bg = state.bl_grid
    u = np.zeros((2, grid.nx, grid.ny))
    p = np.zeros((grid.nx, grid.ny))
    s = np.zeros((3, grid.nx, grid.ny))
    for k in range(N + 1):
        ek = epsilon**k
        sol = state.macro[k]
        u += ek * _macro_samples(mg, sol.velocity.data, grid)
        p += ek * _macro_samples(mg, sol.pressure.data, grid)[0]
        s += ek * _macro_samples(mg, sol.stress.data, grid)
        if k >= 1:
            cor = state.bl[k]
            if oscillating:
                u += ek * _bl_samples(bg, cor.velocity.data, grid,
                                      far=cor.u_infinity)
                s += ek * _bl_samples(bg, cor.stress.data, grid)
            else:
                xq = np.mod(grid.x_phys, 1.0)
                u += ek * fourier_eval(cor.u_infinity, xq,
                                       axis=-1)[..., None]
        if oscillating and k + 1 < len(state.bl):
            p += ek * _bl_samples(bg, state.bl[k + 1].pressure.data, grid)[0]
    return u, p, s


def expansion_gradients(state: ExpansionState, N: int, epsilon: float,
                        grid: ReferenceGrid, oscillating: bool = True
                        ) -> dict[str, np.ndarray]:
    """Physical gradients of the composite, differentiated on native grids.

    Strip modes live on scales eps/(2 pi j) that the evaluation lattice
    cannot resolve, so collocation differentiation of sampled composite
    values manufactures spurious high-mode gradients.  Differentiating each
    term spectrally on its own solver grid first and sampling afterwards
    avoids that entirely.  Returns arrays of shape (ncomp, 2, nx, ny) with
    axis 1 = (d/dx, d/dy).
    """
    _check_compatible(state, N, grid)
    mg = state.macro_grid
    bg = state.bl_grid
    out = {"u": np.zeros((2, 2, grid.nx, grid.ny)),
           "p": np.zeros((1, 2, grid.nx, grid.ny)),
           "sigma": np.zeros((3, 2, grid.nx, grid.ny))}

    def add_macro(tgt, data, ek):
        tgt[:, 0] += ek * _macro_samples(mg, mg.dx(data), grid)
        tgt[:, 1] += ek * _macro_samples(mg, mg.dy(data), grid)

    def add_bl(tgt, data, ek):
        # d/dx = (1/eps) d/dX + slow part; gradients decay, far field 0
        tgt[:, 0] += (ek / epsilon) * _bl_samples(bg, bg.dX(data), grid)
        if bg.sx > 1:
            tgt[:, 0] += ek * _bl_samples(bg, bg.dx_slow(data), grid)
        tgt[:, 1] += (ek / epsilon) * _bl_samples(bg, bg.dY(data), grid)

    for k in range(N + 1):
        ek = epsilon**k
        sol = state.macro[k]
        add_macro(out["u"], sol.velocity.data, ek)
        add_macro(out["p"], sol.pressure.data, ek)
        add_macro(out["sigma"], sol.stress.data, ek)
        if k >= 1 and oscillating:
            cor = state.bl[k]
            add_bl(out["u"], cor.velocity.data, ek)
            add_bl(out["sigma"], cor.stress.data, ek)
        if oscillating and k + 1 < len(state.bl):
            add_bl(out["p"], state.bl[k + 1].pressure.data, ek)
    return out


def error_vs_reference(state: ExpansionState, N: int,
                       reference: ChannelSolution,
                       oscillating: bool = True) -> dict[str, NormReport]:
    """L2 / H1-semi / Linf norms of (reference - composite) per unknown.

    Values are compared on the reference lattice with the vertical-map
    Jacobian in the quadrature.  The H1 seminorm subtracts the reference's
    native spectral gradient from the composite's native gradient (see
    expansion_gradients); differentiating the pointwise difference instead
    would be dominated by sub-lattice boundary-layer scales.
    """
    grid = reference.grid
    u, p, s = evaluate_expansion(state, N, grid.epsilon, grid,
                                 oscillating=oscillating)
    gc = expansion_gradients(state, N, grid.epsilon, grid,
                             oscillating=oscillating)
    ops = reference_ops(grid)
    w = grid.quad_weights.ravel()
    out = {}
    for name, ref_data, comp, cw in (
            ("u", reference.velocity.data, u, np.array([1.0, 1.0])),
            ("p", reference.pressure.data, p[None], np.array([1.0])),
            ("sigma", reference.stress.data, s, np.array([1.0, 2.0, 1.0]))):
        diff = ref_data - comp
        flat = diff.reshape(len(cw), -1)
        l2 = float(np.sqrt(np.sum(w * (cw[:, None] * flat**2))))
        rflat = ref_data.reshape(len(cw), -1)
        gsq = np.zeros_like(w)
        for c in range(len(cw)):
            gx = ops.Dx @ rflat[c] - gc[name][c, 0].ravel()
            gy = ops.Dy @ rflat[c] - gc[name][c, 1].ravel()
            gsq += cw[c] * (gx**2 + gy**2)
        h1 = float(np.sqrt(np.sum(w * gsq)))
        out[name] = NormReport(l2, h1, float(np.abs(diff).max()))
    return out


def boundary_residual(state: ExpansionState, N: int, epsilon: float,
                      n_samples: int = 256) -> tuple[float, float]:
    """Wall defect of the truncated composite on the rough boundary.

    Returns (dirichlet_res, neumann_res): the max sampled |velocity| on the
    wall and the max |normal stress derivative| against the non-unit normal
    -(H', 1).  Both shrink like eps^(N+1) when the cascade is consistent.
    """
    if N > state.order:
        raise RoughflowError(
            f"expansion evaluated at order {N} but cascade holds {state.order}")
    mg = state.macro_grid
    bg = state.bl_grid
    Xs = fourier_nodes(n_samples)
    H = state.profile.eval(Xs)
    Hp = state.profile.eval(Xs, 1)
    xq = np.mod(epsilon * Xs, 1.0)

    u_tot = np.zeros((2, n_samples))
    dn_tot = np.zeros((3, n_samples))
    for k in range(N + 1):
        ek = epsilon**k
        sol = state.macro[k]
        # macro velocity on the wall: Taylor through y = -eps H
        wall_u = fourier_eval(_wall_taylor_stack(mg, sol.velocity.data),
                              xq, axis=-1)
        wall_s = fourier_eval(_wall_taylor_stack(mg, sol.stress.data),
                              xq, axis=-1)
        wall_sx = fourier_eval(
            _wall_taylor_stack(mg, mg.dx(sol.stress.data)), xq, axis=-1)
        yb = -epsilon * H
        taylor = lambda stack: sum(
            stack[q] * yb**q / math.factorial(q)
            for q in range(stack.shape[0]))
        u_tot += ek * taylor(wall_u)
        # unscaled physical normal derivative of the channel stress
        dn_tot -= ek * (Hp * taylor(wall_sx) + taylor(wall_s[1:]))
        if k >= 1:
            cor = state.bl[k]
            wall_bl = fourier_eval(cor.velocity.data[:, 0, :, 0], Xs, axis=-1)
            u_tot += ek * wall_bl
            S = cor.stress.data
            W = -(bg.Hp[:, None] * bg.dX(S) + bg.dY(S))[:, 0, :, 0]
            dn_tot += ek / epsilon * fourier_eval(W, Xs, axis=-1)
    return float(np.abs(u_tot).max()), float(np.abs(dn_tot).max())


@dataclass(frozen=True)
class RateFit:
    """Log-log slope of an error series over an epsilon sweep."""

    slope: float
    r2: float
    n_used: int
    excluded: tuple


def fit_rates(eps: np.ndarray, errors: np.ndarray,
              floor: float = 0.0) -> RateFit:
    """Least-squares slope of log(error) against log(eps).

    Points at or below 3x the discretization floor are excluded (they
    measure the grid, not the model); at least three must survive.
    """
    eps = np.asarray(eps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > 3.0 * floor
    if keep.sum() < 3:
        raise RoughflowError(
            f"slope fit needs at least 3 usable points, kept {int(keep.sum())}"
            f" of {len(eps)} (floor {floor:.3e})")
    le, lv = np.log(eps[keep]), np.log(errors[keep])
    slope, intercept = np.polyfit(le, lv, 1)
    resid = lv - (slope * le + intercept)
    ss_tot = np.sum((lv - lv.mean())**2)
    r2 = 1.0 if ss_tot == 0 else 1.0 - np.sum(resid**2) / ss_tot
    return RateFit(float(slope), float(r2), int(keep.sum()),
                   tuple(bool(b) for b in ~keep))


def error_table_rows(epsilon: float, N: int,
                     report: dict[str, NormReport]) -> list[tuple]:
    """Rows (epsilon, N, unknown, norm, value) for the error-table CSV."""
    rows = []
    for unknown in sorted(report):
        nr = report[unknown]
        for norm, value in (("l2", nr.l2), ("h1_semi", nr.h1_semi),
                            ("linf", nr.linf)):
            rows.append((epsilon, N, unknown, norm, value))
    return rows


def write_error_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epsilon", "N", "unknown", "norm", "value"])
        for row in rows:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_slope_csv(path, rows) -> None:
    """Rows (N, unknown, norm, RateFit); flags record floor exclusions."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["N", "unknown", "norm", "slope", "r2",
                     "n_used", "excluded"])
        for N, unknown, norm, fit in rows:
            wr.writerow([N, unknown, norm, repr(fit.slope), repr(fit.r2),
                         fit.n_used,
                         ";".join(str(int(b)) for b in fit.excluded)])
