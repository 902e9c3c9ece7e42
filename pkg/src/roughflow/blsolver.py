"""Cell problems on the truncated rough half-strip.

Two elementary solves drive every corrector order:

* a Stokes system (velocity/pressure, Dirichlet data on the rough wall,
  zero vertical derivative at the truncation height) whose horizontal mean
  at the top gives the far-field constant U_infinity, and
* a componentwise Neumann-Laplace system for the extra-stress corrector,
  solvable only when the forcing and wall-flux data balance; the imbalance
  is exactly the scalar that the stress compatibility constants must absorb.

Both are dense collocation systems on the boundary-fitted grid, with a
one-dimensional null space (additive pressure constant / additive stress
constant) removed by a bordered gauge row.  A mode-0 quadrature solver and
exponential-decay certificates provide independent cross-checks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .fields import BLGrid, Field
from .numerics import (bary_interp, bary_weights, diffmat,
                       factor_equilibrated, solve_equilibrated)
from .params import RoughflowError


# sources with a slowly decaying (rate ~1) horizontal mean still carry a
# Q(Y)exp(-Y) tail of this relative size at the default truncation height;
# anything larger signals structurally non-decaying data
FORCING_DECAY_TOL = 1e-4


def _cell_cache(grid: BLGrid) -> dict:
    cache = getattr(grid, "_cell_cache", None)
    if cache is None:
        cache = {}
        grid._cell_cache = cache
    return cache


def _interior_idx(grid: BLGrid) -> np.ndarray:
    """Full-grid indices of the interior vertical levels, pressure ordering."""
    return np.add.outer(np.arange(grid.nx) * grid.ny,
                        np.arange(1, grid.ny - 1)).ravel()


def _pressure_ops(grid: BLGrid) -> tuple[np.ndarray, np.ndarray]:
    """Gradient matrices of the interior-node pressure, interior -> interior.

    The pressure lives on the nx * (ny-2) interior collocation nodes (one
    polynomial degree pair below the velocity), which removes the spurious
    vertical pressure mode of equal-order collocation.
    """
    ny_i = grid.ny - 2
    s_int = grid.s[1:-1]
    wb = bary_weights(s_int)
    Ds_i = diffmat(s_int, wb)
    Kx = np.kron(grid.DX, np.eye(ny_i))
    Ks = np.kron(np.eye(grid.nx), Ds_i)
    sX = grid.metric_sX[:, 1:-1].ravel()
    sY = np.repeat(grid.metric_sY, ny_i)
    return Kx + sX[:, None] * Ks, sY[:, None] * Ks


def _stokes_matrix(grid: BLGrid, viscosity: float) -> np.ndarray:
    """Bordered collocation matrix for the half-strip Stokes problem.

    Unknown layout: [U1 (M), U2 (M), P (Mp), lam] with M = nx*ny and the
    pressure on the Mp = nx*(ny-2) interior nodes.  Momentum rows carry the
    wall Dirichlet and top Neumann conditions; continuity holds at interior
    nodes and receives the bordering column; the bordering row gauges the
    mean pressure.
    """
    nx, ny = grid.nx, grid.ny
    M = nx * ny
    Mp = nx * (ny - 2)
    Lap, DX, DY = grid.Lapm, grid.DXm, grid.DYm
    bot, top = grid.bottom_idx, grid.top_idx
    igl = _interior_idx(grid)
    DXp, DYp = _pressure_ops(grid)
    n = 2 * M + Mp + 1
    A = np.zeros((n, n))
    A[0:M, 0:M] = -viscosity * Lap
    A[igl, 2 * M:2 * M + Mp] = DXp
    A[M:2 * M, M:2 * M] = -viscosity * Lap
    A[M + igl, 2 * M:2 * M + Mp] = DYp
    A[2 * M:2 * M + Mp, 0:M] = DX[igl]
    A[2 * M:2 * M + Mp, M:2 * M] = DY[igl]
    for b in bot:
        A[b, :] = 0.0
        A[b, b] = 1.0
        A[M + b, :] = 0.0
        A[M + b, M + b] = 1.0
    for t in top:
        A[t, :] = 0.0
        A[t, 0:M] = DY[t]
        A[M + t, :] = 0.0
        A[M + t, M:2 * M] = DY[t]
    A[2 * M + Mp, 2 * M:2 * M + Mp] = 1.0 / Mp
    A[2 * M:2 * M + Mp, 2 * M + Mp] = 1.0
    return A


def _laplace_matrix(grid: BLGrid, diffusion: float) -> np.ndarray:
    """Bordered matrix for -diffusion*Lap(S) = G with flux data at the wall.

    Wall rows impose diffusion * d_N S = W where d_N = -(H' d_X + d_Y) is the
    derivative along the (non-unit) outward wall normal; top rows impose
    d_Y S = 0.  The gauge row pins the strip average of S.
    """
    nx, ny = grid.nx, grid.ny
    M = nx * ny
    A = np.zeros((M + 1, M + 1))
    A[0:M, 0:M] = -diffusion * grid.Lapm
    bot, top = grid.bottom_idx, grid.top_idx
    interior = np.ones(M, dtype=bool)
    interior[bot] = False
    interior[top] = False
    for b in bot:
        ix = b // ny
        A[b, :M] = -diffusion * (grid.Hp[ix] * grid.DXm[b] + grid.DYm[b])
    for t in top:
        A[t, :M] = grid.DYm[t]
    A[M, :M] = grid.quad_weights.ravel()
    A[np.flatnonzero(interior), M] = 1.0
    return A


def _factor(grid: BLGrid, key, builder):
    cache = _cell_cache(grid)
    if key not in cache:
        cache[key] = factor_equilibrated(builder())
    return cache[key]


@dataclass
class BLCorrector:
    """One corrector order on the half-strip: (U, P, Sigma, U_infinity)."""

    grid: BLGrid
    velocity: Field
    pressure: Field
    stress: Field | None = None
    u_infinity: np.ndarray = field(default=None)  # (2, sx)
    far_drift: float = 0.0


def solve_bl_stokes(grid: BLGrid, forcing: Field, dirichlet: np.ndarray,
                    viscosity: float = 1.0,
                    flux_tol: float = 1e-8) -> BLCorrector:
    """Half-strip Stokes solve with wall data U = dirichlet.

    forcing: vector Field on the grid; dirichlet: (2, sx, nx) wall values.
    The far-field constant is the horizontal mean of U on the top band; its
    drift against an interior band (Y ~ 0.75 * y_max) is reported so the
    caller can detect under-resolved decay.
    """
    if forcing.kind != "vector":
        raise ValueError("Stokes forcing must be a vector field")
    dirichlet = np.asarray(dirichlet, dtype=float)
    if dirichlet.shape != (2, grid.sx, grid.nx):
        raise ValueError(f"dirichlet data must have shape (2, {grid.sx}, "
                         f"{grid.nx}), got {dirichlet.shape}")
    if viscosity <= 0.0:
        raise ValueError("viscosity must be positive")

    scale = max(np.abs(dirichlet).max(), np.abs(forcing.data).max(), 1.0)
    # the wall data must carry no net flux through Gamma, else no decaying
    # corrector exists: integral of U.N over one period, N = -(H', 1)
    flux = np.mean(-grid.Hp[None, :] * dirichlet[0] - dirichlet[1], axis=-1)
    if np.abs(flux).max() > flux_tol * scale:
        raise RoughflowError(
            f"nonzero net vertical flux through the rough wall "
            f"({np.abs(flux).max():.3e}); no decaying corrector exists")
    # the forcing must have decayed by the truncation height
    top_f = np.abs(forcing.data[..., -1]).max()
    if top_f > FORCING_DECAY_TOL * scale:
        raise RoughflowError(
            f"Stokes forcing not decayed at the truncation height "
            f"(|F| = {top_f:.3e}); increase y_max")

    nx, ny, sx = grid.nx, grid.ny, grid.sx
    M = nx * ny
    Mp = nx * (ny - 2)
    fac = _factor(grid, ("stokes", viscosity),
                    lambda: _stokes_matrix(grid, viscosity))

    rhs = np.zeros((2 * M + Mp + 1, sx))
    f1 = forcing.data[0].reshape(sx, M).T.copy()
    f2 = forcing.data[1].reshape(sx, M).T.copy()
    f1[grid.bottom_idx] = dirichlet[0].T
    f2[grid.bottom_idx] = dirichlet[1].T
    f1[grid.top_idx] = 0.0
    f2[grid.top_idx] = 0.0
    rhs[0:M] = f1
    rhs[M:2 * M] = f2

    sol = solve_equilibrated(fac, rhs, "half-strip Stokes")
    U = np.stack([sol[0:M].T.reshape(sx, nx, ny),
                  sol[M:2 * M].T.reshape(sx, nx, ny)])
    # pressure lives on the interior vertical nodes; interpolate to the full
    # grid and shift to a decaying (top-band mean zero) representative
    s_int = grid.s[1:-1]
    P_int = sol[2 * M:2 * M + Mp].T.reshape(1, sx, nx, ny - 2)
    P = bary_interp(s_int, bary_weights(s_int), P_int, grid.s)
    P = P - P[..., -1].mean(axis=-1)[..., None, None]
    velocity = Field(grid, "vector", U)
    pressure = Field(grid, "scalar", P)

    u_inf = U[..., -1].mean(axis=-1)                       # (2, sx)
    s_band = (0.75 * grid.y_max + grid.H.mean()) / (grid.y_max + grid.H.mean())
    band = grid.eval_s(U.mean(axis=-2), np.array([s_band]))[..., 0]
    far_drift = float(np.abs(band - u_inf).max())
    return BLCorrector(grid, velocity, pressure, u_infinity=u_inf,
                       far_drift=far_drift)


def compatibility_integral(source: Field, wall_flux: np.ndarray) -> np.ndarray:
    """Solvability defect of the stress cell problem, per component (and slow x).

    For -D*Lap(S) = G with D*d_N S = W at the wall and d_Y S = 0 at the top,
    the divergence theorem gives  integral(G) + integral(W) = 0; the returned
    defect is that sum.  A nonzero value is exactly the constant the wall
    data must shed for a decaying corrector to exist.
    """
    w = source.grid.quad_weights
    vol = np.einsum("xy,c...xy->c...", w, source.data)
    wall = np.asarray(wall_flux, dtype=float).mean(axis=-1)
    return vol + wall


def solve_bl_laplace(grid: BLGrid, source: Field, wall_flux: np.ndarray,
                     diffusion: float = 1.0,
                     compat_tol: float = 1e-8) -> Field:
    """Componentwise Neumann-Laplace solve -D*Lap(S) = G on the half-strip.

    wall_flux: (ncomp, sx, nx) values of D*d_N S on the rough wall.  Refuses
    data whose compatibility defect exceeds compat_tol (relative); the
    returned field is shifted so its top-band horizontal mean vanishes, i.e.
    it is the decaying representative.
    """
    wall_flux = np.asarray(wall_flux, dtype=float)
    ncomp = source.ncomp
    if wall_flux.shape != (ncomp, grid.sx, grid.nx):
        raise ValueError(f"wall flux must have shape ({ncomp}, {grid.sx}, "
                         f"{grid.nx}), got {wall_flux.shape}")
    if diffusion <= 0.0:
        raise ValueError("diffusion must be positive")
    scale = max(np.abs(source.data).max(), np.abs(wall_flux).max(), 1.0)
    defect = compatibility_integral(source, wall_flux)
    if np.abs(defect).max() > compat_tol * scale:
        raise RoughflowError(
            f"stress cell problem not solvable: compatibility defect "
            f"{np.abs(defect).max():.3e} (tol {compat_tol * scale:.1e})")
    top_g = np.abs(source.data[..., -1]).max()
    if top_g > FORCING_DECAY_TOL * scale:
        raise RoughflowError(
            f"stress forcing not decayed at the truncation height "
            f"(|G| = {top_g:.3e}); increase y_max")

    nx, ny, sx = grid.nx, grid.ny, grid.sx
    M = nx * ny
    fac = _factor(grid, ("laplace", diffusion),
                    lambda: _laplace_matrix(grid, diffusion))

    nrhs = ncomp * sx
    rhs = np.zeros((M + 1, nrhs))
    g = source.data.reshape(nrhs, M).T.copy()
    g[grid.bottom_idx] = wall_flux.reshape(nrhs, nx).T
    g[grid.top_idx] = 0.0
    rhs[:M] = g

    sol = solve_equilibrated(fac, rhs, "half-strip stress Laplace")
    S = sol[:M].T.reshape(ncomp, sx, nx, ny)
    S = S - S[..., -1].mean(axis=-1)[..., None, None]      # decaying representative
    return Field(grid, source.kind, S)


def mode0_explicit_solve(Y: np.ndarray, forcing: np.ndarray,
                         boundary_value: np.ndarray,
                         viscosity: float = 1.0) -> dict:
    """Quadrature solution of the horizontal-mean Stokes problem on a flat strip.

    On Y >= Y[0] with mode-0 forcing (F1, F2) decaying at the far end,
    -viscosity*U1'' = F1 integrates (with U1' -> 0) to

        U1'(Y) = (1/viscosity) * int_Y^inf F1,    U2 = const = boundary value,
        P(Y)   = -int_Y^inf F2,
        U_inf  = U1(Y0) + (1/viscosity) * int_Y0^inf int_Z^inf F1 dZ.

    Returns profiles sampled on Y and the far-field pair.  Serves as an
    independent oracle for the mode-0 output of the full cell solver.
    """
    Y = np.asarray(Y, dtype=float)
    F1, F2 = np.asarray(forcing, dtype=float)
    v1, v2 = np.asarray(boundary_value, dtype=float)

    def tail(f):
        c = cumulative_trapezoid(f, Y, initial=0.0)
        return c[-1] - c

    dU1 = tail(F1) / viscosity
    U1 = v1 + cumulative_trapezoid(dU1, Y, initial=0.0)
    P = -tail(F2)
    u_inf = np.array([U1[-1], v2])
    return {"U1": U1, "U2": np.full_like(Y, v2), "P": P, "u_infinity": u_inf}


@dataclass(frozen=True)
class DecayCertificate:
    """Fitted exponential decay rates per horizontal mode.

    rates[j] is the fitted e^{-rate*Y} exponent of the combined corrector
    magnitude in mode j (inf when the mode sits below the noise floor over
    the whole fitting window); required[j] is the bound it must meet.
    """

    rates: dict[int, float]
    required: dict[int, float]
    passed: bool
    floor: float


def fit_mode_decay(Y: np.ndarray, magnitude: np.ndarray,
                   floor: float = 1e-12) -> float:
    """Asymptotic decay exponent of magnitude ~ |a + b Y| e^{-rate Y}.

    The evanescent modes of the strip carry algebraic prefactors, so a plain
    log-linear fit underestimates the rate over the short usable window; the
    prefactor is fitted along with the exponent.  Points at or below the
    noise floor are discarded, and only the leading contiguous above-floor
    stretch is used.  Returns inf when fewer than three points survive
    (decay too fast to resolve: nothing left to falsify).
    """
    from scipy.optimize import curve_fit

    Y = np.asarray(Y, dtype=float)
    m = np.asarray(magnitude, dtype=float)
    if m.size == 0 or m.max() <= floor:
        return np.inf
    above = m > floor
    stop = np.argmin(above) if not above.all() else len(m)
    keep = np.arange(len(m))[:stop][above[:stop]]
    if len(keep) < 3:
        return np.inf
    Yr = Y[keep] - Y[keep][0]
    lm = np.log(m[keep])
    slope0 = max((lm[0] - lm[-1]) / max(Yr[-1], 1e-9), 0.1)

    def model(t, la, lb, rho):
        logt = np.log(np.maximum(t, 1e-300))
        return np.where(t > 0, np.logaddexp(la, lb + logt), la) - rho * t

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            popt, _ = curve_fit(model, Yr, lm,
                                p0=[lm[0], lm[0] - 3.0, slope0], maxfev=20000)
        return float(popt[2])
    except RuntimeError:
        return float(-np.polyfit(Yr, lm, 1)[0])


def certify_decay(corrector: BLCorrector, tol_rate: float = 0.1,
                  floor: float = 1e-12, max_mode: int | None = None
                  ) -> DecayCertificate:
    """Check exponential decay of a corrector toward its far field.

    Fits the combined per-mode magnitude (velocity minus its far-field
    constant, pressure, stress) against height over the outer half of the
    strip.  Mode 0 must decay at least like e^{-(1 - tol)Y}, mode j at least
    like e^{-2 pi |j| (1 - tol) Y}.
    """
    grid = corrector.grid
    nx = grid.nx
    if max_mode is None:
        max_mode = min(3, nx // 2)
    pieces = []
    vel = corrector.velocity.data.copy()
    if corrector.u_infinity is not None:
        vel -= corrector.u_infinity[..., None, None]
    pieces.append(vel)
    pieces.append(corrector.pressure.data)
    if corrector.stress is not None:
        pieces.append(corrector.stress.data)

    # resample onto lines of constant physical height: Fourier modes taken at
    # fixed s mix physical modes through the boundary-fitted map.  Fit from
    # just above the roughness crest (Y = -min H) to well below the truncation
    # height, where the artificial top condition starts to bite.
    Ylev = np.linspace(-grid.H.min() + 0.15, 0.8 * grid.y_max, 480)
    # overall corrector scale, far field included: a corrector that is all
    # far-field constant (flat wall, constant data) leaves only roundoff in
    # the pieces, and that noise must sit below the truncation floor
    scale = max(np.abs(p).max() for p in pieces)
    if corrector.u_infinity is not None:
        scale = max(scale, float(np.abs(corrector.u_infinity).max()))
    samples = []
    for p in pieces:
        out = np.empty(p.shape[:-1] + (len(Ylev),))
        for ix in range(nx):
            sq = (Ylev + grid.H[ix]) / (grid.y_max + grid.H[ix])
            out[..., ix, :] = grid.eval_s(p[..., ix, :], sq)
        samples.append(out)

    rates: dict[int, float] = {}
    required: dict[int, float] = {}
    for j in range(max_mode + 1):
        msq = np.zeros(len(Ylev))
        for p in samples:
            c = np.fft.fft(p, axis=-2) / nx                # (..., nx, nY)
            msq += np.mean(np.abs(c[..., j % nx, :])**2,
                           axis=tuple(range(c.ndim - 2)))
            if j % nx != (-j) % nx:
                msq += np.mean(np.abs(c[..., (-j) % nx, :])**2,
                               axis=tuple(range(c.ndim - 2)))
        mag = np.sqrt(msq)
        # the top-truncation error of the strip sits almost entirely in the
        # horizontal mean (the far-field mismatch), so mode 0 is floored by
        # the global field scale while an oscillating mode is floored by its
        # own amplitude; below 10x the bottomed-out level is roundoff
        trunc_scale = scale if j == 0 else mag.max()
        base = max(floor, 3.0 * trunc_scale * np.exp(-grid.y_max))
        if mag.size and mag.min() < 1e-3 * mag.max():
            # a genuine plateau (several decades below the peak) is roundoff;
            # a shallow minimum is just slow decay and must stay in the fit
            base = max(base, 10.0 * mag.min())
        # a fast mode rides on slower contamination (roundoff, coupling
        # leakage) that only flattens the apparent slope, so the fit is run
        # over a ladder of window depths and the steepest estimate kept
        cands = [base] + [mag.max() * 10.0 ** (-d)
                          for d in (2.5, 3.0, 3.5, 4.0, 5.0, 6.0)
                          if mag.max() * 10.0 ** (-d) > base]
        rates[j] = max(fit_mode_decay(Ylev, mag, floor=fl) for fl in cands)
        base = 1.0 if j == 0 else 2.0 * np.pi * j
        required[j] = base * (1.0 - tol_rate)
    passed = all(rates[j] >= required[j] for j in rates)
    return DecayCertificate(rates=rates, required=required, passed=passed,
                            floor=floor)
