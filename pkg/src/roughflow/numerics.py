"""Spectral building blocks: Chebyshev collocation and Fourier differentiation.

All vertical grids are Chebyshev-Gauss-Lobatto nodes mapped to an interval,
with barycentric differentiation matrices and Clenshaw-Curtis quadrature.
Horizontal grids are uniform on the unit torus with FFT-based spectral
differentiation.
"""

from __future__ import annotations

import numpy as np


def cheb_nodes(n: int, a: float = 0.0, b: float = 1.0) -> np.ndarray:
    """n Gauss-Lobatto nodes on [a, b], ascending (node 0 at a)."""
    if n < 2:
        raise ValueError("need at least 2 Chebyshev nodes")
    t = np.cos(np.pi * np.arange(n - 1, -1, -1) / (n - 1))  # -1 .. 1
    return a + (b - a) * (t + 1.0) / 2.0


def cheb_bary_weights(n: int) -> np.ndarray:
    """Barycentric weights for the ascending Gauss-Lobatto nodes."""
    w = np.ones(n)
    w[1::2] = -1.0
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def bary_weights(nodes: np.ndarray) -> np.ndarray:
    """Barycentric weights for arbitrary distinct nodes (O(n^2), normalized)."""
    dx = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(dx, 1.0)
    w = 1.0 / dx.prod(axis=1)
    return w / np.abs(w).max()


def diffmat(nodes: np.ndarray, bary_w: np.ndarray) -> np.ndarray:
    """First-derivative collocation matrix from barycentric weights."""
    n = len(nodes)
    dx = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(dx, 1.0)
    D = (bary_w[None, :] / bary_w[:, None]) / dx
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def cheb_diffmat(n: int, a: float = 0.0, b: float = 1.0) -> np.ndarray:
    return diffmat(cheb_nodes(n, a, b), cheb_bary_weights(n))


def clencurt_weights(n: int, a: float = 0.0, b: float = 1.0) -> np.ndarray:
    """Clenshaw-Curtis quadrature weights on the ascending Lobatto nodes."""
    m = n - 1
    if m == 0:
        raise ValueError("need at least 2 nodes")
    theta = np.pi * np.arange(m + 1) / m
    w = np.zeros(m + 1)
    v = np.ones(m - 1)
    for k in range(1, m // 2 + 1):
        factor = 2.0 if 2 * k != m else 1.0
        v -= factor * np.cos(2.0 * k * theta[1:-1]) / (4.0 * k * k - 1.0)
    w[1:-1] = 2.0 * v / m
    w[0] = w[-1] = 1.0 / (m * m - 1.0 + (m % 2))
    # nodes ascending vs theta descending is symmetric, weights unchanged
    return w * (b - a) / 2.0


def bary_interp(nodes: np.ndarray, bary_w: np.ndarray, vals: np.ndarray,
                x: np.ndarray) -> np.ndarray:
    """Barycentric interpolation of vals (..., n) at points x (flat array).

    Stable slightly outside [nodes[0], nodes[-1]] as polynomial extrapolation.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dx = x[:, None] - nodes[None, :]                       # (npts, n)
    exact = np.isclose(dx, 0.0, atol=1e-300)
    dx_safe = np.where(exact, 1.0, dx)
    k = bary_w[None, :] / dx_safe                          # (npts, n)
    num = vals @ k.T                                       # (..., npts)
    den = k.sum(axis=1)
    out = num / den
    hit_rows = exact.any(axis=1)
    if hit_rows.any():
        idx = exact[hit_rows].argmax(axis=1)
        out[..., hit_rows] = vals[..., idx]
    return out


def fourier_nodes(n: int) -> np.ndarray:
    """n uniform nodes on the unit torus [0, 1)."""
    return np.arange(n) / n


def fourier_diffmat(n: int, order: int = 1) -> np.ndarray:
    """Spectral differentiation matrix on n uniform torus nodes (period 1)."""
    if n == 1:
        return np.zeros((1, 1))
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0 and order % 2 == 1:
        k = k.copy()
        k[n // 2] = 0.0  # odd derivative of the Nyquist mode is ambiguous
    mult = (2j * np.pi * k) ** order
    F = np.fft.fft(np.eye(n), axis=0)
    return np.real(np.fft.ifft(mult[:, None] * F, axis=0))


def fourier_modes(vals: np.ndarray, axis: int = -1) -> np.ndarray:
    """Complex Fourier coefficients c_j, j = fftfreq order, of real samples."""
    n = vals.shape[axis]
    return np.fft.fft(vals, axis=axis) / n


def fourier_eval(vals: np.ndarray, x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Trigonometric interpolation of periodic samples at points x in [0,1)."""
    vals = np.moveaxis(np.asarray(vals, dtype=float), axis, -1)
    n = vals.shape[-1]
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if n == 1:
        return np.broadcast_to(vals[..., 0][..., None],
                               vals.shape[:-1] + (len(x),)).copy()
    c = np.fft.fft(vals, axis=-1) / n
    k = np.fft.fftfreq(n, d=1.0 / n)
    basis = np.exp(2j * np.pi * np.outer(k, x))            # (n, npts)
    if n % 2 == 0:
        basis[n // 2] = np.cos(2.0 * np.pi * (n // 2) * x)  # symmetric Nyquist
    return np.real(c @ basis)


def solve_bordered(A: np.ndarray, rhs: np.ndarray,
                   row: np.ndarray, col: np.ndarray,
                   row_rhs: float = 0.0) -> np.ndarray:
    """Solve the bordered system [[A, col], [row, 0]] [u; lam] = [rhs; row_rhs].

    Standard removal of a known one-dimensional null space (e.g. the additive
    pressure constant): `row` is the gauge condition, `col` feeds the
    compatibility defect back into the equations. Returns u (lam discarded).
    rhs may have a trailing batch of right-hand sides (shape (n,) or (n, m)).
    """
    n = A.shape[0]
    rhs2 = np.atleast_2d(rhs.T).T  # (n, m)
    m = rhs2.shape[1]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = col
    M[n, :n] = row
    b = np.zeros((n + 1, m))
    b[:n, :] = rhs2
    b[n, :] = row_rhs
    sol = np.linalg.solve(M, b)
    out = sol[:n, :]
    return out[:, 0] if rhs.ndim == 1 else out


def lstsq_solve(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    out, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return out


# direct solves are distrusted above this relative residual and re-attempted
# in the least-squares sense; above the second threshold the system is
# reported as singular
RESIDUAL_RETRY = 1e-8
RESIDUAL_FAIL = 1e-6


def factor_equilibrated(A: np.ndarray):
    """Row-equilibrated LU factorization handle for solve_equilibrated."""
    import scipy.linalg

    r = 1.0 / np.abs(A).max(axis=1)
    # build the scaled copy Fortran-ordered and factor it in place: LAPACK
    # would otherwise copy once for the layout and once for overwrite, and
    # the largest reference systems cannot afford a third matrix-sized
    # allocation
    scaled = np.multiply(r[:, None], A, order="F")
    return A, r, scipy.linalg.lu_factor(scaled, overwrite_a=True,
                                        check_finite=False)


# dense least-squares (SVD) fallbacks above this size are slower than the
# solve they rescue and can exhaust memory; large ill-conditioned systems
# are accepted on the refined-residual criterion alone
LSTSQ_MAX_N = 4096


def solve_equilibrated(fac, rhs: np.ndarray, label: str) -> np.ndarray:
    """Solve with a factor_equilibrated handle; refine, verify, fall back.

    Iterative refinement against the unscaled system until the residual
    passes or stalls; a least-squares retry covers benign rank deficiency
    on small systems (kept only when it actually lowers the residual), and
    anything above the hard threshold raises.
    """
    import scipy.linalg

    from .params import RoughflowError

    A, r, lu = fac
    rhs2 = rhs if rhs.ndim == 2 else rhs[:, None]
    scale = max(np.abs(rhs2).max(), 1.0)
    try:
        sol = scipy.linalg.lu_solve(lu, r[:, None] * rhs2)
        res = np.abs(A @ sol - rhs2).max() / scale
        for _ in range(6):
            if res <= RESIDUAL_RETRY:
                break
            cand = sol + scipy.linalg.lu_solve(
                lu, r[:, None] * (rhs2 - A @ sol))
            cand_res = np.abs(A @ cand - rhs2).max() / scale
            if cand_res >= 0.7 * res:        # stalled at the roundoff level
                if cand_res < res:
                    sol, res = cand, cand_res
                break
            sol, res = cand, cand_res
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise RoughflowError(f"{label}: factorization failed ({exc})")
    if res > RESIDUAL_RETRY and A.shape[0] <= LSTSQ_MAX_N:
        alt, *_ = np.linalg.lstsq(A, rhs2, rcond=None)
        alt_res = np.abs(A @ alt - rhs2).max() / scale
        if alt_res < res:
            sol, res = alt, alt_res
    if res > RESIDUAL_FAIL:
        raise RoughflowError(
            f"{label}: singular system, residual {res:.3e} after "
            "refinement and retry")
    return sol
