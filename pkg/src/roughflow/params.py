"""Physical parameters, roughness profile and domain descriptors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

MAX_PROFILE_DERIVATIVE = 8


class RoughflowError(Exception):
    """Base class for solver errors."""


@dataclass(frozen=True)
class PhysicalParams:
    """Dimensionless constants of the flow model.

    reynolds, weissenberg >= 0; retardation in [0, 1) interpolates viscous and
    elastic stress (0 = Newtonian limit); slip_parameter in [-1, 1] selects the
    objective derivative (1 upper-convected, -1 lower-convected, 0
    corotational); stress_diffusion > 0 is the stress Laplacian coefficient.
    body_force maps (x, y) arrays to a pair of force-component arrays.
    """

    reynolds: float = 0.0
    weissenberg: float = 0.0
    retardation: float = 0.5
    slip_parameter: float = 1.0
    stress_diffusion: float = 1.0
    body_force: Callable[[np.ndarray, np.ndarray], tuple] = \
        field(default=lambda x, y: (np.ones_like(y), np.zeros_like(y)))

    def __post_init__(self):
        if not 0.0 <= self.retardation < 1.0:
            raise ValueError(f"retardation must lie in [0,1), got {self.retardation}")
        if not -1.0 <= self.slip_parameter <= 1.0:
            raise ValueError(f"slip parameter must lie in [-1,1], got {self.slip_parameter}")
        if self.stress_diffusion <= 0.0:
            raise ValueError("stress diffusion must be positive")
        if self.reynolds < 0.0 or self.weissenberg < 0.0:
            raise ValueError("Re and We must be nonnegative")

    def force_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        fx, fy = self.body_force(np.asarray(x, float), np.asarray(y, float))
        return np.stack([np.broadcast_to(fx, np.shape(y)).astype(float),
                         np.broadcast_to(fy, np.shape(y)).astype(float)])


class RoughnessProfile:
    """Band-limited periodic wall profile H > 0 on the unit torus.

    Stored as complex Fourier coefficients {H_j, j >= 0} with the reality
    convention H_{-j} = conj(H_j), so every derivative is available in closed
    form by termwise differentiation.
    """

    def __init__(self, coefficients: dict[int, complex]):
        coeffs: dict[int, complex] = {}
        for j, c in coefficients.items():
            j = int(j)
            c = complex(c)
            if j < 0:
                j, c = -j, np.conj(c)
            if j in coeffs and not np.isclose(abs(coeffs[j] - c), 0.0, atol=1e-14):
                raise ValueError(f"conflicting coefficients for mode {j}")
            coeffs[j] = c
        if abs(coeffs.get(0, 0.0).imag) > 1e-14:
            raise ValueError("mean of a real profile must be real")
        self.coefficients = coeffs
        xs = np.linspace(0.0, 1.0, 4096, endpoint=False)
        h = self.eval(xs)
        self.min_height = float(h.min())
        self.max_height = float(h.max())
        if self.min_height <= 0.0:
            raise ValueError(f"profile must stay positive (min {self.min_height:.3g})")

    @classmethod
    def cosine(cls, mean: float = 1.0, amplitude: float = 0.5, mode: int = 1):
        """H(X) = mean + amplitude*cos(2*pi*mode*X)."""
        return cls({0: mean, mode: amplitude / 2.0})

    def eval(self, X, derivative_order: int = 0) -> np.ndarray:
        """d^p H / dX^p at X by termwise Fourier differentiation (exact)."""
        if derivative_order < 0 or derivative_order > MAX_PROFILE_DERIVATIVE:
            raise ValueError(
                f"derivative order {derivative_order} outside [0, {MAX_PROFILE_DERIVATIVE}]")
        X = np.asarray(X, dtype=float)
        out = np.zeros_like(X)
        for j, c in self.coefficients.items():
            fac = (2j * np.pi * j) ** derivative_order
            if j == 0:
                out = out + (c * fac).real
            else:
                out = out + 2.0 * np.real(c * fac * np.exp(2j * np.pi * j * X))
        return out

    @property
    def n_modes(self) -> int:
        return max(self.coefficients, default=0)


def profile_eval(profile: RoughnessProfile, X, derivative_order: int = 0):
    return profile.eval(X, derivative_order)


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 4:
            raise ValueError("grid too small")


@dataclass(frozen=True)
class DomainSpec:
    """Geometry of the rough channel and its discretisations.

    epsilon is the roughness period/amplitude scale; the channel top wall sits
    at height 1. bl_truncation (Y_max) is where the boundary-layer strip is cut;
    the far field there is flat to about exp(-Y_max).
    """

    epsilon: float
    bl_truncation: float = 12.0
    macro_grid: GridSpec = GridSpec(1, 48)
    bl_grid: GridSpec = GridSpec(33, 96)
    channel_height: float = 1.0

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.bl_truncation < 5.0:
            raise ValueError("bl_truncation must be at least 5")
        if self.channel_height != 1.0:
            raise ValueError("channel height is fixed at 1")

    def validate_profile(self, profile: RoughnessProfile) -> None:
        if self.epsilon * profile.max_height >= 1.0:
            raise ValueError(
                f"rough wall reaches the top wall: eps*max(H) = "
                f"{self.epsilon * profile.max_height:.3g} >= 1")


def solvability_constants(params: PhysicalParams, force_norm: float,
                          domain_constant: float = 1.0) -> tuple[float, float]:
    """Existence diagnostics (C_I, C_II) of the stationary diffusive Oldroyd model.

    C_I <= 1 guarantees a variational solution with energy bounded by C_II^2.
    C_I > 1 is reported by the caller as "existence not guaranteed", except in
    the corotational case a = 0 where no smallness is needed. Advisory only.
    """
    if force_norm < 0.0:
        raise ValueError("force norm must be nonnegative")
    if domain_constant <= 0.0:
        raise ValueError("domain constant must be positive")
    a = abs(params.slip_parameter)
    we = params.weissenberg
    r = params.retardation
    m = min(1.0 - r, params.stress_diffusion)
    c_one = 8.0 * a * domain_constant**2 * we * force_norm / m**2
    denom = 4.0 * a * domain_constant**2 * we
    if denom == 0.0:
        # limit a*We -> 0 of the closed form: sqrt(2r) * ||f|| / m
        c_two = math.sqrt(2.0 * r) * force_norm / m
    elif c_one > 1.0:
        c_two = math.nan
    else:
        c_two = math.sqrt(2.0 * r) * m / denom * (1.0 - math.sqrt(1.0 - c_one))
    return c_one, c_two


def taylor_boundary_data(order_k: int, trace_stack: Sequence[np.ndarray],
                         profile: RoughnessProfile, X: np.ndarray) -> np.ndarray:
    """Dirichlet data of the velocity cell problem at order k.

    trace_stack[i] holds the wall y-derivatives of the order-i macro velocity:
    shape (n_deriv, 2, sx) with trace_stack[i][p] = d^p u_i / dy^p at y = 0.
    Returns the (2, sx, nX) boundary values

        D_k = - sum_{p=1..k} (-1)^p / p!  H(X)^p  d^p u_{k-p}/dy^p |_{y=0}.
    """
    if order_k < 1:
        raise ValueError("Taylor boundary data starts at order 1")
    if len(trace_stack) < order_k:
        raise RoughflowError(
            f"need traces of orders 0..{order_k - 1}, have {len(trace_stack)}")
    H = profile.eval(X)
    sx = trace_stack[0].shape[-1]
    out = np.zeros((2, sx, len(X)))
    for p in range(1, order_k + 1):
        traces = trace_stack[order_k - p]
        if traces.shape[0] <= p:
            raise RoughflowError(
                f"order-{order_k - p} field lacks the y-derivative of order {p}")
        coef = -((-1.0) ** p) / math.factorial(p)
        out += coef * traces[p][:, :, None] * (H**p)[None, None, :]
    return out
