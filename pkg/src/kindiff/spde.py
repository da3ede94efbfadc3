"""Integrator for the limit stochastic diffusion equation.

    d rho = div(K grad rho) dt + (1/2) F rho dt + rho sum_j sqrt(c_j) eta_j dbeta_j

The heat part is propagated exactly in Fourier space.  The noise and the Ito
drift are applied jointly as the pointwise multiplier

    exp( sum_j sqrt(c_j) eta_j(x) dbeta_j ),

whose mean is exp(F dt / 2) since sum_j c_j eta_j^2 = F: a geometric step that
is exact in law at frozen x, preserves positivity, and reduces to the exact
heat flow when no modes are present.  Q^{1/2} is never formed; the finite-rank
factor beta -> sum_j sqrt(c_j) eta_j beta_j has covariance Q by construction.
"""

from dataclasses import dataclass

import numpy as np

from . import velocity as vel
from .grid import TorusGrid
from .noise import NoiseModel
from .velocity import VelocityModel

DEFAULT_STEPS = 2048


@dataclass
class LimitCoefficients:
    """Effective coefficients (K, c_j, eta_j, F) of the limit equation."""

    grid: TorusGrid
    K: np.ndarray         # (d, d)
    c: np.ndarray         # (J,)
    modes: np.ndarray     # (J, *grid.shape)

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        self.modes = np.asarray(self.modes, dtype=float)
        if self.modes.shape != (self.c.shape[0],) + self.grid.shape:
            raise ValueError("mode table shape mismatch")
        # sqrt(c_j) eta_j, the noise factor applied to the increments
        self.root_factors = np.sqrt(np.clip(self.c, 0.0, None))[
            (slice(None),) + (None,) * self.grid.dim
        ] * self.modes
        # heat multiplier exponent: -4 pi^2 xi^T K xi on the odd-symmetric frequencies
        expo = np.zeros(self.grid.shape)
        for p in range(self.grid.dim):
            for q in range(self.grid.dim):
                expo += self.grid.freqs_odd[p] * self.grid.freqs_odd[q] * self.K[p, q]
        self.heat_exponent = -4.0 * np.pi ** 2 * expo

    @property
    def n_modes(self) -> int:
        return self.c.shape[0]

    @classmethod
    def from_models(cls, vm: VelocityModel, nm: NoiseModel, grid: TorusGrid):
        return cls(grid=grid, K=vel.diffusion_matrix(vm), c=nm.coefficients, modes=nm.modes)

    def trace_field(self) -> np.ndarray:
        """F(x) = sum_j c_j eta_j(x)^2, recomputed from the factor form."""
        if self.n_modes == 0:
            return np.zeros(self.grid.shape)
        return np.einsum("j...,j...->...", self.root_factors, self.root_factors)


def heat_step(rho, dt, K, grid: TorusGrid):
    """Exact spectral propagation of d rho = div(K grad rho) dt."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    rho = np.asarray(rho, dtype=float)
    expo = np.zeros(grid.shape)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    for p in range(grid.dim):
        for q in range(grid.dim):
            expo += grid.freqs_odd[p] * grid.freqs_odd[q] * K[p, q]
    mult = np.exp(-4.0 * np.pi ** 2 * expo * dt)
    return grid.ifft(grid.fft(rho) * mult)


def spde_step(rho, dt, coeffs: LimitCoefficients, increments):
    """Heat propagation over dt followed by the geometric noise multiplier.

    ``increments`` holds one N(0, dt) variate per mode; for a batch of
    trajectories pass rho with a leading batch axis and increments (batch, J).
    """
    rho = np.asarray(rho, dtype=float)
    batched = rho.ndim == coeffs.grid.dim + 1
    dw = np.asarray(increments, dtype=float)
    if dw.shape[-1] != coeffs.n_modes:
        raise ValueError("one Gaussian increment per mode is required")
    grid = coeffs.grid
    mult = np.exp(coeffs.heat_exponent * dt)
    if batched:
        # batch axis first: transform over the trailing spatial axes
        axes = tuple(range(1, grid.dim + 1))
        out = np.fft.ifftn(np.fft.fftn(rho, axes=axes) * mult[None], axes=axes).real
        if coeffs.n_modes:
            expo = np.tensordot(dw, coeffs.root_factors, axes=(1, 0))
            out = out * np.exp(expo)
        return out
    out = grid.ifft(grid.fft(rho) * mult)
    if coeffs.n_modes:
        expo = np.tensordot(dw, coeffs.root_factors, axes=(0, 0))
        out = out * np.exp(expo)
    return out


def drift_consistency(coeffs: LimitCoefficients, trace_field) -> float:
    """Max-norm gap between (1/2) sum_j c_j eta_j^2 and (1/2) F.

    Both sides are built from the same coefficients, so this is a regression
    guard for the Ito-Stratonovich bookkeeping: it must vanish to rounding.
    """
    lhs = 0.5 * coeffs.trace_field()
    rhs = 0.5 * np.asarray(trace_field, dtype=float)
    return float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0


def solve_spde_batch(rho0, final_time, n_steps, coeffs: LimitCoefficients,
                     increments, output_steps):
    """Evolve a batch of trajectories with the supplied Gaussian increments.

    ``increments`` has shape (batch, n_steps, J); ``output_steps`` is a sorted
    list of step indices at which the batch is recorded.  Returns an array of
    shape (batch, n_out, *grid.shape).
    """
    dt = final_time / n_steps
    rho = np.array(rho0, dtype=float, copy=True)
    batch = increments.shape[0]
    if rho.ndim == coeffs.grid.dim:
        rho = np.broadcast_to(rho, (batch,) + rho.shape).copy()
    out = np.empty((batch, len(output_steps)) + coeffs.grid.shape)
    pos = 0
    if output_steps and output_steps[0] == 0:
        out[:, 0] = rho
        pos = 1
    for k in range(n_steps):
        rho = spde_step(rho, dt, coeffs, increments[:, k])
        while pos < len(output_steps) and output_steps[pos] == k + 1:
            out[:, pos] = rho
            pos += 1
    return out


def solve_spde_trajectory(rho0, final_time, n_steps, coeffs: LimitCoefficients,
                          rng, output_times):
    """Single trajectory; increments drawn from the supplied stream."""
    dt = final_time / n_steps
    steps = [min(max(int(round(t / dt)), 0), n_steps) for t in output_times]
    dw = rng.normal(0.0, np.sqrt(dt), size=(1, n_steps, coeffs.n_modes))
    series = solve_spde_batch(rho0, final_time, n_steps, coeffs, dw, steps)[0]
    return np.asarray(steps, dtype=float) * dt, series
