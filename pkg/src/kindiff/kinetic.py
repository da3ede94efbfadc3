"""Pathwise split-step integrator for the scaled kinetic equation.

The three sub-flows of

    df/dt + (1/eps) a(v).grad_x f = (1/eps^2)(rho - f) + (1/eps) m(t/eps^2, x) f

are each solved exactly: transport by a spectral phase shift, relaxation by
the explicit flow rho + e^{-t}(f - rho), and the multiplier by a pointwise
exponential while the noise state is frozen.  A macroscopic step dt is split
Strang-style, relaxation - transport - multiplier - transport - relaxation
with half steps, and every noise jump inside the step partitions it exactly,
so the only scheme error is the splitting commutator.
"""

from dataclasses import dataclass, field

import numpy as np

from . import velocity
from .grid import TorusGrid
from .noise import NoiseModel, NoisePath
from .velocity import VelocityModel

OVERFLOW_NORM = 1e12
GRONWALL_SLACK = 1e-8


class TrajectoryOverflowError(RuntimeError):
    """The L2 norm exceeded the overflow guard (unreachable for valid configs)."""


class GronwallViolationError(RuntimeError):
    """The pathwise energy bound was violated; indicates a scheme defect."""


@dataclass
class SolverConfig:
    epsilon: float
    dt_factor: float = 0.1  # macroscopic step is dt_factor * epsilon^2
    final_time: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")
        if not 0.0 < self.dt_factor <= 1.0:
            raise ValueError("dt_factor must lie in (0, 1]")
        if self.final_time <= 0.0:
            raise ValueError("final_time must be positive")


def step_transport(f, tau, eps, model: VelocityModel, grid: TorusGrid):
    """Exact free transport over macroscopic time tau: f(x,v) -> f(x - a(v) tau/eps, v)."""
    if tau == 0.0:
        return np.array(f, dtype=float, copy=True)
    shifts = model.velocities * (tau / eps)
    phase = grid.shift_phase(shifts)
    return grid.ifft(grid.fft(np.asarray(f, dtype=float)) * phase)


def step_collision(f, tau, eps, model: VelocityModel):
    """Exact relaxation flow over macroscopic tau: f -> rho + e^{-tau/eps^2}(f - rho)."""
    f = np.asarray(f, dtype=float)
    rho = velocity.average(model, f)[..., None]
    theta = np.exp(-tau / (eps * eps))
    return rho + theta * (f - rho)


def step_noise_multiplication(f, interval, eps, m_field):
    """Exact multiplier over a window where m is frozen: f -> f exp(m |interval| / eps)."""
    f = np.asarray(f, dtype=float)
    return f * np.exp(np.asarray(m_field) * (abs(interval) / eps))[..., None]


def advance(f, dt, eps, model: VelocityModel, grid: TorusGrid,
            noise: NoiseModel, path: NoisePath, t_start: float = 0.0):
    """One macroscopic step over [t_start, t_start + dt], sub-stepped at noise jumps."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    a_micro = t_start / (eps * eps)
    b_micro = (t_start + dt) / (eps * eps)
    out = np.asarray(f, dtype=float)
    for ta, tb, seg in path.segments_between(a_micro, b_micro):
        h = (tb - ta) * eps * eps
        m_field = noise.field(path.seg_states[seg])
        out = step_collision(out, 0.5 * h, eps, model)
        out = step_transport(out, 0.5 * h, eps, model, grid)
        out = step_noise_multiplication(out, h, eps, m_field)
        out = step_transport(out, 0.5 * h, eps, model, grid)
        out = step_collision(out, 0.5 * h, eps, model)
    return out


@dataclass
class TrajectoryResult:
    times: np.ndarray          # recorded macroscopic times
    rho: np.ndarray            # (n_times, *grid.shape)
    norm2: np.ndarray          # ||f||^2_{L2_{x,v}} at recorded times
    sup_norm2: float           # sup over all steps
    gronwall_margin: float     # max of log||f||^2 - bound (negative = satisfied)
    path: NoisePath = None
    state_indices: np.ndarray = field(default=None)  # (n_times, J) chain states


class _StrangStepper:
    """Precomputed multipliers for the repeated full-step case."""

    def __init__(self, model, grid, noise, path, eps):
        self.model = model
        self.grid = grid
        self.noise = noise
        self.path = path
        self.eps = eps
        self.mu = model.weights
        self.active = noise.n_modes > 0
        # the phase multiplier for a half step is exp(base * delta) elementwise
        base = np.zeros(grid.shape + (model.n_velocities,), dtype=complex)
        for d in range(grid.dim):
            base += -2j * np.pi * grid.freqs[d][..., None] * model.velocities[:, d]
        self._phase_base = base * (0.5 * eps)
        self._phase_cache = {}
        self._coll_cache = {}
        self._field_cache = (None, None)
        self._noise_cache = (None, None, None)

    def phase(self, delta):
        key = float(delta)
        out = self._phase_cache.get(key)
        if out is None:
            out = np.exp(self._phase_base * delta)
            if len(self._phase_cache) < 8:
                self._phase_cache[key] = out
        return out

    def collision_factor(self, delta):
        key = float(delta)
        out = self._coll_cache.get(key)
        if out is None:
            out = np.exp(-0.5 * delta)
            if len(self._coll_cache) < 64:
                self._coll_cache[key] = out
        return out

    def field(self, seg):
        ck, cf = self._field_cache
        if ck != seg:
            cf = self.noise.field(self.path.seg_states[seg])
            self._field_cache = (seg, cf)
        return cf

    def noise_multiplier(self, seg, delta):
        ck, cd, cm = self._noise_cache
        if ck == seg and cd == delta:
            return cm
        mult = np.exp(self.field(seg) * (delta * self.eps))[..., None]
        self._noise_cache = (seg, delta, mult)
        return mult

    def piece(self, f, delta, seg):
        # relaxation half step
        theta = self.collision_factor(delta)
        rho = (f @ self.mu)[..., None]
        f = rho + theta * (f - rho)
        # transport half, multiplier, transport half
        ph = self.phase(delta)
        f = self.grid.ifft(self.grid.fft(f) * ph)
        if self.active:
            f = f * self.noise_multiplier(seg, delta)
        f = self.grid.ifft(self.grid.fft(f) * ph)
        # relaxation half step
        rho = (f @ self.mu)[..., None]
        return rho + theta * (f - rho)


def solve_trajectory(f0, config: SolverConfig, model: VelocityModel, grid: TorusGrid,
                     noise: NoiseModel, rng, output_times, instruments=(),
                     keep_path: bool = False, path: NoisePath = None) -> TrajectoryResult:
    """Integrate one trajectory and record the density at the requested times.

    The noise path is simulated first over the whole microscopic horizon, so
    the result is a deterministic function of (f0, config, rng stream).  The
    pathwise energy bound ||f(t)||^2 <= e^{2 C_* t / eps} ||f0||^2 is checked
    at every step; a violation raises since the exact sub-flows make it
    structurally impossible.
    """
    eps, beta = config.epsilon, config.dt_factor
    dt = beta * eps * eps
    n_steps = int(round(config.final_time / dt))
    if n_steps <= 0 or abs(n_steps * dt - config.final_time) > 1e-9 * config.final_time:
        n_steps = max(1, int(np.ceil(config.final_time / dt - 1e-12)))
    horizon = n_steps * beta  # microscopic horizon, exact multiple of beta
    if path is None:
        path = noise.simulate_path(horizon, rng)
    elif path.horizon < horizon * (1 - 1e-12):
        raise ValueError("supplied path does not cover the horizon")

    out_steps = []
    for t in output_times:
        k = int(round(t / dt))
        out_steps.append(min(max(k, 0), n_steps))
    out_steps = np.asarray(out_steps, dtype=np.int64)
    times = out_steps * dt

    f = np.array(f0, dtype=float, copy=True)
    if f.shape != grid.shape + (model.n_velocities,):
        raise ValueError("initial field shape mismatch")
    norm0_sq = velocity.inner_xv(model, grid, f, f)
    log_norm0 = np.log(max(norm0_sq, np.finfo(float).tiny))
    c_star = noise.bound

    stepper = _StrangStepper(model, grid, noise, path, eps)
    n_out = len(out_steps)
    rho_rec = np.empty((n_out,) + grid.shape)
    norm2_rec = np.empty(n_out)
    state_rec = np.empty((n_out, noise.n_modes), dtype=np.int64)
    sup_norm2 = norm0_sq
    margin = -np.inf

    rec_for_step = {}
    for i, k in enumerate(out_steps):
        rec_for_step.setdefault(int(k), []).append(i)

    def record(step_idx, t_macro):
        for i in rec_for_step.get(step_idx, ()):
            rho_rec[i] = velocity.average(model, f)
            nrm = velocity.inner_xv(model, grid, f, f)
            norm2_rec[i] = nrm
            state_rec[i] = path.state_at(t_macro / (eps * eps)) if noise.n_modes else []
            for ins in instruments:
                ins.observe(i, t_macro, f, state_rec[i])

    record(0, 0.0)
    with np.errstate(over="raise"):
        for k in range(n_steps):
            a_mic = k * beta
            b_mic = (k + 1) * beta
            try:
                for ta, tb, seg in path.segments_between(a_mic, b_mic):
                    delta = tb - ta
                    if delta <= 0.0:
                        continue
                    f = stepper.piece(f, delta, seg)
            except FloatingPointError as exc:
                raise TrajectoryOverflowError(
                    f"field overflow at t={(k + 1) * dt:.6g}"
                ) from exc
            nrm = velocity.inner_xv(model, grid, f, f)
            if not np.isfinite(nrm) or nrm > OVERFLOW_NORM ** 2:
                raise TrajectoryOverflowError(
                    f"||f||_L2 exceeded {OVERFLOW_NORM:g} at t={(k + 1) * dt:.6g}"
                )
            sup_norm2 = max(sup_norm2, nrm)
            t_macro = (k + 1) * dt
            if nrm > 0.0:
                gap = np.log(nrm) - (log_norm0 + 2.0 * c_star * t_macro / eps)
                margin = max(margin, gap)
                if gap > GRONWALL_SLACK:
                    raise GronwallViolationError(
                        f"energy bound violated by exp({gap:.3g}) at t={t_macro:.6g}"
                    )
            record(k + 1, t_macro)

    return TrajectoryResult(
        times=times,
        rho=rho_rec,
        norm2=norm2_rec,
        sup_norm2=sup_norm2,
        gronwall_margin=margin,
        path=path if keep_path else None,
        state_indices=state_rec,
    )
