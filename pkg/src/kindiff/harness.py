"""Reproducible ensembles, convergence tables, and metric diagnostics.

Randomness contract: trajectory i of the kinetic ensemble at epsilon index e
uses the Philox stream keyed by SeedSequence(base_seed, spawn_key=(0, e, i));
limit trajectories use namespace 1, noise statistics 2, generator
diagnostics 3.  Streams are counter-derived, so results are independent of
scheduling and worker count; ensembles are processed in fixed chunks and
reduced in chunk order, which makes outputs bitwise reproducible.
"""

import concurrent.futures
from dataclasses import dataclass, field

import numpy as np

from . import kinetic, spde
from . import velocity as vel
from .config import ExperimentConfig, parse_config
from .generator import GeneratorInstrument, PerturbedTestFunction
from .grid import TorusGrid
from .stats import RunningStats

CHUNK = 32
KIN_NS, LIM_NS, NOISE_NS, DIAG_NS = 0, 1, 2, 3
MAX_FAILURE_FRACTION = 0.01


def make_stream(base_seed: int, namespace: int, major: int, minor: int):
    """Counter-keyed Philox stream; the key identifies the trajectory uniquely."""
    ss = np.random.SeedSequence(base_seed, spawn_key=(namespace, major, minor))
    return np.random.Generator(np.random.Philox(ss))


def _chunks(n: int):
    return [list(range(a, min(a + CHUNK, n))) for a in range(0, n, CHUNK)]


def _functional_values(functionals, grid, rho_series):
    """phi(rho(t)) for each functional; rho_series is (n_times, *shape)."""
    flat = rho_series.reshape(rho_series.shape[0], -1)
    out = np.empty((len(functionals), rho_series.shape[0]))
    for k, tf in enumerate(functionals):
        mw = flat @ tf.weight.reshape(-1) * grid.cell_volume
        out[k] = mw if tf.kind == "linear" else 0.5 * mw * mw
    return out


@dataclass
class EpsEnsemble:
    """Reduced statistics of one ensemble (one epsilon, or the limit)."""

    times: np.ndarray
    functional_names: list
    functional_stats: list                  # one RunningStats (vector over times) per functional
    rho_mean: RunningStats                  # field-valued, (n_times, *shape)
    norm2: RunningStats = None              # ||f||^2 over times (kinetic only)
    norm4: RunningStats = None
    sup_norm2: RunningStats = None
    attempted: int = 0
    failures: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)   # name -> per-trajectory phi at final time
    diagnostics: dict = field(default_factory=dict)  # name -> dict of (n_traj, n_times) arrays

    def merge(self, other: "EpsEnsemble") -> "EpsEnsemble":
        out = EpsEnsemble(
            times=self.times,
            functional_names=self.functional_names,
            functional_stats=[a.merge(b) for a, b in
                              zip(self.functional_stats, other.functional_stats)],
            rho_mean=self.rho_mean.merge(other.rho_mean),
            attempted=self.attempted + other.attempted,
            failures=self.failures + other.failures,
        )
        for name in ("norm2", "norm4", "sup_norm2"):
            a, b = getattr(self, name), getattr(other, name)
            setattr(out, name, a.merge(b) if a is not None and b is not None else None)
        out.samples = {k: np.concatenate([self.samples[k], other.samples[k]])
                       for k in self.samples}
        out.diagnostics = {
            k: {kk: np.concatenate([self.diagnostics[k][kk], other.diagnostics[k][kk]])
                for kk in self.diagnostics[k]}
            for k in self.diagnostics
        }
        return out


def _empty_eps_ensemble(times, functionals, kinetic_side, diag_names):
    out = EpsEnsemble(
        times=np.asarray(times, dtype=float),
        functional_names=[t.name for t in functionals],
        functional_stats=[RunningStats() for _ in functionals],
        rho_mean=RunningStats(),
    )
    if kinetic_side:
        out.norm2 = RunningStats()
        out.norm4 = RunningStats()
        out.sup_norm2 = RunningStats()
    out.samples = {t.name: np.zeros(0) for t in functionals}
    out.diagnostics = {
        name: {"values": np.zeros((0, len(times))), "gens": np.zeros((0, len(times))),
               "brackets": np.zeros((0, len(times)))}
        for name in diag_names
    }
    return out


def _kinetic_chunk(args):
    raw, eps_index, indices, with_diag = args
    cfg = parse_config(raw)
    grid = cfg.build_grid()
    vm = cfg.build_velocity()
    nm = cfg.build_noise(grid)
    functionals = cfg.build_functionals(grid)
    eps = cfg.epsilons[eps_index]
    seed = cfg.base_seed
    scfg = kinetic.SolverConfig(epsilon=eps, dt_factor=cfg.dt_factor,
                                final_time=cfg.final_time)
    rho0 = cfg.initial_density(grid)
    f0 = vel.lift(vm, rho0)
    diag_names = [t.name for t in functionals] if with_diag else []
    bundles = {t.name: PerturbedTestFunction(t, vm, nm, grid)
               for t in functionals} if with_diag else {}
    acc = _empty_eps_ensemble(cfg.output_times, functionals, True, diag_names)
    n_times = len(cfg.output_times)
    diag_rows = {name: {"values": [], "gens": [], "brackets": []} for name in diag_names}
    for i in indices:
        acc.attempted += 1
        rng = make_stream(seed, KIN_NS, eps_index, i)
        instruments = [GeneratorInstrument(bundles[name], eps, n_times)
                       for name in diag_names]
        try:
            res = kinetic.solve_trajectory(f0, scfg, vm, grid, nm, rng,
                                           cfg.output_times, instruments=instruments)
        except (kinetic.TrajectoryOverflowError, kinetic.GronwallViolationError) as exc:
            acc.failures.append((i, f"{type(exc).__name__}: {exc}"))
            continue
        vals = _functional_values(functionals, grid, res.rho)
        for k, st in enumerate(acc.functional_stats):
            st.update(vals[k])
        acc.rho_mean.update(res.rho)
        acc.norm2.update(res.norm2)
        acc.norm4.update(res.norm2 ** 2)
        acc.sup_norm2.update(res.sup_norm2)
        for k, tf in enumerate(functionals):
            acc.samples[tf.name] = np.concatenate([acc.samples[tf.name], [vals[k, -1]]])
        for name, ins in zip(diag_names, instruments):
            diag_rows[name]["values"].append(ins.values)
            diag_rows[name]["gens"].append(ins.gens)
            diag_rows[name]["brackets"].append(ins.brackets)
    for name in diag_names:
        acc.diagnostics[name] = {
            key: np.vstack(rows) if rows else np.zeros((0, n_times))
            for key, rows in diag_rows[name].items()
        }
    return acc


def _limit_chunk(args):
    raw, indices = args
    cfg = parse_config(raw)
    grid = cfg.build_grid()
    vm = cfg.build_velocity()
    nm = cfg.build_noise(grid)
    functionals = cfg.build_functionals(grid)
    coeffs = spde.LimitCoefficients.from_models(vm, nm, grid)
    rho0 = cfg.initial_density(grid)
    n_steps = cfg.spde_steps
    dt = cfg.final_time / n_steps
    out_steps = [min(max(int(round(t / dt)), 0), n_steps) for t in cfg.output_times]
    acc = _empty_eps_ensemble(np.asarray(out_steps) * dt, functionals, False, [])
    if not indices:
        return acc
    dw = np.empty((len(indices), n_steps, coeffs.n_modes))
    for row, i in enumerate(indices):
        rng = make_stream(cfg.base_seed, LIM_NS, 0, i)
        dw[row] = rng.normal(0.0, np.sqrt(dt), size=(n_steps, coeffs.n_modes))
    series = spde.solve_spde_batch(rho0, cfg.final_time, n_steps, coeffs, dw, out_steps)
    acc.attempted = len(indices)
    for b in range(series.shape[0]):
        vals = _functional_values(functionals, grid, series[b])
        for k, st in enumerate(acc.functional_stats):
            st.update(vals[k])
        acc.rho_mean.update(series[b])
        for k, tf in enumerate(functionals):
            acc.samples[tf.name] = np.concatenate([acc.samples[tf.name], [vals[k, -1]]])
    return acc


@dataclass
class EnsembleResult:
    config: ExperimentConfig
    epsilons: list
    kinetic: dict          # eps -> EpsEnsemble
    limit: EpsEnsemble

    @property
    def failure_counts(self) -> dict:
        return {eps: len(ens.failures) for eps, ens in self.kinetic.items()}


def _run_chunked(worker, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [worker(j) for j in jobs]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, jobs))


def run_ensemble(cfg: ExperimentConfig, workers: int = 1,
                 diagnostics: bool = False, kinetic_only: bool = False,
                 limit_size: int = None) -> EnsembleResult:
    """Kinetic ensembles for every epsilon plus one limit-equation ensemble.

    Results are a deterministic function of (config, base_seed) and identical
    for any worker count.  Per-trajectory failures are recorded and excluded;
    more than MAX_FAILURE_FRACTION of failures aborts the run.
    """
    raw = cfg.raw
    n = cfg.ensemble_size
    kin = {}
    for e_idx, eps in enumerate(cfg.epsilons):
        jobs = [(raw, e_idx, idxs, diagnostics) for idxs in _chunks(n)]
        parts = _run_chunked(_kinetic_chunk, jobs, workers)
        acc = parts[0]
        for p in parts[1:]:
            acc = acc.merge(p)
        if len(acc.failures) > MAX_FAILURE_FRACTION * acc.attempted:
            raise RuntimeError(
                f"too many trajectory failures at epsilon={eps}: "
                f"{len(acc.failures)}/{acc.attempted}"
            )
        kin[eps] = acc
    if kinetic_only:
        limit = None
    else:
        m = n if limit_size is None else limit_size
        jobs = [(raw, idxs) for idxs in _chunks(m)]
        parts = _run_chunked(_limit_chunk, jobs, workers)
        limit = parts[0]
        for p in parts[1:]:
            limit = limit.merge(p)
    return EnsembleResult(config=cfg, epsilons=list(cfg.epsilons), kinetic=kin, limit=limit)


# ---------------------------------------------------------------------------
# convergence metrics


def sobolev_distance(rho1, rho2, eta: float, grid: TorusGrid) -> float:
    """Negative-order Sobolev distance, spectral: sum (1+4pi^2|xi|^2)^{-eta} |dc|^2."""
    rho1 = np.asarray(rho1, dtype=float)
    rho2 = np.asarray(rho2, dtype=float)
    if rho1.shape != grid.shape or rho2.shape != grid.shape:
        raise ValueError("fields must live on the given grid")
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    diff = grid.fft(rho1 - rho2) / grid.npoints
    weight = (1.0 + 4.0 * np.pi ** 2 * grid.freq_sq) ** (-eta)
    return float(np.sqrt(np.sum(weight * np.abs(diff) ** 2)))


@dataclass
class WeakErrorRow:
    functional: str
    epsilon: float
    error: float
    ci: float              # 3 combined standard errors
    ratio: float           # error at previous (larger) epsilon / this error
    kin_mean: float
    kin_stderr: float
    lim_mean: float
    lim_stderr: float


def weak_error_table(result: EnsembleResult, time_index: int = -1):
    """Per-functional weak errors |E phi(rho_eps) - E phi(rho)| with CIs and verdicts."""
    if len(result.epsilons) < 2:
        raise ValueError("need at least two epsilon values")
    rows, verdicts = [], {}
    names = result.limit.functional_names
    for k, name in enumerate(names):
        lim_stat = result.limit.functional_stats[k]
        lm = float(np.asarray(lim_stat.mean)[time_index])
        ls = float(np.asarray(lim_stat.stderr)[time_index])
        errors, cis = [], []
        prev_err = None
        for eps in result.epsilons:
            stat = result.kinetic[eps].functional_stats[k]
            km = float(np.asarray(stat.mean)[time_index])
            ks = float(np.asarray(stat.stderr)[time_index])
            err = abs(km - lm)
            ci = 3.0 * float(np.hypot(ks, ls))
            ratio = np.nan if prev_err is None else (prev_err / err if err > 0 else np.inf)
            rows.append(WeakErrorRow(name, eps, err, ci, ratio, km, ks, lm, ls))
            errors.append(err)
            cis.append(ci)
            prev_err = err
        if errors[0] - cis[0] > errors[-1] + cis[-1]:
            verdicts[name] = "consistent with convergence"
        else:
            verdicts[name] = "inconclusive, increase ensemble"
    return rows, verdicts


def mean_field_distances(result: EnsembleResult, eta: float = 1.0,
                         time_index: int = -1) -> dict:
    """H^{-eta} distance between kinetic and limit ensemble-mean densities."""
    grid = result.config.build_grid()
    ref = np.asarray(result.limit.rho_mean.mean)[time_index]
    return {
        eps: sobolev_distance(np.asarray(ens.rho_mean.mean)[time_index], ref, eta, grid)
        for eps, ens in result.kinetic.items()
    }


@dataclass
class MomentReport:
    sup_p2: dict           # eps -> sup_t E ||f||^2
    sup_p4: dict
    bound_p2: float
    bound_p4: float
    ok: bool               # boundedness is asserted ...
    trend_nonincreasing: bool = True  # ... the trend in eps is only reported
    offender: tuple = None  # (eps, t, value) of the first violation


def uniform_moment_check(result: EnsembleResult, f0_norm2: float) -> MomentReport:
    """Check sup_{eps, t} E||f||^p against the configured thresholds (p = 2, 4)."""
    cfg = result.config
    bound2 = cfg.moment_p2_factor * f0_norm2
    bound4 = cfg.moment_p4_factor * f0_norm2 ** 2
    sup2, sup4 = {}, {}
    offender = None
    for eps, ens in result.kinetic.items():
        m2 = np.asarray(ens.norm2.mean)
        m4 = np.asarray(ens.norm4.mean)
        sup2[eps] = float(m2.max())
        sup4[eps] = float(m4.max())
        if offender is None and sup2[eps] > bound2:
            t = float(ens.times[int(np.argmax(m2))])
            offender = (eps, t, sup2[eps])
        if offender is None and sup4[eps] > bound4:
            t = float(ens.times[int(np.argmax(m4))])
            offender = (eps, t, sup4[eps])
    seq = [sup2[e] for e in result.epsilons]
    trend = all(b <= a * (1 + 1e-12) for a, b in zip(seq, seq[1:]))
    return MomentReport(sup2, sup4, bound2, bound4, offender is None,
                        trend, offender)
