"""Monte Carlo oracle: Euler-Maruyama paths of the multiplicative-noise loop.

Deliberately independent of the moments module: the integrator samples the
Ito SDE directly and never touches the lifted operator, so agreement between
empirical and analytic second moments is evidence rather than tautology.
Every path draws from its own counter-based stream (Philox, key = (seed,
path index)); the generator identity and draw order are pinned here, which
makes all aggregates bit-reproducible for a given seed and configuration.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .model import Interconnection
from .moments import is_mean_square_stable, propagate_covariance, steady_state_covariance

__all__ = [
    "SimConfig",
    "EmpiricalMoments",
    "MomentComparison",
    "SweepRow",
    "SweepTable",
    "default_em_step",
    "simulate",
    "compare_with_moments",
    "sweep_variance",
]

# aggregates are accumulated block by block in ascending path order; the
# block size is part of the pinned arithmetic, not a tuning knob
_BLOCK = 4096
_MAX_SAMPLES = 201


@dataclass(frozen=True)
class SimConfig:
    """step None means the default rule h (||A|| + sum sigma^2 ||BC||^2) <= 1e-2."""

    step: float | None
    horizon: float
    paths: int
    seed: int
    initial_state: np.ndarray   # n-vector start, or an (n, n) covariance to draw from
    divergence_threshold: float = 1e12

    def __post_init__(self):
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        if self.paths < 1:
            raise ValueError("need at least one path")
        if self.horizon < (self.step or 0.0) or not self.horizon > 0:
            raise ValueError("horizon must be positive and at least one step long")
        x0 = np.asarray(self.initial_state, dtype=float)
        if x0.ndim not in (1, 2) or (x0.ndim == 2 and x0.shape[0] != x0.shape[1]):
            raise ValueError("initial_state must be an n-vector or an n x n covariance")
        object.__setattr__(self, "initial_state", x0)


@dataclass
class EmpiricalMoments:
    """Second-moment estimates over the surviving paths.

    standard_errors are for the trace estimate: path-wise std of x^T x over
    sqrt(paths). All-diverged configurations come back with NaN aggregates
    and the full diverged count rather than an exception. divergence_times
    holds, in ascending order, the first sample time at which each excluded
    path crossed the threshold or went non-finite.
    """

    times: np.ndarray
    mean_traces: np.ndarray
    covariances: list
    standard_errors: np.ndarray
    diverged_path_count: int
    divergence_times: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.mean_traces = np.asarray(self.mean_traces, dtype=float)
        self.standard_errors = np.asarray(self.standard_errors, dtype=float)
        self.divergence_times = np.asarray(self.divergence_times, dtype=float)
        k = len(self.times)
        if not (k == len(self.mean_traces) == len(self.covariances)
                == len(self.standard_errors)):
            raise ValueError("moment fields must have equal length")
        if len(self.divergence_times) not in (0, self.diverged_path_count):
            raise ValueError("one divergence time per diverged path, or none")
        with np.errstate(invalid="ignore"):
            if np.any(self.mean_traces < 0):
                raise ValueError("empirical traces cannot be negative")

    def write_csv(self, path, analytic_traces=None) -> None:
        """time, empirical trace, analytic trace (NaN when absent), standard error."""
        ana = (np.full(len(self.times), np.nan) if analytic_traces is None
               else np.asarray(analytic_traces, dtype=float))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "empirical_trace", "analytic_trace", "standard_error"])
            for t, e, a, s in zip(self.times, self.mean_traces, ana, self.standard_errors):
                w.writerow([repr(float(t)), repr(float(e)), repr(float(a)), repr(float(s))])


def default_em_step(ic: Interconnection) -> float:
    """Largest h with h (||A|| + sum_l sigma_l^2 ||B_l C_l||^2) <= 1e-2."""
    rate = np.linalg.norm(ic.nominal.a, 2)
    for sig, bl, cl in zip(ic.sigmas, ic.b_columns, ic.c_rows):
        if sig > 0.0:
            rate += sig ** 2 * np.linalg.norm(bl @ cl, 2) ** 2
    return 1e-2 / max(rate, 1e-2)


def _psd_factor(q: np.ndarray) -> np.ndarray:
    """L with L L^T = Q for symmetric PSD Q (eigh route; Q may be singular)."""
    w, u = np.linalg.eigh(0.5 * (q + q.T))
    if np.min(w) < -1e-8 * max(1.0, np.max(np.abs(w))):
        raise ValueError("initial covariance is not positive semidefinite")
    return u * np.sqrt(np.clip(w, 0.0, None))[None, :]


def simulate(ic: Interconnection, cfg: SimConfig, additive=None) -> EmpiricalMoments:
    """Euler-Maruyama second moments of the channel-noise loop.

        x_{k+1} = x_k + A x_k h + sum_l sigma_l (B_l C_l x_k) sqrt(h) z_{l,k}

    with z i.i.d. standard normal, independent across channels and steps;
    an additive term H sqrt(h) z' joins the sum when H is given. Per path
    the draw order is pinned: the initial-state draw (covariance starts
    only), then one row per step covering all m channels followed by the
    additive columns. Paths whose state norm passes the divergence
    threshold (checked at the sample grid) are excluded from every average
    and counted, with the first offending sample time recorded; divergence
    of a loop the lifted test calls stable is flagged as a probable
    step-size artifact.
    """
    a = ic.nominal.a
    n = a.shape[0]
    m = ic.m
    x0 = cfg.initial_state
    if x0.shape not in ((n,), (n, n)):
        raise ValueError(f"initial_state shaped {x0.shape}, expected ({n},) or ({n}, {n})")
    random_start = x0.ndim == 2
    start_factor = _psd_factor(x0) if random_start else None

    h = cfg.step if cfg.step is not None else default_em_step(ic)
    h = min(h, cfg.horizon)
    n_steps = int(np.ceil(cfg.horizon / h - 1e-9))
    h = cfg.horizon / n_steps
    rt_h = np.sqrt(h)

    q_add = 0
    h_add_t = None
    if additive is not None:
        h_mat = np.atleast_2d(np.asarray(additive, dtype=float))
        if h_mat.shape[0] != n:
            raise ValueError(f"additive noise H has {h_mat.shape[0]} rows, expected {n}")
        q_add = h_mat.shape[1]
        h_add_t = h_mat.T * rt_h

    # channel propagation terms, transposed for row-stacked states
    terms = [(sig * rt_h, (bl @ cl).T)
             for sig, bl, cl in zip(ic.sigmas, ic.b_columns, ic.c_rows)]
    a_t = a.T * h
    cols = m + q_add

    sample_ks = np.unique(np.round(
        np.linspace(0.0, n_steps, min(n_steps + 1, _MAX_SAMPLES))).astype(int))
    k_to_slot = {int(k): i for i, k in enumerate(sample_ks)}
    times = sample_ks * h
    n_samples = len(sample_ks)

    sum_xx = np.zeros((n_samples, n, n))
    sum_tr = np.zeros(n_samples)
    sum_tr2 = np.zeros(n_samples)
    alive_total = 0
    div_times = []

    for lo in range(0, cfg.paths, _BLOCK):
        hi = min(lo + _BLOCK, cfg.paths)
        bsz = hi - lo
        draws = np.empty((bsz, n_steps, cols))
        starts = np.empty((bsz, n))
        for i, idx in enumerate(range(lo, hi)):
            gen = np.random.Generator(
                np.random.Philox(key=np.array([cfg.seed, idx], dtype=np.uint64)))
            if random_start:
                starts[i] = start_factor @ gen.standard_normal(n)
            else:
                starts[i] = x0
            draws[i] = gen.standard_normal((n_steps, cols))

        stored = np.empty((n_samples, bsz, n))
        x = starts
        if 0 in k_to_slot:
            stored[k_to_slot[0]] = x
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(n_steps):
                incr = x @ a_t
                for ell, (scale, bc_t) in enumerate(terms):
                    if scale != 0.0:
                        incr += scale * draws[:, k, ell, None] * (x @ bc_t)
                if h_add_t is not None:
                    incr += draws[:, k, m:] @ h_add_t
                x = x + incr
                slot = k_to_slot.get(k + 1)
                if slot is not None:
                    stored[slot] = x
            norms2 = np.sum(stored ** 2, axis=2)
            within = np.isfinite(norms2) & (norms2 <= cfg.divergence_threshold ** 2)
            alive = np.all(within, axis=0)
        if not np.all(alive):
            first_bad = np.argmax(~within[:, ~alive], axis=0)
            div_times.extend(times[first_bad])
        if np.any(alive):
            xs = stored[:, alive, :]
            sum_xx += np.einsum("tbi,tbj->tij", xs, xs)
            tr = np.sum(xs ** 2, axis=2)
            sum_tr += np.sum(tr, axis=1)
            sum_tr2 += np.sum(tr ** 2, axis=1)
            alive_total += int(np.sum(alive))

    diverged = cfg.paths - alive_total
    div_t = np.sort(np.asarray(div_times))
    if diverged:
        verdict, _ = is_mean_square_stable(ic)
        if verdict == "stable":
            warnings.warn(
                f"{diverged} of {cfg.paths} paths diverged although the loop is "
                "mean-square stable; possible step-size artifact, consider a smaller h")
    if alive_total == 0:
        nanv = np.full(n_samples, np.nan)
        return EmpiricalMoments(times, np.full(n_samples, np.nan),
                                [np.full((n, n), np.nan)] * n_samples,
                                nanv, diverged, div_t)

    mean_tr = sum_tr / alive_total
    covs = [sum_xx[t] / alive_total for t in range(n_samples)]
    if alive_total > 1:
        var = (sum_tr2 / alive_total - mean_tr ** 2) * alive_total / (alive_total - 1)
        se = np.sqrt(np.clip(var, 0.0, None) / alive_total)
    else:
        se = np.zeros(n_samples)
    return EmpiricalMoments(times, mean_tr, covs, se, diverged, div_t)


@dataclass
class MomentComparison:
    """simulate vs propagate_covariance on the same sample grid."""

    times: np.ndarray
    empirical_traces: np.ndarray
    analytic_traces: np.ndarray
    standard_errors: np.ndarray
    z_scores: np.ndarray
    max_abs_z: float
    max_relative_deviation: float
    diverged_path_count: int
    divergence_times: np.ndarray = field(default_factory=lambda: np.empty(0))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "empirical_trace", "analytic_trace", "standard_error"])
            for row in zip(self.times, self.empirical_traces,
                           self.analytic_traces, self.standard_errors):
                w.writerow([repr(float(v)) for v in row])


def compare_with_moments(ic: Interconnection, cfg: SimConfig,
                         additive=None) -> MomentComparison:
    """Overlay the empirical second-moment trace with the covariance ODE.

    The analytic trajectory is integrated on its own grid and interpolated
    onto the sample times; deviations are reported both relative to the
    analytic trace and standardized by the empirical standard error.
    """
    emp = simulate(ic, cfg, additive)
    x0 = cfg.initial_state
    q0 = x0 if x0.ndim == 2 else np.outer(x0, x0)
    traj = propagate_covariance(ic, q0, cfg.horizon, additive=additive)
    ana = np.interp(emp.times, traj.times, traj.traces)
    dev = np.abs(emp.mean_traces - ana)
    scale = np.maximum(np.abs(ana), 1e-300)
    rel = dev / scale
    # a zero standard error means the estimate is exact (sigma = 0 paths or
    # t = 0); any deviation there is integrator error, not sampling noise
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(emp.standard_errors > 0, dev / emp.standard_errors,
                     np.where(dev <= 1e-9 * scale, 0.0, np.inf))
    return MomentComparison(
        emp.times, emp.mean_traces, ana, emp.standard_errors, z,
        float(np.max(np.abs(z))) if len(z) else 0.0,
        float(np.max(rel)) if len(rel) else 0.0,
        emp.diverged_path_count, emp.divergence_times)


@dataclass(frozen=True)
class SweepRow:
    sigma_sq: float
    verdict: str                 # "bounded" or "unbounded"
    analytic_trace: float        # NaN when unbounded
    empirical_trace: float       # NaN unless empirical confirmation requested
    standard_error: float


@dataclass
class SweepTable:
    rows: list

    @property
    def sigma_sqs(self) -> np.ndarray:
        return np.array([r.sigma_sq for r in self.rows])

    @property
    def analytic_traces(self) -> np.ndarray:
        return np.array([r.analytic_trace for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma_sq", "verdict", "analytic_trace",
                        "empirical_trace", "standard_error"])
            for r in self.rows:
                w.writerow([repr(float(r.sigma_sq)), r.verdict,
                            repr(float(r.analytic_trace)),
                            repr(float(r.empirical_trace)),
                            repr(float(r.standard_error))])


def sweep_variance(template: Interconnection, sigmas_sq, cfg: SimConfig,
                   additive, empirical: bool = False) -> SweepTable:
    """Steady-state trace against uniform channel variance.

    Each row closes the template's channel structure with every sigma_l^2
    set to the row's variance (the template's own sigmas are ignored) and
    evaluates the stationary covariance under the additive probe noise;
    rows at or past the critical variance are marked unbounded. A finite
    steady variance needs the forcing, so the probe is mandatory. With
    empirical=True, stable rows are re-simulated from a stationary start
    and confirmed by the final-time trace estimate.
    """
    if additive is None:
        raise ValueError(
            "sweep_variance needs additive probe noise: without forcing the "
            "stationary covariance of a stable loop is identically zero")
    rows = []
    m = template.m
    for s2 in sigmas_sq:
        if s2 < 0:
            raise ValueError("channel variances must be nonnegative")
        ic = Interconnection(template.nominal, np.full(m, np.sqrt(s2)))
        verdict, _ = is_mean_square_stable(ic)
        if verdict != "stable":
            rows.append(SweepRow(float(s2), "unbounded", np.nan, np.nan, np.nan))
            continue
        q_ss = steady_state_covariance(ic, additive)
        ana = float(np.trace(q_ss))
        emp_tr, emp_se = np.nan, np.nan
        if empirical:
            emp = simulate(ic, replace(cfg, initial_state=q_ss), additive)
            emp_tr = float(emp.mean_traces[-1])
            emp_se = float(emp.standard_errors[-1])
        rows.append(SweepRow(float(s2), "bounded", ana, emp_tr, emp_se))
    return SweepTable(rows)
