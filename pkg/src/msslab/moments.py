"""Second-moment machinery for multiplicative-noise interconnections.

The covariance Q(t) = E[x x^T] of

    dx = A x dt + sum_l sigma_l B_l C_l x dxi_l (+ H dW)

obeys the linear matrix ODE

    Qdot = Q A^T + A Q + sum_l sigma_l^2 B_l C_l Q C_l^T B_l^T (+ H H^T),

which vectorizes to vec(Qdot) = script_A vec(Q) + script_B with

    script_A = A (+) A + sum_l sigma_l^2 (B_l C_l) (x) (B_l C_l),
    script_B = (H (x) H) vec(I).

Mean-square exponential stability is exactly the Hurwitz property of
script_A; everything else here (propagation, steady state, Lyapunov
certificates) is layered on that ground truth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .linalg import (Spectrum, eigenvalues, hurwitz_verdict, kron, kron_sum,
                     unvec, vec)
from .model import Interconnection
from .sdp import LmiProblem, solve_feasibility

__all__ = [
    "LiftedOperator",
    "CovarianceTrajectory",
    "LyapunovCertificate",
    "DivergenceError",
    "NotMeanSquareStableError",
    "build_lifted",
    "is_mean_square_stable",
    "propagate_covariance",
    "steady_state_covariance",
    "lyapunov_certificate",
    "stability_certificate_problem",
]


class DivergenceError(ArithmeticError):
    """Covariance blow-up during propagation; carries the time of overflow."""

    def __init__(self, time: float):
        super().__init__(f"covariance diverged (entries beyond 1e300) at t = {time:.6g}")
        self.time = float(time)


class NotMeanSquareStableError(ValueError):
    """Raised when an operation requires a mean-square stable loop."""


@dataclass(frozen=True)
class LiftedOperator:
    """The n^2 x n^2 generator of the vectorized covariance dynamics."""

    script_a: np.ndarray
    script_b: np.ndarray | None
    source_dim: int

    def __post_init__(self):
        sa = np.asarray(self.script_a, dtype=float)
        if not np.all(np.isfinite(sa)):
            raise ValueError("lifted operator has non-finite entries")
        sa.setflags(write=False)
        object.__setattr__(self, "script_a", sa)
        if self.script_b is not None:
            sb = np.asarray(self.script_b, dtype=float).reshape(-1)
            sb.setflags(write=False)
            object.__setattr__(self, "script_b", sb)

    @property
    def spectrum(self) -> Spectrum:
        return eigenvalues(self.script_a)


@dataclass
class CovarianceTrajectory:
    """Sampled solution of the covariance ODE: times, Q(t), and traces."""

    times: np.ndarray
    covariances: list
    traces: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.traces = np.asarray(self.traces, dtype=float)
        if not (len(self.times) == len(self.covariances) == len(self.traces)):
            raise ValueError("trajectory fields must have equal length")

    def write_csv(self, path) -> None:
        """time, trace, then the upper-triangle entries Q_ij (i <= j)."""
        n = self.covariances[0].shape[0] if self.covariances else 0
        header = ["time", "trace"] + [f"q{i}{j}" for i in range(n) for j in range(i, n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            iu = np.triu_indices(n)
            for t, q, tr in zip(self.times, self.covariances, self.traces):
                w.writerow([repr(float(t)), repr(float(tr))] + [repr(float(v)) for v in q[iu]])


@dataclass(frozen=True)
class LyapunovCertificate:
    """P > 0 with A^T P + P A + sum_l sigma_l^2 C_l^T B_l^T P B_l C_l < -slack I.

    coords are the raw solver coordinates: together with the problem from
    stability_certificate_problem they let a consumer re-run the constraint
    check without trusting anything but the interconnection data.
    """

    p: np.ndarray
    slack: float
    coords: dict = field(default_factory=dict)


def build_lifted(ic: Interconnection, additive=None) -> LiftedOperator:
    """Assemble script_A (and script_B when an additive-noise H is given)."""
    a = ic.nominal.a
    n = a.shape[0]
    sa = kron_sum(a, a)
    for sig, bl, cl in zip(ic.sigmas, ic.b_columns, ic.c_rows):
        if sig == 0.0:
            continue
        blcl = bl @ cl
        sa = sa + sig ** 2 * kron(blcl, blcl)
    sb = None
    if additive is not None:
        h = np.atleast_2d(np.asarray(additive, dtype=float))
        if h.shape[0] != n:
            raise ValueError(f"additive noise H has {h.shape[0]} rows, expected {n}")
        sb = kron(h, h) @ vec(np.eye(h.shape[1]))
    return LiftedOperator(sa, sb, n)


def is_mean_square_stable(ic: Interconnection):
    """Exact verdict {stable | marginal | unstable} from the lifted spectrum.

    Returns (verdict, Spectrum of script_A).  The +-1e-9 band around zero
    real part reports as 'marginal'.
    """
    spec = eigenvalues(build_lifted(ic).script_a)
    return hurwitz_verdict(spec), spec


def default_step(ic: Interconnection) -> float:
    """Fixed integration step 1e-3 / ||A||, floored for the A = 0 edge case."""
    nrm = np.linalg.norm(ic.nominal.a, 2)
    return 1e-3 / max(nrm, 1e-3)


def propagate_covariance(ic: Interconnection, q0, horizon: float,
                         step: float | None = None, additive=None) -> CovarianceTrajectory:
    """Integrate the covariance ODE with the classical 4th-order scheme.

    Samples every accepted step, symmetrizing as (Q + Q^T)/2.  Entries past
    1e300 raise DivergenceError with the time of blow-up.
    """
    q = np.atleast_2d(np.asarray(q0, dtype=float)).copy()
    n = ic.nominal.a.shape[0]
    if q.shape != (n, n):
        raise ValueError(f"Q0 shape {q.shape}, expected {(n, n)}")
    if not np.allclose(q, q.T, atol=1e-10 * (1 + np.abs(q).max())):
        raise ValueError("Q0 must be symmetric")
    if np.min(np.linalg.eigvalsh(0.5 * (q + q.T))) < -1e-8 * (1 + np.abs(q).max()):
        raise ValueError("Q0 must be positive semidefinite")
    if step is None:
        step = default_step(ic)
    if step <= 0:
        raise ValueError("step must be positive")

    a = ic.nominal.a
    pairs = [(sig ** 2, bl @ cl) for sig, bl, cl in zip(ic.sigmas, ic.b_columns, ic.c_rows)
             if sig != 0.0]
    forcing = None
    if additive is not None:
        h = np.atleast_2d(np.asarray(additive, dtype=float))
        if h.shape[0] != n:
            raise ValueError(f"additive noise H has {h.shape[0]} rows, expected {n}")
        forcing = h @ h.T

    def rhs(m):
        out = m @ a.T + a @ m
        for s2, g in pairs:
            out = out + s2 * (g @ m @ g.T)
        if forcing is not None:
            out = out + forcing
        return out

    times = [0.0]
    covs = [0.5 * (q + q.T)]
    traces = [float(np.trace(q))]
    steps = int(np.ceil(horizon / step))
    t = 0.0
    for k in range(steps):
        h_k = min(step, horizon - t)
        k1 = rhs(q)
        k2 = rhs(q + 0.5 * h_k * k1)
        k3 = rhs(q + 0.5 * h_k * k2)
        k4 = rhs(q + h_k * k3)
        q = q + (h_k / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        q = 0.5 * (q + q.T)
        t += h_k
        if not np.all(np.isfinite(q)) or np.abs(q).max() > 1e300:
            raise DivergenceError(t)
        times.append(t)
        covs.append(q)
        traces.append(float(np.trace(q)))
    return CovarianceTrajectory(np.array(times), covs, np.array(traces))


def steady_state_covariance(ic: Interconnection, additive) -> np.ndarray:
    """Stationary covariance unvec(-script_A^{-1} script_B) of a stable loop."""
    lift = build_lifted(ic, additive)
    verdict = hurwitz_verdict(eigenvalues(lift.script_a))
    if verdict != "stable":
        raise NotMeanSquareStableError(
            f"steady-state covariance requires a mean-square stable loop (verdict: {verdict}); "
            "the second moment has no finite limit")
    qv = np.linalg.solve(lift.script_a, -lift.script_b)
    n = lift.source_dim
    q = unvec(qv, n, n)
    q = 0.5 * (q + q.T)
    lam = np.min(np.linalg.eigvalsh(q))
    if lam < -1e-8 * max(1.0, np.abs(q).max()):
        raise ArithmeticError(f"steady-state covariance lost definiteness (min eig {lam:.3e})")
    return q


def stability_certificate_problem(ic: Interconnection) -> LmiProblem:
    """The quadratic-stability feasibility problem in the variable P.

    Deterministic given the interconnection, so a serialized certificate can
    be re-checked by rebuilding this problem from the system matrices alone.
    """
    a = ic.nominal.a
    n = a.shape[0]
    prob = LmiProblem()
    p = prob.sym("P", n)
    expr = a.T @ p + p @ a
    for sig, bl, cl in zip(ic.sigmas, ic.b_columns, ic.c_rows):
        if sig == 0.0:
            continue
        g = bl @ cl
        expr = expr + sig ** 2 * (g.T @ p @ g)
    prob.require_neg(expr)
    prob.require_neg(-p)          # P > 0
    prob.require_neg(p - 2.0 * np.eye(n))   # box: keeps the margin problem bounded
    return prob


def lyapunov_certificate(ic: Interconnection) -> LyapunovCertificate:
    """Feasibility certificate for the quadratic stability inequality.

    Solves, with unit normalization P <= I on the certificate scale,

        P > 0,  A^T P + P A + sum_l sigma_l^2 C_l^T B_l^T P B_l C_l < 0

    and returns P with the achieved strict margin.  Infeasibility (the dual
    evidence that no such P exists) raises NotMeanSquareStableError.
    """
    a = ic.nominal.a
    prob = stability_certificate_problem(ic)
    sol = solve_feasibility(prob)
    if sol.status == "infeasible":
        raise NotMeanSquareStableError(
            "not mean-square stable: the stability inequality is infeasible "
            f"(optimal margin {sol.worst_constraint_margin:.3e} <= 0)")
    if sol.status != "feasible":
        raise ArithmeticError(
            f"certificate solve did not converge (status {sol.status})")
    pmat = sol.values["P"]
    # slack: most-negative-eigenvalue margin of the residual, re-evaluated
    res = a.T @ pmat + pmat @ a
    for sig, bl, cl in zip(ic.sigmas, ic.b_columns, ic.c_rows):
        if sig == 0.0:
            continue
        g = bl @ cl
        res = res + sig ** 2 * (g.T @ pmat @ g)
    slack = float(-np.max(np.linalg.eigvalsh(res)))
    if slack <= 0 or np.min(np.linalg.eigvalsh(pmat)) <= 0:
        raise NotMeanSquareStableError(
            "certificate failed re-evaluation: the margin-maximizing point is "
            f"not strictly feasible (slack {slack:.3e})")
    return LyapunovCertificate(pmat, slack, dict(sol.coords))
