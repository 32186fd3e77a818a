"""Mean-square system norm and the spectral-radius stability test.

For an internally stable nominal loop G with channel rows C_l and columns
B_l, the matrix gTilde collects the squared H2 norms of every SISO channel
pair, gTilde[i, j] = ||G_ij||_2^2.  Mean-square stability under channel
variances sigma_l^2 is equivalent to rho(gTilde diag(sigma^2)) < 1, which
also yields the equal-variance critical value sigma_*^2 = 1 / rho(gTilde)
and the optimal diagonal scaling theta from the Perron eigenvector.

The scaled squared norm ||theta^-1 G theta||_MS^2 is additionally exposed
as a small SDP (inf gamma over P, S), the form reused inside synthesis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .linalg import (HURWITZ_MARGIN, eigenvalues, hurwitz_verdict,
                     perron_vector, solve_lyapunov, spectral_radius_nonneg)
from .model import Interconnection, StateSpace
from .sdp import LmiProblem, block, solve_feasibility, solve_minimize

__all__ = [
    "MsReport",
    "NormLmiSolution",
    "ScalingResult",
    "h2_norm_squared",
    "build_g_tilde",
    "stability_by_spectral_radius",
    "ms_norm_by_lmi",
    "infimize_scaling",
    "dual_form_feasible",
]

# components of the Perron vector below this (relative) size mark gTilde as
# reducible: the scaling infimum is approached but not attained
_REDUCIBLE_TOL = 1e-8


@dataclass(frozen=True)
class MsReport:
    g_tilde: np.ndarray
    sigma_tilde: np.ndarray
    spectral_radius: float
    critical_variance_equal: float
    verdict: str
    scaling_theta: np.ndarray | None


@dataclass(frozen=True)
class NormLmiSolution:
    p: np.ndarray
    s: np.ndarray
    gamma: float
    theta: np.ndarray


@dataclass(frozen=True)
class ScalingResult:
    theta: np.ndarray | None
    gamma_star: float
    attained: bool


def _h2_pair(a, b, c) -> float:
    """Squared H2 norm by both gramian routes, agreement enforced."""
    # balancing keeps the two routes in agreement for high-gain closed loops
    _, tb = scipy.linalg.matrix_balance(a, permute=False)
    td = np.diag(tb)
    a = a / td[:, None] * td[None, :]
    b = b / td[:, None]
    c = c * td[None, :]
    obs = solve_lyapunov(a.T, c.T @ c)
    via_obs = (b.T @ obs @ b).item()
    ctr = solve_lyapunov(a, b @ b.T)
    via_ctr = (c @ ctr @ c.T).item()
    ref = max(abs(via_obs), abs(via_ctr), 1e-30)
    # well-conditioned pairs agree to ~1e-14 relative; 1e-6 still flags a
    # genuinely broken solve (those disagree at percent level) while
    # admitting observer loops with 1e3 gains after balancing
    if abs(via_obs - via_ctr) > 1e-6 * ref:
        raise ArithmeticError(
            f"gramian routes disagree: {via_obs!r} vs {via_ctr!r}; "
            "the Lyapunov solves are ill-conditioned for this system")
    return max(via_obs, 0.0)


def h2_norm_squared(sys: StateSpace) -> float:
    """||G||_2^2 of a strictly proper SISO system with Hurwitz A.

    Computed as B^T P B with A^T P + P A + C^T C = 0 and cross-checked
    against trace(C W C^T) with the controllability gramian W.
    """
    if sys.n_inputs != 1 or sys.n_outputs != 1:
        raise ValueError("h2_norm_squared expects a SISO system")
    if not sys.strictly_proper:
        raise ValueError("direct feedthrough makes the H2 norm infinite")
    if hurwitz_verdict(sys.a) != "stable":
        raise ValueError("A is not Hurwitz: the H2 norm is infinite")
    return _h2_pair(sys.a, sys.b, sys.c)


def build_g_tilde(ic: Interconnection) -> np.ndarray:
    """m x m matrix of squared channel-to-channel H2 norms."""
    a = ic.nominal.a
    if hurwitz_verdict(a) != "stable":
        raise ValueError(
            "nominal loop must be internally stable (A Hurwitz) before "
            "channel H2 norms exist")
    m = ic.m
    g = np.zeros((m, m))
    cols = ic.b_columns
    rows = ic.c_rows
    for i in range(m):
        for j in range(m):
            g[i, j] = _h2_pair(a, cols[j], rows[i])
    return g


def stability_by_spectral_radius(ic: Interconnection) -> MsReport:
    """Verdict from rho(gTilde sigmaTilde) with critical variance and scaling."""
    g = build_g_tilde(ic)
    st = np.diag(ic.sigmas ** 2)
    rho = spectral_radius_nonneg(g @ st)
    if rho < 1.0 - HURWITZ_MARGIN:
        verdict = "stable"
    elif rho <= 1.0 + HURWITZ_MARGIN:
        verdict = "marginal"
    else:
        verdict = "unstable"
    rho_g = spectral_radius_nonneg(g)
    crit = float("inf") if rho_g == 0.0 else 1.0 / rho_g
    theta = None
    if rho_g > 0.0:
        _, v = perron_vector(g)
        if np.min(v) > _REDUCIBLE_TOL * np.max(v):
            theta = np.sqrt(v)
    return MsReport(g, st, float(rho), crit, verdict, theta)


def ms_norm_by_lmi(nominal: StateSpace, theta) -> NormLmiSolution:
    """inf gamma = ||theta^-1 G theta||_MS^2 as a linear-objective SDP.

    Constraints over P > 0, S > 0, gamma:

        [[A'P + PA, P B theta], [theta B'P, -I]] < 0
        [[theta S theta, C], [C', P]] > 0
        S_ll < gamma for every channel l
    """
    a, b, c = nominal.a, nominal.b, nominal.c
    if not nominal.strictly_proper:
        raise ValueError("MS norm requires a strictly proper system")
    if hurwitz_verdict(a) != "stable":
        raise ValueError("A is not Hurwitz: the MS norm is infinite")
    m = nominal.n_inputs
    if nominal.n_outputs != m:
        raise ValueError("channel system must be square (inputs == outputs)")
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if th.ndim == 2:
        th = np.diag(th)
    if len(th) != m or np.any(th <= 0):
        raise ValueError("theta must be a positive diagonal of length m")
    thm = np.diag(th)
    n = nominal.n
    # diagonal similarity balancing; gamma is invariant (congruence by
    # diag(T, I) resp. diag(I, T) maps the LMIs onto each other) and high-gain
    # closed loops are unsolvable without it
    _, tb = scipy.linalg.matrix_balance(a, permute=False)
    td = np.diag(tb).copy()
    a = a / td[:, None] * td[None, :]
    b = b / td[:, None]
    c = c * td[None, :]

    prob = LmiProblem()
    p = prob.sym("P", n)
    s = prob.sym("S", m)
    gam = prob.scalar("gamma")
    bth = b @ thm
    prob.require_neg(block([[a.T @ p + p @ a, p @ bth],
                            [(p @ bth).T, -np.eye(m)]]))
    # flip sign: [[theta S theta, C],[C', P]] > 0
    prob.require_neg(block([[-(thm @ s @ thm), -c],
                            [-c.T, -p]]))
    for l in range(m):
        el = np.zeros((1, m))
        el[0, l] = 1.0
        prob.require_neg(el @ s @ el.T - gam.eye(1))
    prob.minimize(gam)
    sol = solve_minimize(prob)
    if sol.status != "optimal":
        raise ArithmeticError(
            f"MS norm SDP did not reach optimality (status {sol.status}); "
            "for a Hurwitz A this indicates an internal inconsistency")
    # P back to original coordinates: V = x~' P x~ with x~ = T^-1 x
    p_orig = sol.values["P"] / td[None, :] / td[:, None]
    return NormLmiSolution(p_orig, sol.values["S"], float(sol.objective), th)


def infimize_scaling(nominal: StateSpace) -> ScalingResult:
    """Optimal diagonal scaling: inf over theta of ||theta^-1 G theta||_MS^2.

    The infimum equals rho(gTilde) and is attained at theta_l = sqrt of the
    Perron eigenvector component when gTilde is irreducible; for reducible
    gTilde the value is still reported but flagged as not attained.
    """
    m = nominal.n_inputs
    ic = Interconnection(nominal, np.zeros(m))
    g = build_g_tilde(ic)
    rho, v = perron_vector(g)
    if np.min(v) > _REDUCIBLE_TOL * np.max(v):
        return ScalingResult(np.sqrt(v), float(rho), True)
    return ScalingResult(None, float(rho), False)


def dual_form_feasible(ic: Interconnection):
    """Feasibility of the dual stability inequality.

    Searches Q > 0 and per-channel scalars alpha_l with

        alpha_l > sigma_l^2 C_l Q C_l^T,
        A Q + Q A^T + sum_l B_l alpha_l B_l^T < 0,

    normalized by Q <= 2I to bound the margin search.  Returns the verdict
    string 'stable' (feasible) or 'unstable' (infeasible).
    """
    a = ic.nominal.a
    n = a.shape[0]
    m = ic.m
    prob = LmiProblem()
    q = prob.sym("Q", n)
    alpha = prob.diag("alpha", m)
    lyap = a @ q + q @ a.T
    for l, bl in enumerate(ic.b_columns):
        el = np.zeros((m, 1))
        el[l, 0] = 1.0
        lyap = lyap + bl @ (el.T @ alpha @ el) @ bl.T
    prob.require_neg(lyap)
    for l, cl in enumerate(ic.c_rows):
        el = np.zeros((m, 1))
        el[l, 0] = 1.0
        prob.require_neg(ic.sigmas[l] ** 2 * (cl @ q @ cl.T) - el.T @ alpha @ el)
    prob.require_neg(-q)
    prob.require_neg(q - 2.0 * np.eye(n))
    sol = solve_feasibility(prob)
    if sol.status == "feasible":
        return "stable"
    if sol.status == "infeasible":
        return "unstable"
    raise ArithmeticError(f"dual feasibility undecided (status {sol.status})")
