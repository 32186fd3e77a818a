"""Robust output-feedback synthesis against multiplicative channel noise.

The synthesis LMIs minimize the scaled mean-square gain bound gamma over a
convexifying change of controller variables (X, Y, Ahat, Bhat, Chat): a
feasible point reconstructs a strictly proper controller of plant order whose
closed loop has MS norm squared <= gamma, hence tolerates any equal channel
variance below 1/gamma. A D-K alternation tightens the diagonal scaling theta
between synthesis passes. The module also provides the single-input
fundamental limitation sigma* (no LTI state feedback survives sigma >= sigma*)
and the Riccati-optimal state feedback that approaches it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import sdp
from .linalg import HURWITZ_MARGIN, cholesky_psd, transmission_zeros
from .model import ChannelSet, Interconnection, StateSpace, assemble_nominal
from .msnorm import stability_by_spectral_radius

__all__ = [
    "SynthesisInfeasibleError",
    "SynthesisResult",
    "LimitReport",
    "synthesize",
    "baseline_scaling",
    "dk_iterate",
    "fundamental_limit",
    "input_gain_floor",
    "optimal_state_feedback",
]


class SynthesisInfeasibleError(RuntimeError):
    """The synthesis LMIs admit no solution at the requested scaling.

    margins holds the per-constraint optima of the margin-maximization
    relaxation when available: the most-violated entries show which LMIs
    blocked the design.
    """

    def __init__(self, msg: str, margins=None):
        super().__init__(msg)
        self.margins = [] if margins is None else [float(v) for v in margins]


@dataclass
class SynthesisResult:
    """Certified controller with the synthesis variables that produced it.

    gamma bounds the MS norm squared of the theta-scaled closed loop;
    achieved_critical_variance is the reassembled loop's actual critical
    equal variance (>= 1/gamma up to solver tolerance). factor_m/factor_n
    are the invertible pair with N M^T = I - Y X used in the reconstruction.
    """

    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    ahat: np.ndarray
    bhat: np.ndarray
    chat: np.ndarray
    gamma: float
    controller: StateSpace
    factor_m: np.ndarray
    factor_n: np.ndarray
    achieved_critical_variance: float
    theta: np.ndarray
    loop: Interconnection
    recomputed_gamma: float
    cond_m: float
    cond_n: float
    shift_applied: bool = False
    gamma_history: list = field(default_factory=list)


@dataclass(frozen=True)
class LimitReport:
    """Fundamental limit of single-input mean-square stabilization."""

    mean_gain: float
    unstable_eig_sum: float
    sigma_star: float
    stabilizable: bool | None = None


# ---------------------------------------------------------------------------
# PBH tests


def _uncontrollable_mode(a: np.ndarray, b: np.ndarray, margin: float):
    """Return an eigenvalue with Re >= -margin failing the PBH rank test,
    or None when (a, b) is stabilizable."""
    n = a.shape[0]
    scale = max(1.0, float(np.linalg.norm(np.hstack([a, b]), 2)))
    for lam in np.linalg.eigvals(a):
        if lam.real < -margin:
            continue
        pencil = np.hstack([lam * np.eye(n) - a, b])
        if np.linalg.svd(pencil, compute_uv=False)[-1] <= 1e-8 * scale:
            return lam
    return None


def _assert_stabilizable_detectable(plant: StateSpace) -> None:
    bad = _uncontrollable_mode(plant.a, plant.b, HURWITZ_MARGIN)
    if bad is not None:
        raise ValueError(
            f"(A, B) is not stabilizable: uncontrollable mode at {bad:.6g}")
    bad = _uncontrollable_mode(plant.a.T, plant.c.T, HURWITZ_MARGIN)
    if bad is not None:
        raise ValueError(
            f"(A, C) is not detectable: unobservable mode at {bad:.6g}")


# ---------------------------------------------------------------------------
# K-step: controller synthesis at fixed theta


def _check_theta(theta, m: int) -> np.ndarray:
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if th.shape != (m,) or np.any(th <= 0):
        raise ValueError(f"theta must be {m} positive scalings")
    return th


def _normalize_plant(plant: StateSpace):
    """Similarity-balance the state and rescale channels to unit gain.

    Working coordinates: A_s = T^-1 A T (diagonal balancing), input columns
    and output rows scaled to unit norm. Output feedback is blind to plant
    state coordinates, and a diagonal channel rescaling is exactly a change
    of theta: with signal scales s = (1/rownorm(C), colnorm(B)), solving at
    theta_s = s * theta gives the same gamma, and the controller maps back
    as B_k = B_k' diag(1/rownorm), C_k = diag(1/colnorm) C_k'. Without this
    the LMI variables inherit the plant's units (the swing benchmark needs
    |Chat| ~ 1e5) and the barrier stalls.
    """
    _, tb = scipy.linalg.matrix_balance(plant.a, permute=False)
    td = np.diag(tb)
    a = plant.a / td[:, None] * td[None, :]
    b = plant.b / td[:, None]
    c = plant.c * td[None, :]
    colnorm = np.linalg.norm(b, axis=0)
    colnorm[colnorm == 0.0] = 1.0
    rownorm = np.linalg.norm(c, axis=1)
    rownorm[rownorm == 0.0] = 1.0
    scaled = StateSpace(a, b / colnorm[None, :], c / rownorm[:, None])
    s_chan = np.concatenate([1.0 / rownorm, colnorm])
    return scaled, s_chan, 1.0 / rownorm, 1.0 / colnorm


def synthesize(plant: StateSpace, channels: ChannelSet,
               theta=None) -> SynthesisResult:
    """Minimize the scaled-gain bound gamma over all strictly proper
    output-feedback controllers of plant order, then reconstruct one.

    Channels are enumerated output-block-first, matching ChannelSet.sigmas;
    theta (positive, length q + d) applies in that order and defaults to
    all-ones. Raises SynthesisInfeasibleError when no stabilizing controller
    exists at this scaling, ValueError on failed preconditions. The returned
    synthesis variables (x, y, s, ahat, bhat, chat) refer to the internally
    normalized plant coordinates; gamma, theta, controller and loop refer to
    the caller's.
    """
    if not plant.strictly_proper:
        raise ValueError("synthesis requires a strictly proper plant")
    if channels.d != plant.n_inputs or channels.q != plant.n_outputs:
        raise ValueError("channel counts must match plant input/output dimensions")
    _assert_stabilizable_detectable(plant)
    n, d, q = plant.n, plant.n_inputs, plant.n_outputs
    m = q + d
    th_user = _check_theta(np.ones(m) if theta is None else theta, m)
    scaled, s_chan, dy, du = _normalize_plant(plant)
    th = th_user * s_chan
    big_theta = np.diag(th)
    a, b, c = scaled.a, scaled.b, scaled.c
    lam_i, lam_o = channels.lambda_i, channels.lambda_o

    prob = sdp.LmiProblem()
    x = prob.sym("X", n)
    y = prob.sym("Y", n)
    s = prob.sym("S", m)
    ahat = prob.full("Ahat", n, n)
    bhat = prob.full("Bhat", n, q)
    chat = prob.full("Chat", d, n)
    gam = prob.scalar("gamma")

    # closed-loop Lyapunov inequality in the transformed variables:
    # [[L1, Ahat' + A], [Ahat + A', L2], channel columns; -I] < 0
    bl_i = b @ lam_i
    l1 = a @ x + x @ a.T + bl_i @ chat + (bl_i @ chat).T
    l2 = a.T @ y + y @ a + bhat @ (lam_o @ c) + (bhat @ (lam_o @ c)).T
    off = ahat.T + a
    top = sdp.block([[l1, off], [off.T, l2]])
    chan = sdp.block([[np.zeros((n, q)), b], [bhat, y @ b]]) @ big_theta
    prob.require_neg(
        sdp.block([[top, chan], [chan.T, -np.eye(m)]]), "loop")
    # scaled output inequality; its lower-right corner forces X, Y > 0
    cx = sdp.block([[c @ x, c], [chat, np.zeros((d, n))]])
    xy = sdp.block([[x, np.eye(n)], [np.eye(n), y]])
    prob.require_pos(
        sdp.block([[big_theta @ s @ big_theta, cx], [cx.T, xy]]), "output")
    for ell in range(m):
        e = np.zeros((1, m))
        e[0, ell] = 1.0
        prob.require_neg(e @ s @ e.T - gam.eye(1), f"s{ell}{ell}")
    prob.minimize(gam.eye(1))

    sol = sdp.solve_minimize(prob)
    if sol.status == "infeasible":
        raise SynthesisInfeasibleError(
            "no internally stabilizing strictly proper controller found at this theta",
            sol.margins)
    if sol.status != "optimal":
        raise ArithmeticError(f"synthesis solve ended with status {sol.status!r}")

    xv, yv, sv = sol.values["X"], sol.values["Y"], sol.values["S"]
    ahv, bhv, chv = sol.values["Ahat"], sol.values["Bhat"], sol.values["Chat"]
    gamma = float(sol.values["gamma"])
    return _reconstruct(plant, scaled, dy, du, channels, th_user,
                        xv, yv, sv, ahv, bhv, chv, gamma)


def _reconstruct(plant, scaled, dy, du, channels, th_user,
                 xv, yv, sv, ahv, bhv, chv, gamma) -> SynthesisResult:
    """Undo the change of variables: factor N M^T = I - Y X, extract
    (A_k, B_k, C_k) in the normalized coordinates, map the controller back
    to the caller's units, reassemble the loop and recertify its norm."""
    n = plant.n
    a, b, c = scaled.a, scaled.b, scaled.c
    lam_i, lam_o = channels.lambda_i, channels.lambda_o

    payload = yv - np.linalg.inv(xv)
    payload = 0.5 * (payload + payload.T)
    shift = bool(np.min(np.linalg.eigvalsh(payload)) <= 1e-8)
    if shift:
        payload = payload + 1e-8 * np.eye(n)
    nf = cholesky_psd(payload)
    if nf is None:
        raise ArithmeticError(
            "Y - X^{-1} is not positive definite even after the 1e-8 shift; "
            "cannot factor the controller change of variables")
    mt = np.linalg.solve(nf, np.eye(n) - yv @ xv)   # M^T = N^{-1}(I - YX)
    mf = mt.T

    ck = np.linalg.solve(mt.T, chv.T).T             # C_k = Chat M^{-T}
    bk = np.linalg.solve(nf, bhv)                   # B_k = N^{-1} Bhat
    core = ahv - yv @ a @ xv - nf @ bk @ lam_o @ c @ xv - yv @ b @ lam_i @ ck @ mt
    ak = np.linalg.solve(mt.T, np.linalg.solve(nf, core).T).T

    resid = np.linalg.norm(nf @ mt - (np.eye(n) - yv @ xv))
    ref = max(1.0, np.linalg.norm(np.eye(n) - yv @ xv))
    if resid > 1e-8 * ref:
        raise ArithmeticError(
            f"factorization residual |N M^T - (I - YX)| = {resid:.3e} too large")

    # controller back-map: it sees the rescaled measurement dy*y and emits
    # the rescaled command u/du, so B_k picks up diag(dy) and C_k diag(du)
    bk = bk * dy[None, :]
    ck = du[:, None] * ck
    controller = StateSpace(ak, bk, ck)
    loop = assemble_nominal(plant, controller, channels)
    spec_cl = np.linalg.eigvals(loop.nominal.a)
    if np.max(spec_cl.real) >= -HURWITZ_MARGIN:
        raise ArithmeticError(
            "reconstructed closed loop is not internally stable "
            f"(max Re eig = {np.max(spec_cl.real):.3e}); reconstruction is "
            "ill-conditioned at this solution")
    # exact scaled MS norm of the realized loop: the LMI infimum at this
    # theta equals the max weighted row sum of gTilde, so the Lyapunov-based
    # row sum recertifies gamma without a second SDP
    report = stability_by_spectral_radius(loop)
    th2 = th_user ** 2
    recheck = float(np.max((report.g_tilde @ th2) / th2))
    if recheck > gamma * (1.0 + 1e-3):
        raise ArithmeticError(
            f"reassembled loop recertifies at {recheck:.6g} > "
            f"gamma (1 + 1e-3) = {gamma * 1.001:.6g}")
    achieved = report.critical_variance_equal
    return SynthesisResult(
        x=xv, y=yv, s=sv, ahat=ahv, bhat=bhv, chat=chv, gamma=gamma,
        controller=controller, factor_m=mf, factor_n=nf,
        achieved_critical_variance=float(achieved), theta=th_user, loop=loop,
        recomputed_gamma=recheck,
        cond_m=float(np.linalg.cond(mf)), cond_n=float(np.linalg.cond(nf)),
        shift_applied=shift, gamma_history=[gamma])


# ---------------------------------------------------------------------------
# D-step: rescale theta at a fixed K-step solution


def _interior_k_point(plant: StateSpace, channels: ChannelSet, theta,
                      level: float):
    """Max-margin solve of the synthesis LMIs at a fixed level for S_ll.

    Expects plant and theta already in the normalized coordinates of
    _normalize_plant (the caller holds the channel scale vector).

    The gamma-minimizing K-step necessarily ends on the constraint boundary,
    where the frozen-variable D-step program has an empty interior. Backing
    the level off and recentering yields synthesis variables with real slack
    for the D-step to move against. Returns the variable dict or None.
    """
    n, d, q = plant.n, plant.n_inputs, plant.n_outputs
    m = q + d
    a, b, c = plant.a, plant.b, plant.c
    lam_i, lam_o = channels.lambda_i, channels.lambda_o
    big_theta = np.diag(theta)
    prob = sdp.LmiProblem()
    x = prob.sym("X", n)
    y = prob.sym("Y", n)
    s = prob.sym("S", m)
    ahat = prob.full("Ahat", n, n)
    bhat = prob.full("Bhat", n, q)
    chat = prob.full("Chat", d, n)
    bl_i = b @ lam_i
    l1 = a @ x + x @ a.T + bl_i @ chat + (bl_i @ chat).T
    l2 = a.T @ y + y @ a + bhat @ (lam_o @ c) + (bhat @ (lam_o @ c)).T
    off = ahat.T + a
    top = sdp.block([[l1, off], [off.T, l2]])
    chan = sdp.block([[np.zeros((n, q)), b], [bhat, y @ b]]) @ big_theta
    prob.require_neg(sdp.block([[top, chan], [chan.T, -np.eye(m)]]), "loop")
    cx = sdp.block([[c @ x, c], [chat, np.zeros((d, n))]])
    xy = sdp.block([[x, np.eye(n)], [np.eye(n), y]])
    prob.require_pos(
        sdp.block([[big_theta @ s @ big_theta, cx], [cx.T, xy]]), "output")
    for ell in range(m):
        e = np.zeros((1, m))
        e[0, ell] = 1.0
        prob.require_neg(e @ s @ e.T - level * np.eye(1), f"s{ell}{ell}")
    sol = sdp.solve_feasibility(prob)
    if sol.status != "feasible":
        return None
    return sol.values


def _d_step(plant: StateSpace, channels: ChannelSet, res: SynthesisResult,
            backoff: float = 1e-2):
    """Minimize max_l S_ll over diagonal scalings at frozen synthesis
    variables, by bisection on the level.

    The variables are first recentered at level gamma (1 + backoff) so the
    frozen blocks have interior slack. Both D-step constraints stay affine
    in T = theta^2: the Lyapunov block is Schur-complemented to
    H + U T U' < 0, and the output block keeps [[X, I],[I, Y]] in a corner
    instead of its inverse, with W standing for theta S theta (so S_ll =
    W_ll / T_ll). Returns (theta, level) or None on infeasibility.
    """
    n, d, q = plant.n, plant.n_inputs, plant.n_outputs
    m = q + d
    scaled, s_chan, _, _ = _normalize_plant(plant)
    a, b, c = scaled.a, scaled.b, scaled.c
    lam_i, lam_o = channels.lambda_i, channels.lambda_o

    level0 = res.gamma * (1.0 + backoff)
    vals = _interior_k_point(scaled, channels, res.theta * s_chan, level0)
    if vals is None:
        return None
    xv, yv = vals["X"], vals["Y"]
    ahv, bhv, chv = vals["Ahat"], vals["Bhat"], vals["Chat"]

    bl_i = b @ lam_i
    l1 = a @ xv + xv @ a.T + bl_i @ chv + (bl_i @ chv).T
    l2 = a.T @ yv + yv @ a + bhv @ lam_o @ c + (bhv @ lam_o @ c).T
    off = ahv.T + a
    h = np.block([[l1, off], [off.T, l2]])
    u = np.block([[np.zeros((n, q)), b], [bhv, yv @ b]])
    cx = np.block([[c @ xv, c], [chv, np.zeros((d, n))]])
    xy = np.block([[xv, np.eye(n)], [np.eye(n), yv]])
    # constraint-wise normalization keeps the strictness thresholds (which
    # scale with the constant term) commensurate with the achievable margins
    s_loop = max(1.0, float(np.max(np.abs(h))))
    s_out = max(1.0, float(np.max(np.abs(cx))), float(np.max(np.abs(xy))))

    def feasible(level: float):
        prob = sdp.LmiProblem()
        t = prob.diag("T", m)
        w = prob.sym("W", m)
        prob.require_neg((h + u @ t @ u.T) * (1.0 / s_loop), "loop")
        prob.require_pos(
            sdp.block([[w, cx], [cx.T, xy]]) * (1.0 / s_out), "output")
        lvl_scale = 1.0 / max(1.0, level)
        for ell in range(m):
            e = np.zeros((1, m))
            e[0, ell] = 1.0
            prob.require_neg(
                (e @ w @ e.T - level * (e @ t @ e.T)) * lvl_scale, f"lvl{ell}")
        prob.require_neg(1e-10 * np.eye(m) - t, "tpos")
        sol = sdp.solve_feasibility(prob)
        if sol.status == "feasible":
            return np.diag(sol.values["T"]).copy()
        return None

    hi = level0
    t_best = feasible(hi)
    if t_best is None:
        return None
    lo = 0.0
    while hi - lo > 1e-4 * hi:
        mid = 0.5 * (lo + hi)
        t_mid = feasible(mid)
        if t_mid is None:
            lo = mid
        else:
            hi, t_best = mid, t_mid
    # map back to the caller's channel units, then normalize by the max
    # entry, which is free: the next K-step's optimum is invariant under
    # theta -> c theta (congruence by diag(I, cI) plus P -> P/c^2)
    th_user = np.sqrt(t_best) / s_chan
    return th_user / np.max(th_user), hi


def input_gain_floor(plant: StateSpace) -> float:
    """Infimum of the squared H2 norm of the input-channel loop transfer
    over all internally stabilizing output-feedback controllers (SISO).

    The transfer from an input-channel injection back to the command signal
    is the complementary sensitivity T, which any stabilizing controller
    must interpolate to 1 at the plant's open-RHP poles and to 0 at its
    open-RHP transmission zeros. The minimum-norm interpolant gives

        inf ||T||_2^2 = v* M^-1 v,  M_ik = 1/(p_i + conj(p_k)),
        v_k = prod_j (conj(z_j) + p_k) / (z_j - p_k),

    reducing to 2 sum Re(p_i) with no RHP zeros (the state-feedback case).
    A single noisy input channel therefore tolerates variance at most
    1/floor, whatever the controller; cheap-control designs approach the
    floor from above. Returns 0 for a Hurwitz plant (no obstruction).
    """
    if plant.n_inputs != 1 or plant.n_outputs != 1:
        raise ValueError("the input-gain floor is defined for SISO plants")
    poles = np.linalg.eigvals(plant.a)
    poles = poles[poles.real > 1e-9]
    if poles.size == 0:
        return 0.0
    zeros = transmission_zeros(plant.a, plant.b, plant.c)
    zeros = zeros[zeros.real > 1e-9]
    v = np.ones(poles.size, dtype=complex)
    for k, p in enumerate(poles):
        for z in zeros:
            v[k] *= (np.conj(z) + p) / (z - p)
    m = 1.0 / (poles[:, None] + np.conj(poles[None, :]))   # Hermitian Pick matrix
    return float(np.real(np.conj(v) @ np.linalg.solve(m, v)))


def baseline_scaling(plant: StateSpace, channels: ChannelSet) -> np.ndarray:
    """Channel scaling seeded from a nominal LQG design (identity weights).

    Returns the Perron scaling of the LQG closed loop's gain matrix,
    normalized to max 1: the exact minimizer of the scaled MS bound for that
    baseline loop. Identity when the gain matrix is reducible. Intended as
    theta0 for dk_iterate on plants whose natural units leave the identity
    scaling in a poor basin.
    """
    _assert_stabilizable_detectable(plant)
    a, b, c = plant.a, plant.b, plant.c
    n = plant.n
    p = scipy.linalg.solve_continuous_are(a, b, np.eye(n), np.eye(plant.n_inputs))
    k = b.T @ p
    pe = scipy.linalg.solve_continuous_are(a.T, c.T, np.eye(n), np.eye(plant.n_outputs))
    lg = pe @ c.T
    ctrl = StateSpace(a - b @ k - lg @ c, lg, -k)
    report = stability_by_spectral_radius(assemble_nominal(plant, ctrl, channels))
    if report.scaling_theta is None:
        return np.ones(plant.n_inputs + plant.n_outputs)
    return report.scaling_theta / np.max(report.scaling_theta)


def dk_iterate(plant: StateSpace, channels: ChannelSet,
               max_rounds: int, theta0=None) -> SynthesisResult:
    """Alternate synthesis (K-step) and scaling refinement (D-step).

    Round zero synthesizes at theta0 (identity when omitted); each further
    round rescales theta at the frozen synthesis variables and
    re-synthesizes. Stops after max_rounds rounds or when gamma improves by
    less than 1e-4 relative. The reported gamma_history is non-increasing: a
    round that fails to improve is discarded. max_rounds = 0 reduces to
    synthesize(theta0).

    The alternation only descends to a fixed point of the scaling map, and
    those are not unique; a theta0 seeded from a baseline design (say the
    Perron scaling of a nominal LQG loop) can land in a far better basin
    than the identity.
    """
    if max_rounds < 0:
        raise ValueError("max_rounds must be nonnegative")
    best = synthesize(plant, channels, theta0)
    history = [best.gamma]
    for _ in range(max_rounds):
        # two scaling candidates, cheapest predicted level first: the exact
        # optimal scaling of the realized loop (Perron vector of its gain
        # matrix; equals the frozen-variable D-step with the Lyapunov
        # certificate refreshed at the loop), then the frozen-variable
        # bisection itself
        candidates = []
        report = stability_by_spectral_radius(best.loop)
        if report.scaling_theta is not None:
            theta_p = report.scaling_theta / np.max(report.scaling_theta)
            # predicted level = rho(gTilde) of the loop, the exact scaled
            # norm at theta_p (1/crit, not the sigma-weighted radius)
            candidates.append((1.0 / report.critical_variance_equal, theta_p))
        step = _d_step(plant, channels, best)
        if step is not None:
            candidates.append((step[1], step[0]))
        if not candidates:
            warnings.warn("D-step infeasible; returning best controller so far",
                          RuntimeWarning, stacklevel=2)
            break
        candidates.sort(key=lambda lt: lt[0])
        cand = None
        for _level, theta in candidates:
            try:
                trial = synthesize(plant, channels, theta)
            except (SynthesisInfeasibleError, ArithmeticError):
                continue
            if trial.gamma < best.gamma:
                cand = trial
                break
        if cand is None:
            warnings.warn("re-synthesis failed to improve at the rescaled "
                          "theta; returning best controller so far",
                          RuntimeWarning, stacklevel=2)
            break
        improved = (best.gamma - cand.gamma) / best.gamma
        best = cand
        history.append(cand.gamma)
        if improved < 1e-4:
            break
    best.gamma_history = history
    return best


# ---------------------------------------------------------------------------
# fundamental limitation of single-input stabilization


def fundamental_limit(a_o, mu: float, sigma: float | None = None) -> LimitReport:
    """Largest input-channel noise level any LTI state feedback tolerates.

    sigma_star = |mu| (2 sum Re lambda_i)^{-1/2} over the open-loop
    eigenvalues with Re > 1e-9; +inf for a Hurwitz open loop. When sigma is
    given, reports whether that level is below the limit.
    """
    mu = float(mu)
    if mu == 0.0:
        raise ValueError("mean channel gain mu must be nonzero")
    a_o = np.atleast_2d(np.asarray(a_o, dtype=float))
    re = np.linalg.eigvals(a_o).real
    unstable_sum = float(np.sum(re[re > HURWITZ_MARGIN]))
    if unstable_sum > 0.0:
        sigma_star = abs(mu) / np.sqrt(2.0 * unstable_sum)
    else:
        sigma_star = np.inf
    stab = None
    if sigma is not None:
        stab = bool(2.0 * sigma ** 2 / mu ** 2 * unstable_sum < 1.0)
    return LimitReport(mean_gain=mu, unstable_eig_sum=unstable_sum,
                       sigma_star=float(sigma_star), stabilizable=stab)


def optimal_state_feedback(a_o, b, mu: float):
    """Stabilizing gain K = -mu B'P from A_o'P + P A_o - mu^2 P B B' P = 0.

    P comes from the stable invariant subspace of the Hamiltonian
    [[A_o, -mu^2 B B'], [0, -A_o']]. Eigenvalues of A_o on the imaginary
    axis (within 1e-9) make the stabilizing solution ill-posed with a zero
    state cost; those are handled by solving the equation for A_o + delta I
    (delta = 1e-6 scale), which strictly stabilizes the original loop at a
    negligible increase in sum-of-poles. Returns (K, P).
    """
    mu = float(mu)
    if mu == 0.0:
        raise ValueError("mean channel gain mu must be nonzero")
    a_o = np.atleast_2d(np.asarray(a_o, dtype=float))
    n = a_o.shape[0]
    b = np.asarray(b, dtype=float).reshape(n, -1)
    if b.shape[1] != 1:
        raise ValueError("optimal_state_feedback handles a single input column")
    bad = _uncontrollable_mode(a_o, b, HURWITZ_MARGIN)
    if bad is not None:
        raise ValueError(
            f"(A_o, B) is not stabilizable: uncontrollable mode at {bad:.6g}")

    re = np.linalg.eigvals(a_o).real
    delta = 0.0
    if np.any(np.abs(re) <= HURWITZ_MARGIN):
        delta = 1e-6 * max(1.0, float(np.linalg.norm(a_o, 2)))
        warnings.warn(
            "A_o has imaginary-axis eigenvalues; solving the Riccati "
            f"equation for A_o + {delta:.2e} I", RuntimeWarning, stacklevel=2)
    a_h = a_o + delta * np.eye(n)
    ham = np.block([[a_h, -mu ** 2 * (b @ b.T)],
                    [np.zeros((n, n)), -a_h.T]])
    _, z, sdim = scipy.linalg.schur(ham, output="real", sort="lhp")
    if sdim != n:
        raise ArithmeticError(
            "no stabilizing Riccati solution: the Hamiltonian has "
            f"{sdim} stable eigenvalues, expected {n}")
    u1, u2 = z[:n, :n], z[n:, :n]
    p = np.linalg.solve(u1.T, u2.T).T
    p = 0.5 * (p + p.T)
    resid = a_h.T @ p + p @ a_h - mu ** 2 * (p @ b) @ (b.T @ p)
    scale = max(1.0, float(np.linalg.norm(a_h.T @ p)),
                float(mu ** 2 * np.linalg.norm((p @ b) @ (b.T @ p))))
    if np.linalg.norm(resid) > 1e-10 * scale:
        raise ArithmeticError(
            f"Riccati residual {np.linalg.norm(resid):.3e} exceeds tolerance")
    k = -mu * b.T @ p
    closed = a_o + mu * b @ k
    if np.max(np.linalg.eigvals(closed).real) >= 0.0:
        raise ArithmeticError("closed loop failed to come out Hurwitz")
    return k, p
