"""Dense small-matrix kernel: eigenvalues, Kronecker algebra, Lyapunov solves,
factorizations and transmission zeros.

Everything here operates on plain numpy arrays and is sized for systems with at
most a few dozen states. Lyapunov equations are solved by explicit n^2 x n^2
vectorization, which is exact and cheap at this scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

__all__ = [
    "Spectrum",
    "eigenvalues",
    "hurwitz_verdict",
    "kron",
    "kron_sum",
    "vec",
    "unvec",
    "solve_lyapunov",
    "spectral_radius_nonneg",
    "perron_vector",
    "cholesky_psd",
    "transmission_zeros",
]

# Stability margin: strict inequalities in the certificates need a numeric band.
HURWITZ_MARGIN = 1e-9


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of a square matrix together with the largest real part."""

    eigenvalues: np.ndarray
    max_real_part: float

    def __len__(self) -> int:
        return len(self.eigenvalues)


def _as_square(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def eigenvalues(m) -> Spectrum:
    """Full spectrum of a square real matrix.

    Returns a :class:`Spectrum`; conjugate pairs come out exactly paired for
    real input because the computation stays in real arithmetic until the
    final 2x2 blocks.
    """
    m = _as_square(m)
    ev = np.linalg.eigvals(m)
    return Spectrum(ev, float(np.max(ev.real)) if len(ev) else -np.inf)


def hurwitz_verdict(m_or_spectrum) -> str:
    """Classify a matrix (or precomputed Spectrum) as 'stable', 'marginal'
    or 'unstable'.

    max Re(lambda) < -1e-9 counts as stable; the +-1e-9 band is reported as
    marginal so callers never silently certify a borderline system.
    """
    s = m_or_spectrum if isinstance(m_or_spectrum, Spectrum) else eigenvalues(m_or_spectrum)
    if s.max_real_part < -HURWITZ_MARGIN:
        return "stable"
    if s.max_real_part <= HURWITZ_MARGIN:
        return "marginal"
    return "unstable"


def kron(a, b) -> np.ndarray:
    """Kronecker product a (x) b."""
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def kron_sum(a, b) -> np.ndarray:
    """Kronecker sum a (+) b = a (x) I + I (x) b for square a, b."""
    a = _as_square(a)
    b = _as_square(b)
    return np.kron(a, np.eye(b.shape[0])) + np.kron(np.eye(a.shape[0]), b)


def vec(m) -> np.ndarray:
    """Column-stacking bijection: vec([[1,2],[3,4]]) = [1,3,2,4]^T."""
    m = np.asarray(m, dtype=float)
    return m.reshape(-1, 1, order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != rows * cols:
        raise ValueError(f"cannot unvec length {v.size} into {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


class ResonantSpectrumError(np.linalg.LinAlgError):
    """a (+) a is singular: some eigenvalue pair of `a` sums to zero."""


def solve_lyapunov(a, rhs) -> np.ndarray:
    """Solve a Q + Q a^T + rhs = 0 for symmetric Q by vectorization.

    Parameters
    ----------
    a : (n, n) array
    rhs : (n, n) array, symmetric

    Returns
    -------
    Q : (n, n) symmetric solution.

    Raises
    ------
    ResonantSpectrumError
        if a (+) a is (numerically) singular, i.e. the spectrum of `a`
        contains a pair summing to zero and the equation is not uniquely
        solvable.

    Notes
    -----
    vec(aQ + Qa^T) = (a (+) a) vec(Q), so the equation collapses to a dense
    n^2 x n^2 linear solve. The residual is checked against
    1e-10 * (||a|| ||Q|| + ||rhs||) before returning.
    """
    a = _as_square(a)
    rhs = _as_square(rhs)
    n = a.shape[0]
    ks = kron_sum(a, a)
    # singularity guard before the solve so the error message is specific
    sv = np.linalg.svd(ks, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1.0):
        raise ResonantSpectrumError(
            "marginal/resonant spectrum: a (+) a is singular, "
            "Lyapunov equation has no unique solution"
        )
    q = unvec(np.linalg.solve(ks, -vec(rhs)), n, n)
    q = 0.5 * (q + q.T)
    resid = np.linalg.norm(a @ q + q @ a.T + rhs)
    scale = np.linalg.norm(a) * np.linalg.norm(q) + np.linalg.norm(rhs)
    if resid > 1e-10 * max(scale, 1e-300):
        raise np.linalg.LinAlgError(
            f"Lyapunov residual {resid:.3e} exceeds tolerance for scale {scale:.3e}"
        )
    return q


def spectral_radius_nonneg(m) -> float:
    """Perron root of an elementwise nonnegative square matrix.

    Equals max |eigenvalue|; a power-iteration fallback guards the (rare)
    case where the QR iteration fails to converge.
    """
    m = _as_square(m)
    if np.any(m < 0):
        raise ValueError("matrix has a negative entry")
    try:
        return float(np.max(np.abs(np.linalg.eigvals(m))))
    except np.linalg.LinAlgError:
        v = np.ones(m.shape[0])
        rho = 0.0
        for _ in range(10000):
            w = m @ v
            nw = np.linalg.norm(w)
            if nw == 0.0:
                return 0.0
            rho, v = nw, w / nw
        return float(rho)


def perron_vector(m, eps_scale: float = 1e-12):
    """Spectral radius and a strictly positive right eigenvector of a
    nonnegative matrix.

    For reducible matrices the Perron vector can have zero components; a tiny
    uniform perturbation eps * max(m) * ones is added so the returned vector
    is strictly positive and usable as a scaling. Returns (rho, v) with
    v normalized to unit infinity norm; rho is that of the unperturbed matrix.
    """
    m = _as_square(m)
    if np.any(m < 0):
        raise ValueError("matrix has a negative entry")
    rho = spectral_radius_nonneg(m)
    scale = float(np.max(m)) if m.size else 0.0
    mp = m + (eps_scale * scale if scale > 0 else eps_scale) * np.ones_like(m)
    ev, vecs = np.linalg.eig(mp)
    k = int(np.argmax(ev.real))
    v = np.abs(vecs[:, k].real)
    v = v / np.max(v)
    # Perron theory for positive matrices guarantees positivity; clip guards roundoff
    v = np.maximum(v, eps_scale)
    return rho, v


def cholesky_psd(m, eps: float = 1e-12):
    """Lower-triangular L with L L^T = m when m is positive definite
    (beyond eps * ||m|| on the spectrum); returns None otherwise.

    Indefinite input is a legitimate outcome for callers probing feasibility,
    so it is reported via None instead of an exception.
    """
    m = _as_square(m)
    m = 0.5 * (m + m.T)
    lam_min = float(np.min(np.linalg.eigvalsh(m)))
    if lam_min <= eps * max(1.0, float(np.linalg.norm(m, 2))):
        return None
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return None


def transmission_zeros(a, b, c, beta_tol: float = 1e-10) -> np.ndarray:
    """Finite transmission zeros of a strictly proper SISO system (a, b, c).

    The zeros are the finite generalized eigenvalues of the pencil

        ([[A, B], [C, 0]], diag(I, 0)).

    Eigenvalue pairs (alpha, beta) are normalized to unit modulus and those
    with |beta| <= beta_tol are treated as infinite and discarded.
    """
    a = _as_square(a)
    b = np.asarray(b, dtype=float).reshape(a.shape[0], -1)
    c = np.asarray(c, dtype=float).reshape(-1, a.shape[0])
    if b.shape[1] != 1 or c.shape[0] != 1:
        raise ValueError("transmission zeros implemented for SISO systems only")
    n = a.shape[0]
    f = np.block([[a, b], [c, np.zeros((1, 1))]])
    e = np.zeros((n + 1, n + 1))
    e[:n, :n] = np.eye(n)
    alpha, beta = sla.eig(f, e, right=False, homogeneous_eigvals=True)
    mods = np.hypot(np.abs(alpha), np.abs(beta))
    mods[mods == 0.0] = 1.0
    alpha, beta = alpha / mods, beta / mods
    finite = np.abs(beta) > beta_tol
    zeros = alpha[finite] / beta[finite]
    return np.sort_complex(zeros)
