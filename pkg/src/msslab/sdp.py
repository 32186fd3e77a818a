"""Small dense LMI engine: feasibility and linear-objective minimization over
symmetric-matrix variables.

The solver is a primal interior-point method on the log-det barrier. Problems
are assembled as affine symmetric expressions in a handful of matrix/diagonal/
scalar variables (a few hundred scalar unknowns at most), so the Newton system
is formed densely via a Schur-style accumulation of trace terms.

Feasibility is posed as margin maximization: maximize t subject to
F_j(x) + t I <= 0 plus a coordinate box |x_k| <= kappa. The box makes the
phase-1 problem bounded even for homogeneous LMIs (where any feasible point
can be scaled up indefinitely); infeasibility evidence is an optimal margin
at or below zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Expr",
    "VarRef",
    "LmiProblem",
    "SdpSolution",
    "block",
    "trace_of",
    "solve_feasibility",
    "solve_minimize",
    "check_solution",
]


# ---------------------------------------------------------------------------
# affine matrix expressions


class Expr:
    """Affine matrix expression: const + sum_k x_k T[k], with x the scalar
    coordinates of the problem variables.

    lin maps a variable name to a tensor of shape (n_coords, rows, cols).
    Supports +, -, scalar *, transpose, and matmul with constant matrices.
    """

    __slots__ = ("shape", "const", "lin")

    # defer numpy binary ops to this class so ndarray @ Expr lands in __rmatmul__
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, shape, const=None, lin=None):
        self.shape = tuple(shape)
        self.const = np.zeros(self.shape) if const is None else np.asarray(const, float)
        if self.const.shape != self.shape:
            raise ValueError(f"const shape {self.const.shape} != {self.shape}")
        self.lin = {} if lin is None else lin

    # -- coercion

    @staticmethod
    def wrap(x) -> "Expr":
        if isinstance(x, Expr):
            return x
        if isinstance(x, VarRef):
            return x.expr
        m = np.atleast_2d(np.asarray(x, float))
        return Expr(m.shape, m)

    # -- algebra

    def __add__(self, other):
        other = Expr.wrap(other)
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        lin = {k: v.copy() for k, v in self.lin.items()}
        for k, v in other.lin.items():
            lin[k] = lin[k] + v if k in lin else v
        return Expr(self.shape, self.const + other.const, lin)

    __radd__ = __add__

    def __neg__(self):
        return Expr(self.shape, -self.const, {k: -v for k, v in self.lin.items()})

    def __sub__(self, other):
        return self + (-Expr.wrap(other))

    def __rsub__(self, other):
        return Expr.wrap(other) + (-self)

    def __mul__(self, s):
        s = float(s)
        return Expr(self.shape, s * self.const, {k: s * v for k, v in self.lin.items()})

    __rmul__ = __mul__

    @property
    def T(self) -> "Expr":
        return Expr(self.shape[::-1], self.const.T,
                    {k: np.swapaxes(v, 1, 2) for k, v in self.lin.items()})

    def __matmul__(self, right):
        right = Expr.wrap(right)
        if right.lin:
            if self.lin:
                raise ValueError("product of two variable expressions is not affine")
            return (right.T @ Expr(self.shape[::-1], self.const.T)).T
        r = right.const
        if self.shape[1] != r.shape[0]:
            raise ValueError(f"matmul shape mismatch {self.shape} x {r.shape}")
        return Expr((self.shape[0], r.shape[1]), self.const @ r,
                    {k: v @ r[None, :, :] for k, v in self.lin.items()})

    def __rmatmul__(self, left):
        left = np.atleast_2d(np.asarray(left, float))
        if left.shape[1] != self.shape[0]:
            raise ValueError(f"matmul shape mismatch {left.shape} x {self.shape}")
        return Expr((left.shape[0], self.shape[1]), left @ self.const,
                    {k: left[None, :, :] @ v for k, v in self.lin.items()})

    def value(self, coords: dict) -> np.ndarray:
        """Evaluate at a coordinate assignment {var name: 1-d array}."""
        out = self.const.copy()
        for k, t in self.lin.items():
            out += np.tensordot(coords[k], t, axes=(0, 0))
        return out


def block(rows) -> Expr:
    """Assemble a block matrix of Expr / arrays, like np.block for affine
    expressions."""
    rows = [[Expr.wrap(c) for c in r] for r in rows]
    row_h = [r[0].shape[0] for r in rows]
    col_w = [c.shape[1] for c in rows[0]]
    for r in rows:
        if [c.shape[1] for c in r] != col_w or len({c.shape[0] for c in r}) != 1:
            raise ValueError("ragged block structure")
    R, C = sum(row_h), sum(col_w)
    const = np.block([[c.const for c in r] for r in rows])
    names = {k for r in rows for c in r for k in c.lin}
    lin = {}
    for name in names:
        nk = next(len(c.lin[name]) for r in rows for c in r if name in c.lin)
        t = np.zeros((nk, R, C))
        i = 0
        for r, h in zip(rows, row_h):
            j = 0
            for c, w in zip(r, col_w):
                if name in c.lin:
                    t[:, i:i + h, j:j + w] = c.lin[name]
                j += w
            i += h
        lin[name] = t
    return Expr((R, C), const, lin)


def trace_of(expr) -> Expr:
    expr = Expr.wrap(expr)
    if expr.shape[0] != expr.shape[1]:
        raise ValueError("trace of a non-square expression")
    return Expr((1, 1), [[np.trace(expr.const)]],
                {k: np.trace(v, axis1=1, axis2=2).reshape(-1, 1, 1)
                 for k, v in expr.lin.items()})


# ---------------------------------------------------------------------------
# variables


class VarRef:
    """Handle to a problem variable (symmetric matrix, diagonal matrix,
    scalar, or a general rectangular matrix)."""

    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, name: str, dim, structure: str):
        self.name = name
        self.structure = structure
        if structure == "full":
            r, c = dim
            self.shape = (int(r), int(c))
            self.n_coords = r * c
        elif structure in ("sym", "diag", "scalar"):
            self.shape = (int(dim), int(dim))
            if structure == "sym":
                self.n_coords = dim * (dim + 1) // 2
            elif structure == "diag":
                self.n_coords = dim
            else:
                self.n_coords = 1
        else:
            raise ValueError(f"unknown structure {structure!r}")
        self.dim = self.shape[0]
        self._basis = None

    @property
    def basis(self) -> np.ndarray:
        """(n_coords, rows, cols) basis so that V = sum_k x_k B_k."""
        if self._basis is None:
            d = self.dim
            if self.structure == "sym":
                b = np.zeros((self.n_coords, d, d))
                k = 0
                for i in range(d):
                    for j in range(i, d):
                        b[k, i, j] = 1.0
                        b[k, j, i] = 1.0
                        if i == j:
                            b[k, i, j] = 1.0
                        k += 1
            elif self.structure == "diag":
                b = np.zeros((d, d, d))
                for i in range(d):
                    b[i, i, i] = 1.0
            elif self.structure == "full":
                b = np.eye(self.n_coords).reshape((self.n_coords,) + self.shape)
            else:
                b = np.ones((1, 1, 1))
            self._basis = b
        return self._basis

    @property
    def expr(self) -> Expr:
        return Expr(self.shape, lin={self.name: self.basis})

    def eye(self, dim: int) -> Expr:
        """For a scalar variable g: the expression g * I_dim."""
        if self.structure != "scalar":
            raise ValueError("eye() is only defined for scalar variables")
        return Expr((dim, dim), lin={self.name: np.eye(dim)[None, :, :]})

    def to_matrix(self, coords: np.ndarray) -> np.ndarray:
        return np.tensordot(coords, self.basis, axes=(0, 0))

    # convenience so VarRef participates directly in expression algebra
    def __add__(self, o): return self.expr + o
    def __radd__(self, o): return Expr.wrap(o) + self.expr
    def __sub__(self, o): return self.expr - o
    def __rsub__(self, o): return Expr.wrap(o) - self.expr
    def __neg__(self): return -self.expr
    def __mul__(self, s): return self.expr * s
    __rmul__ = __mul__
    def __matmul__(self, o): return self.expr @ o
    def __rmatmul__(self, o): return Expr.wrap(o) @ self.expr
    @property
    def T(self): return self.expr.T


@dataclass
class _Constraint:
    name: str
    const: np.ndarray          # K_j
    tensors: dict              # var name -> (n_coords, d, d)
    scale: float               # strictness reference


@dataclass
class SdpSolution:
    values: dict
    objective: float | None
    status: str
    worst_constraint_margin: float
    margins: list = field(default_factory=list)
    newton_steps: int = 0
    coords: dict = field(default_factory=dict)


class LmiProblem:
    """Container for variables, <0 constraints and an optional linear
    objective. All constraints are stored in the form F(x) < 0."""

    def __init__(self):
        self.variables: list[VarRef] = []
        self.constraints: list[_Constraint] = []
        self.objective: Expr | None = None
        self._names = set()

    def _add(self, v: VarRef) -> VarRef:
        if v.name in self._names:
            raise ValueError(f"duplicate variable {v.name!r}")
        self._names.add(v.name)
        self.variables.append(v)
        return v

    def sym(self, name: str, dim: int) -> VarRef:
        return self._add(VarRef(name, dim, "sym"))

    def diag(self, name: str, dim: int) -> VarRef:
        return self._add(VarRef(name, dim, "diag"))

    def scalar(self, name: str) -> VarRef:
        return self._add(VarRef(name, 1, "scalar"))

    def full(self, name: str, rows: int, cols: int) -> VarRef:
        """General (unstructured) rows x cols matrix variable."""
        return self._add(VarRef(name, (rows, cols), "full"))

    def require_neg(self, expr, name: str = "") -> None:
        """Add constraint expr < 0 (negative definite)."""
        expr = Expr.wrap(expr)
        if expr.shape[0] != expr.shape[1]:
            raise ValueError("constraints must be square")
        asym = np.max(np.abs(expr.const - expr.const.T), initial=0.0)
        ref = max(1.0, float(np.max(np.abs(expr.const), initial=0.0)))
        if asym > 1e-8 * ref:
            raise ValueError(f"constraint {name!r} constant term is not symmetric")
        tensors = {}
        for k, t in expr.lin.items():
            ta = np.swapaxes(t, 1, 2)
            if np.max(np.abs(t - ta)) > 1e-8 * max(1.0, np.max(np.abs(t))):
                raise ValueError(f"constraint {name!r} is not symmetric in {k}")
            tensors[k] = 0.5 * (t + ta)
        self.constraints.append(_Constraint(
            name or f"c{len(self.constraints)}",
            0.5 * (expr.const + expr.const.T), tensors, ref))

    def require_pos(self, expr, name: str = "") -> None:
        """Add constraint expr > 0 (positive definite)."""
        self.require_neg(-Expr.wrap(expr), name)

    def minimize(self, expr) -> None:
        expr = Expr.wrap(expr)
        if expr.shape != (1, 1):
            raise ValueError("objective must be a 1x1 expression (use trace_of)")
        self.objective = expr

    # -- flat coordinate bookkeeping

    def _layout(self):
        offs, n = {}, 0
        for v in self.variables:
            offs[v.name] = (n, n + v.n_coords)
            n += v.n_coords
        return offs, n

    def _flat_constraints(self, offs, n):
        """Per constraint: (K, G) with G shape (n, d, d)."""
        out = []
        for c in self.constraints:
            d = c.const.shape[0]
            g = np.zeros((n, d, d))
            for k, t in c.tensors.items():
                a, b = offs[k]
                g[a:b] = t
            out.append((c.const, g))
        return out

    def _objective_vector(self, offs, n):
        c = np.zeros(n)
        c0 = 0.0
        if self.objective is not None:
            c0 = float(self.objective.const[0, 0])
            for k, t in self.objective.lin.items():
                a, b = offs[k]
                c[a:b] = t[:, 0, 0]
        return c, c0

    def _package(self, x, offs, objective, status, steps) -> SdpSolution:
        coords = {v.name: x[offs[v.name][0]:offs[v.name][1]].copy()
                  for v in self.variables}
        values = {}
        for v in self.variables:
            if v.structure == "scalar":
                values[v.name] = float(coords[v.name][0])
            else:
                values[v.name] = v.to_matrix(coords[v.name])
        margins = []
        for c in self.constraints:
            f = c.const.copy()
            for k, t in c.tensors.items():
                f += np.tensordot(coords[k], t, axes=(0, 0))
            margins.append(float(-np.max(np.linalg.eigvalsh(f))))
        worst = min(margins) if margins else np.inf
        return SdpSolution(values, objective, status, worst, margins, steps, coords)


# ---------------------------------------------------------------------------
# barrier machinery


def _slacks(cons, x, t):
    """S_j = -(K_j + G_j x + t I); returns None when any S_j is not PD."""
    out = []
    for K, G in cons:
        f = K + np.tensordot(x, G, axes=(0, 0))
        if t != 0.0:
            f = f + t * np.eye(f.shape[0])
        s = -f
        try:
            L = np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            return None
        out.append((s, L))
    return out


def _barrier_value(cons, x, t, kappa, tau, c_vec, use_t):
    sl = _slacks(cons, x, t)
    if sl is None or np.any(np.abs(x) >= kappa):
        return None, None
    val = tau * (float(c_vec @ x) + (-t if use_t else 0.0))
    for s, L in sl:
        val -= 2.0 * float(np.sum(np.log(np.diag(L))))
    val -= float(np.sum(np.log(kappa - x) + np.log(kappa + x)))
    return val, sl


def _newton_loop(cons, c_vec, x, t, kappa, tau, use_t, max_steps, tol=5e-5,
                 early_stop=None):
    """Inner Newton iterations on tau*objective + barrier.

    Returns (x, t, #steps, centered): centered means the Newton decrement^2
    fell below 2*tol, i.e. the iterate is well inside the region where the
    nu/tau duality-gap bound of the outer loop is valid. A stalled line
    search leaves centered False so the caller cannot certify from it.
    """
    n = len(x)
    steps = 0
    centered = False
    while steps < max_steps:
        if early_stop is not None and early_stop(x, t):
            break
        val, sl = _barrier_value(cons, x, t, kappa, tau, c_vec, use_t)
        if val is None:
            raise np.linalg.LinAlgError("barrier evaluated outside the domain")
        dim = n + (1 if use_t else 0)
        grad = np.zeros(dim)
        hess = np.zeros((dim, dim))
        grad[:n] = tau * c_vec
        if use_t:
            grad[n] = -tau
        # box barrier terms (diagonal)
        grad[:n] += 1.0 / (kappa - x) - 1.0 / (kappa + x)
        hess[:n, :n] += np.diag(1.0 / (kappa - x) ** 2 + 1.0 / (kappa + x) ** 2)
        for (s, L), (K, G) in zip(sl, cons):
            w = np.linalg.inv(s)
            w = 0.5 * (w + w.T)
            # grad_k = tr(W G_k); H_kl = tr(W G_k W G_l) = <W G_k W, G_l>
            grad[:n] += np.einsum("kab,ab->k", G, w)
            q = w[None, :, :] @ G @ w[None, :, :]
            hess[:n, :n] += q.reshape(n, -1) @ G.reshape(n, -1).T
            if use_t:
                trw = float(np.trace(w))
                grad[n] += trw
                hess[:n, n] += np.trace(q, axis1=1, axis2=2)
                hess[n, :n] = hess[:n, n]
                hess[n, n] += float(np.sum(w * w))
        # the barrier Hessian is PD analytically; fall back to least squares
        # only if roundoff makes it numerically singular
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, -grad, rcond=None)[0]
        decrement = float(-grad @ step)
        steps += 1
        if decrement <= 2 * tol:
            centered = True
            break
        alpha = 1.0
        ok = False
        while alpha > 1e-13:
            xn = x + alpha * step[:n]
            tn = t + alpha * step[n] if use_t else t
            vn, _ = _barrier_value(cons, xn, tn, kappa, tau, c_vec, use_t)
            if vn is not None and vn <= val + 0.25 * alpha * float(grad @ step):
                x, t = xn, tn
                ok = True
                break
            alpha *= 0.5
        if not ok:
            break
    return x, t, steps, centered


def _path_follow(cons, c_vec, x0, t0, kappa, gap_rule, use_t,
                 newton_cap, early_stop=None, inner_cap=60):
    """Outer barrier loop.

    gap_rule(nu, tau, x, t) decides when the duality-gap estimate nu/tau is
    small enough; early_stop(x, t) (checked every Newton step) allows callers
    to bail out once a good-enough interior point appears.

    Returns (x, t, gap_bound, status, newton steps used).
    """
    nu = sum(K.shape[0] for K, _ in cons) + 2 * len(x0)
    tau = 1.0
    x, t = x0.copy(), t0
    used = 0
    status = "optimal"
    while True:
        x, t, st, centered = _newton_loop(
            cons, c_vec, x, t, kappa, tau, use_t,
            max_steps=min(inner_cap, newton_cap - used),
            early_stop=early_stop)
        used += st
        if early_stop is not None and early_stop(x, t):
            break
        # the nu/tau gap bound only holds at a centered point; quitting on
        # it after a stalled Newton loop would manufacture certificates
        if centered and gap_rule(nu, tau, x, t):
            break
        if used >= newton_cap:
            status = "maxIterations"
            break
        tau *= 10.0
    return x, t, nu / tau, status, used


DEFAULT_KAPPA = 1e6
NEWTON_CAP = 200


def solve_feasibility(prob: LmiProblem, kappa: float = DEFAULT_KAPPA,
                      gap_tol: float = 1e-9) -> SdpSolution:
    """Max-margin feasibility: maximize t s.t. F_j(x) + tI < 0, |x| <= kappa.

    Strictly feasible problems return status 'feasible' with the margin-
    maximizing point; an optimal margin <= strictness threshold is reported
    as 'infeasible'.
    """
    if prob.objective is not None:
        raise ValueError("solve_feasibility expects no objective")
    offs, n = prob._layout()
    cons = prob._flat_constraints(offs, n)
    if not cons:
        return prob._package(np.zeros(n), offs, None, "feasible", 0)
    x0 = np.zeros(n)
    t0 = -max(np.max(np.linalg.eigvalsh(K)) for K, _ in cons) - 1.0
    c_vec = np.zeros(n)
    # follow the margin to ~6 digits relative (or gap_tol absolute near zero)
    rule = lambda nu, tau, x, t: nu / tau <= max(gap_tol, 1e-6 * abs(t))
    x, t, gap, status, used = _path_follow(cons, c_vec, x0, t0, kappa,
                                           rule, True, NEWTON_CAP)
    eps = max(1e-9 * c.scale for c in prob.constraints)
    if status != "maxIterations":
        if t > eps:
            status = "feasible"
        elif t + gap <= eps:
            status = "infeasible"
        else:
            # margin pinched at the decision threshold: undecidable at this gap
            status = "maxIterations"
    sol = prob._package(x, offs, None, status, used)
    if status == "feasible" and sol.worst_constraint_margin <= 0:
        sol.status = "infeasible"
    return sol


def solve_minimize(prob: LmiProblem, kappa: float = DEFAULT_KAPPA,
                   gap_tol: float = 1e-7) -> SdpSolution:
    """Linear-objective minimization by barrier path-following.

    Phase 1 is the same max-margin program as solve_feasibility with an early
    exit once a comfortably interior point is found. The duality-gap estimate
    nu/tau must fall below gap_tol * (1 + |objective|).
    """
    if prob.objective is None:
        raise ValueError("solve_minimize requires an objective")
    offs, n = prob._layout()
    cons = prob._flat_constraints(offs, n)
    c_vec, c0 = prob._objective_vector(offs, n)
    # phase 1: bail out as soon as a comfortably interior point appears
    x0 = np.zeros(n)
    t0 = -max(np.max(np.linalg.eigvalsh(K)) for K, _ in cons) - 1.0
    eps = max(1e-9 * c.scale for c in prob.constraints)
    margin_goal = max(1e-3, 1000 * eps)
    rule1 = lambda nu, tau, x, t: nu / tau <= max(1e-9, 1e-6 * abs(t))
    x1, t1, gap1, st1, used1 = _path_follow(
        cons, np.zeros(n), x0, t0, kappa, rule1, True, NEWTON_CAP,
        early_stop=lambda x, t: t >= margin_goal)
    if t1 <= eps:
        if st1 == "maxIterations" or t1 + gap1 > eps:
            return prob._package(x1, offs, None, "maxIterations", used1)
        return prob._package(x1, offs, None, "infeasible", used1)
    # phase 2 from the strictly interior phase-1 point; the gap test tracks
    # the objective magnitude at the current iterate
    rule2 = lambda nu, tau, x, t: nu / tau <= gap_tol * (1.0 + abs(float(c_vec @ x) + c0))
    x2, _, gap2, st2, used2 = _path_follow(
        cons, c_vec, x1, 0.0, kappa * 100, rule2,
        False, NEWTON_CAP - used1)
    status = "optimal" if st2 == "optimal" else st2
    if np.any(np.abs(x2) > 0.99 * kappa * 100):
        status = "unbounded"
    obj = float(c_vec @ x2) + c0
    return prob._package(x2, offs, obj, status, used1 + used2)


def check_solution(prob: LmiProblem, sol: SdpSolution) -> list:
    """Independent re-evaluation of every constraint's margin -max eig F_j."""
    margins = []
    for c in prob.constraints:
        f = c.const.copy()
        for k, t in c.tensors.items():
            f += np.tensordot(sol.coords[k], t, axes=(0, 0))
        margins.append(float(-np.max(np.linalg.eigvalsh(f))))
    return margins
