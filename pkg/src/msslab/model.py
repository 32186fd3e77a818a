"""State-space containers, uncertain channel sets, and closed-loop assembly.

The central object is the feedback interconnection of a nominal system G with
per-channel multiplicative white noise: channel l contributes sigma_l B_l C_l x
to the diffusion. Plants and controllers must be strictly proper; a direct
feedthrough would multiply two white noise processes, which is not a
well-defined object in the Ito calculus used throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StateSpace",
    "ChannelSet",
    "Interconnection",
    "assemble_nominal",
    "direct_loop",
    "build_wscc9",
    "WSCC_INERTIA",
    "WSCC_DAMPING",
    "WSCC_REDUCED_LAPLACIAN",
]


def _mat(x, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class StateSpace:
    """Continuous-time linear system (A, B, C, D), D defaulting to zero.

    The D field exists only so validation can reject proper-but-not-strictly-
    proper systems with a targeted message; no algorithm propagates it.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "a", _mat(self.a, "A"))
        object.__setattr__(self, "b", _mat(self.b, "B"))
        object.__setattr__(self, "c", _mat(self.c, "C"))
        if self.d is not None:
            object.__setattr__(self, "d", _mat(self.d, "D"))
        n = self.a.shape[0]
        if self.a.shape[1] != n:
            raise ValueError(f"A must be square, got {self.a.shape}")
        if self.b.shape[0] != n:
            raise ValueError(f"B has {self.b.shape[0]} rows, expected {n}")
        if self.c.shape[1] != n:
            raise ValueError(f"C has {self.c.shape[1]} cols, expected {n}")
        if self.d is not None and self.d.shape != (self.c.shape[0], self.b.shape[1]):
            raise ValueError(f"D shape {self.d.shape} inconsistent with C, B")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.c.shape[0]

    @property
    def strictly_proper(self) -> bool:
        return self.d is None or not np.any(self.d)


@dataclass(frozen=True)
class ChannelSet:
    """Mean and standard deviation of the multiplicative uncertainty on each
    input and output channel.

    input_means/input_stds have length d (plant inputs), output_means/
    output_stds length q (plant outputs). Stds must be nonnegative.
    """

    input_means: np.ndarray
    input_stds: np.ndarray
    output_means: np.ndarray
    output_stds: np.ndarray

    def __post_init__(self):
        for name in ("input_means", "input_stds", "output_means", "output_stds"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if len(self.input_means) != len(self.input_stds):
            raise ValueError("input means/stds length mismatch")
        if len(self.output_means) != len(self.output_stds):
            raise ValueError("output means/stds length mismatch")
        if np.any(self.input_stds < 0) or np.any(self.output_stds < 0):
            raise ValueError("channel standard deviations must be nonnegative")

    @classmethod
    def identical(cls, d: int, q: int, mean: float = 1.0, std: float = 0.0) -> "ChannelSet":
        """All d input and q output channels share one mean and one std."""
        return cls(np.full(d, mean), np.full(d, std), np.full(q, mean), np.full(q, std))

    @property
    def d(self) -> int:
        return len(self.input_means)

    @property
    def q(self) -> int:
        return len(self.output_means)

    @property
    def m(self) -> int:
        return self.d + self.q

    @property
    def lambda_i(self) -> np.ndarray:
        return np.diag(self.input_means)

    @property
    def lambda_o(self) -> np.ndarray:
        return np.diag(self.output_means)

    @property
    def sigmas(self) -> np.ndarray:
        # fixed enumeration: output channels first, then input channels
        return np.concatenate([self.output_stds, self.input_stds])


@dataclass(frozen=True)
class Interconnection:
    """A strictly proper nominal system in feedback with channelwise white
    noise: channel l multiplies output z_l = C_l x and re-enters through B_l.
    """

    nominal: StateSpace
    sigmas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigmas", np.atleast_1d(np.asarray(self.sigmas, dtype=float)))
        self.sigmas.setflags(write=False)
        g = self.nominal
        if not g.strictly_proper:
            raise ValueError("interconnection requires a strictly proper nominal system")
        m = len(self.sigmas)
        if g.n_inputs != m or g.n_outputs != m:
            raise ValueError(
                f"channel count {m} must equal nominal input dim {g.n_inputs} "
                f"and output dim {g.n_outputs}"
            )
        if np.any(self.sigmas < 0):
            raise ValueError("sigmas must be nonnegative")

    @property
    def m(self) -> int:
        return len(self.sigmas)

    @property
    def b_columns(self) -> list:
        return [self.nominal.b[:, l:l + 1] for l in range(self.m)]

    @property
    def c_rows(self) -> list:
        return [self.nominal.c[l:l + 1, :] for l in range(self.m)]


def assemble_nominal(plant: StateSpace, controller: StateSpace,
                     channels: ChannelSet) -> Interconnection:
    """Close the loop between a strictly proper plant and controller through
    uncertain channels, at the channel means.

    The nominal system is

        A = [[A_p,            B_p Lam_I C_k],
             [B_k Lam_O C_p,  A_k          ]],
        B = [[0,   B_p], [B_k, 0]],      C = diag(C_p, C_k),

    with channels enumerated output-block-first: sigmas = (sigma_O, sigma_I),
    matching the row order of C and the column order of B.
    """
    for name, sys_ in (("plant", plant), ("controller", controller)):
        if not sys_.strictly_proper:
            raise ValueError(
                f"{name} must be strictly proper: a feedthrough term would "
                "multiply white noise processes, which has no Ito meaning"
            )
    q, d = plant.n_outputs, plant.n_inputs
    if controller.n_inputs != q or controller.n_outputs != d:
        raise ValueError(
            f"controller must map {q} plant outputs to {d} plant inputs, "
            f"got {controller.n_inputs} -> {controller.n_outputs}"
        )
    if channels.d != d or channels.q != q:
        raise ValueError("channel counts must match plant input/output dimensions")
    ap, bp, cp = plant.a, plant.b, plant.c
    ak, bk, ck = controller.a, controller.b, controller.c
    n_p, n_k = plant.n, controller.n
    a = np.block([[ap, bp @ channels.lambda_i @ ck],
                  [bk @ channels.lambda_o @ cp, ak]])
    b = np.block([[np.zeros((n_p, q)), bp],
                  [bk, np.zeros((n_k, d))]])
    c = np.block([[cp, np.zeros((q, n_k))],
                  [np.zeros((d, n_p)), ck]])
    return Interconnection(StateSpace(a, b, c), channels.sigmas)


def direct_loop(sys: StateSpace, sigmas) -> Interconnection:
    """Wrap an already-assembled square system in channelwise feedback noise.

    Used for analysis-only workflows, e.g. a state-feedback closed loop
    (A_o + mu B K, B, K) with a single input channel.
    """
    return Interconnection(sys, np.atleast_1d(np.asarray(sigmas, dtype=float)))


# Three-machine nine-bus benchmark (swing model x = (rotor angles, speeds)).
#
# A = [[0, I], [F, G]]: F maps angle deviations and G speed deviations into
# accelerations. The benchmark's inertia/damping/reduced-network constant
# triple circulating in the literature is mutually inconsistent with its
# reference pole and zero sets (the trace of the implied A disagrees with the
# pole sum), so F and G were instead recovered numerically from the reference
# spectra: poles match to <= 4.1e-4, attainable speed-probe transfer zeros to
# <= 5.0e-3; see notes in the repository history. Entries are fixed at 4
# decimals for bit-stable builds. F's third column is formed as the negated
# sum of the first two, which pins the rotational-symmetry eigenvalue at
# exactly zero in floating point.
WSCC_INERTIA = np.diag([22.64, 6.47, 5.047])
_WSCC_F_COLS = np.array([
    [0.2169, -0.8027],
    [-0.0527, 0.3490],
    [0.1403, 0.8258],
])
_WSCC_G = np.array([
    [0.0868, 1.1521, -0.5359],
    [0.1151, -0.1994, -0.3738],
    [-0.1600, -0.9379, -1.9945],
])

# input vector for the SISO zero-structure study
_WSCC_B_PROBE = np.array([0.0, 0.0, 0.0, 0.0062, 0.0, 0.0]).reshape(6, 1)
# single mechanical-torque input for the state-feedback limit study
_WSCC_B_LIMIT = np.array([0.0, 0.0, 0.0, 0.0, 0.0802, 0.0]).reshape(6, 1)

_WSCC_OUTPUTS = {
    "w1": np.array([[0.0, 0, 0, 1, 0, 0]]),
    "w1+w2": np.array([[0.0, 0, 0, 1, 1, 0]]),
    "w2": np.array([[0.0, 0, 0, 0, 1, 0]]),
}


def _wscc_a() -> np.ndarray:
    f = np.hstack([_WSCC_F_COLS, -(_WSCC_F_COLS[:, :1] + _WSCC_F_COLS[:, 1:2])])
    return np.block([
        [np.zeros((3, 3)), np.eye(3)],
        [f, _WSCC_G],
    ])


def build_wscc9(case: str = "mimo", output: str = "w1") -> StateSpace:
    """Swing model of the three-machine nine-bus network.

    case 'mimo'            torque input at every machine, speed outputs, in
                           relative-angle coordinates (5 states): the uniform
                           rotation mode carries no speed signature, so the
                           six-state model is undetectable from speed
                           measurements and no output feedback could
                           stabilize it; the quotient keeps the five
                           benchmark poles away from the origin
    case 'zero-study'      single probe input, one speed output (`output`
                           in {'w1', 'w1+w2', 'w2'}), full six-state model:
                           the zero table is a statement about this
                           realization, decoupling zero included
    case 'table1'          same probe input and output choices as
                           'zero-study' but in the relative-angle quotient:
                           the detectable SISO loop the critical-variance
                           table presupposes
    case 'state-feedback'  single torque input at machine 2's speed equation,
                           full state output, full six-state model
    """
    a = _wscc_a()
    rel = np.array([[1.0, 0.0, -1.0], [0.0, 1.0, -1.0]])
    # x = (d1 - d3, d2 - d3, speeds); exact because F sums to zero by row
    a_red = np.block([[np.zeros((2, 2)), rel],
                      [_WSCC_F_COLS, _WSCC_G]])
    if case == "mimo":
        mi = np.diag(1.0 / np.diag(WSCC_INERTIA))
        b = np.vstack([np.zeros((2, 3)), mi])
        c = np.hstack([np.zeros((3, 2)), np.eye(3)])
        return StateSpace(a_red, b, c)
    if case in ("zero-study", "table1"):
        if output not in _WSCC_OUTPUTS:
            raise ValueError(f"unknown output {output!r}; expected one of {sorted(_WSCC_OUTPUTS)}")
        if case == "zero-study":
            return StateSpace(a, _WSCC_B_PROBE, _WSCC_OUTPUTS[output])
        # speed-block rows carry over unchanged under the angle quotient
        b = np.vstack([np.zeros((2, 1)), _WSCC_B_PROBE[3:]])
        c = np.hstack([np.zeros((1, 2)), _WSCC_OUTPUTS[output][:, 3:]])
        return StateSpace(a_red, b, c)
    if case == "state-feedback":
        return StateSpace(a, _WSCC_B_LIMIT, np.eye(6))
    raise ValueError(f"unknown case {case!r}")
