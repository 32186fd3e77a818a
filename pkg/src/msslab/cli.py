"""Command-line front end: scenario files in, machine-readable reports out.

Five workflows: `analyze` (the three stability tests on one interconnection),
`synthesize` (robust output feedback, optionally with scaling iteration),
`simulate` (Monte Carlo against the covariance ODE, optional variance sweep),
`limits` (the single-input state-feedback variance limit), and `wscc9` (the
embedded three-machine benchmark tasks).

Scenarios are JSON with a mandatory schema_version and top-level keys
plant/controller/channels/options/tasks (or a direct interconnection);
matrices are row-major nested arrays. Reports are JSON with every float at 9
significant digits; non-finite values are encoded as the strings "inf",
"-inf", "nan" so the documents stay strict JSON. CSVs keep full round-trip
precision. Exit codes: 0 success/stable, 2 analyzed-unstable, 1 input or
solver error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys


def _cap_threads() -> None:
    cap = os.environ.get("MSSLAB_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


# must run before numpy first loads its BLAS; the package __init__ imports
# nothing, so this module top is early enough
_cap_threads()

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .linalg import HURWITZ_MARGIN, eigenvalues, transmission_zeros  # noqa: E402
from .model import (ChannelSet, Interconnection, StateSpace,  # noqa: E402
                    assemble_nominal, build_wscc9)
from .moments import (DivergenceError, NotMeanSquareStableError,  # noqa: E402
                      is_mean_square_stable, lyapunov_certificate,
                      stability_certificate_problem)
from .msnorm import stability_by_spectral_radius  # noqa: E402
from .sdp import SdpSolution, check_solution  # noqa: E402
from .sim import SimConfig, compare_with_moments, sweep_variance  # noqa: E402
from .synthesis import (SynthesisInfeasibleError, baseline_scaling,  # noqa: E402
                        dk_iterate, fundamental_limit, input_gain_floor,
                        optimal_state_feedback, synthesize)

__all__ = ["main"]

_SCHEMA_VERSION = 1
_WSCC_TASKS = ("poles", "zeros", "table1", "synth", "limits", "sweep")
_WSCC_OUTPUT_ROWS = ("w1", "w1+w2", "w2")


# ---------------------------------------------------------------------------
# report plumbing


def _round9(x):
    """Recursively coerce to JSON-safe values with 9 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return float(f"{v:.9g}")
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": _round9(x.real), "im": _round9(x.imag)}
    if isinstance(x, np.ndarray):
        return _round9(x.tolist())
    if isinstance(x, (list, tuple)):
        return [_round9(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _round9(v) for k, v in x.items()}
    if x is None or isinstance(x, str):
        return x
    raise TypeError(f"cannot serialize {type(x).__name__} into a report")


def _digest(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def _emit(command: str, digest: str, results: dict, files: dict, out_dir) -> None:
    """Write report.json under out_dir and echo the document to stdout."""
    os.makedirs(out_dir, exist_ok=True)
    report = {
        "toolkit_version": __version__,
        "command": command,
        "input_digest": digest,
        "results": results,
        "files": dict(files, report="report.json"),
    }
    text = json.dumps(_round9(report), indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(text + "\n")
    print(text)


# ---------------------------------------------------------------------------
# scenario ingestion


def _load_scenario(path):
    if not path:
        raise ValueError("this command needs --scenario FILE")
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise ValueError(f"cannot read scenario: {e}")
    try:
        sc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ValueError(f"scenario is not valid JSON: {e}")
    if not isinstance(sc, dict):
        raise ValueError("scenario must be a JSON object")
    if sc.get("schema_version") != _SCHEMA_VERSION:
        raise ValueError(
            f"scenario schema_version must be {_SCHEMA_VERSION}, "
            f"got {sc.get('schema_version')!r}")
    known = {"schema_version", "plant", "controller", "channels",
             "interconnection", "options", "tasks"}
    unknown = sorted(set(sc) - known)
    if unknown:
        raise ValueError(f"unknown scenario keys: {unknown}")
    opts = sc.get("options", {})
    if not isinstance(opts, dict):
        raise ValueError("options must be an object")
    tasks = sc.get("tasks", [])
    if not (isinstance(tasks, list) and all(isinstance(t, str) for t in tasks)):
        raise ValueError("tasks must be a list of strings")
    return sc, _digest(raw)


def _array(node, name, ndim):
    try:
        arr = np.array(node, dtype=float)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a rectangular numeric array")
    if arr.ndim not in ndim:
        raise ValueError(f"{name} has {arr.ndim} dimensions, expected {ndim}")
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be nonempty and finite")
    return arr


def _system_block(node, name) -> StateSpace:
    if not isinstance(node, dict) or not {"a", "b", "c"} <= set(node):
        raise ValueError(f"{name} needs matrices a, b, c")
    d = _array(node["d"], f"{name}.d", (2,)) if node.get("d") is not None else None
    return StateSpace(_array(node["a"], f"{name}.a", (2,)),
                      _array(node["b"], f"{name}.b", (2,)),
                      _array(node["c"], f"{name}.c", (2,)), d)


def _channels_block(node, d: int, q: int) -> ChannelSet:
    """Means default to one, stds to zero; lengths checked against the plant."""
    if node is None:
        return ChannelSet.identical(d, q)
    if not isinstance(node, dict):
        raise ValueError("channels must be an object")

    def side(key, length, fill):
        if node.get(key) is None:
            return np.full(length, fill)
        v = _array(node[key], f"channels.{key}", (1,))
        if len(v) != length:
            raise ValueError(f"channels.{key} has length {len(v)}, expected {length}")
        return v

    return ChannelSet(side("input_means", d, 1.0), side("input_stds", d, 0.0),
                      side("output_means", q, 1.0), side("output_stds", q, 0.0))


def _resolve_interconnection(sc) -> Interconnection:
    """Direct interconnection, or plant+controller closed through the channels."""
    if "interconnection" in sc:
        node = sc["interconnection"]
        if not isinstance(node, dict) or "sigmas" not in node:
            raise ValueError("interconnection needs matrices a, b, c and sigmas")
        sig = _array(node["sigmas"], "interconnection.sigmas", (1,))
        return Interconnection(_system_block(node, "interconnection"), sig)
    if "plant" not in sc or "controller" not in sc:
        raise ValueError(
            "scenario needs plant+controller+channels, or a direct interconnection")
    plant = _system_block(sc["plant"], "plant")
    controller = _system_block(sc["controller"], "controller")
    channels = _channels_block(sc.get("channels"), plant.n_inputs, plant.n_outputs)
    return assemble_nominal(plant, controller, channels)


# ---------------------------------------------------------------------------
# the shared analysis battery


def _spectrum_entry(m) -> dict:
    spec = eigenvalues(m)
    order = np.argsort(-spec.eigenvalues.real)
    return {"eigenvalues": list(spec.eigenvalues[order]),
            "max_real_part": spec.max_real_part}


def _analysis_battery(ic: Interconnection) -> dict:
    """Lifted test, Lyapunov certificate and spectral-radius test, with the
    agreement status the report promises."""
    lifted_verdict, lifted_spec = is_mean_square_stable(ic)
    ms = stability_by_spectral_radius(ic)
    try:
        cert = lyapunov_certificate(ic)
        lyap = {"verdict": "stable", "slack": cert.slack, "p": cert.p,
                "coords": {k: list(v) for k, v in cert.coords.items()}}
        lyap_stable = True
    except NotMeanSquareStableError as e:
        lyap = {"verdict": "unstable", "message": str(e)}
        lyap_stable = False
    agreement = (lifted_verdict == ms.verdict
                 and lyap_stable == (lifted_verdict == "stable"))
    return {
        "verdict": lifted_verdict,
        "agreement": agreement,
        "critical_variance_equal": ms.critical_variance_equal,
        "lifted": {"verdict": lifted_verdict,
                   "max_real_part": lifted_spec.max_real_part},
        "spectral_radius": {"verdict": ms.verdict, "rho": ms.spectral_radius,
                            "g_tilde": ms.g_tilde, "sigma_tilde": np.diag(ms.sigma_tilde),
                            "scaling_theta": ms.scaling_theta},
        "lyapunov": lyap,
    }


def _battery_exit(results: dict) -> int:
    if not results["agreement"]:
        print("stability tests disagree; diagnostic dump follows", file=sys.stderr)
        print(json.dumps(_round9(results), indent=2, sort_keys=True), file=sys.stderr)
        return 1
    return 0 if results["verdict"] == "stable" else 2


# ---------------------------------------------------------------------------
# subcommands


def cmd_analyze(args) -> int:
    sc, digest = _load_scenario(args.scenario)
    ic = _resolve_interconnection(sc)
    nominal = _spectrum_entry(ic.nominal.a)
    if nominal["max_real_part"] >= -HURWITZ_MARGIN:
        results = {"error": "unstable nominal, Assumption 1 violated",
                   "nominal": nominal}
        _emit("analyze", digest, results, {}, args.out)
        return 2
    results = _analysis_battery(ic)
    results["nominal"] = nominal
    _emit("analyze", digest, results, {}, args.out)
    return _battery_exit(results)


def _self_check(loop: Interconnection, achieved: float) -> dict:
    """Re-run the analysis battery on the reassembled loop just inside the
    certified variance; the claim being checked is achieved itself."""
    s2 = 0.95 * achieved
    probe = Interconnection(loop.nominal, np.full(loop.m, np.sqrt(s2)))
    out = _analysis_battery(probe)
    out["checked_at_variance"] = s2
    return out


def cmd_synthesize(args) -> int:
    sc, digest = _load_scenario(args.scenario)
    if "plant" not in sc:
        raise ValueError("synthesize needs a plant block")
    plant = _system_block(sc["plant"], "plant")
    channels = _channels_block(sc.get("channels"), plant.n_inputs, plant.n_outputs)
    opts = sc.get("options", {})

    theta0 = None
    if args.theta is not None:
        theta0 = np.asarray(args.theta, dtype=float)
    elif opts.get("theta") is not None:
        theta0 = _array(opts["theta"], "options.theta", (1,))
    seeding = opts.get("seed_scaling", "identity")
    if seeding == "baseline":
        if theta0 is not None:
            raise ValueError("give either seed_scaling 'baseline' or a theta, not both")
        theta0 = baseline_scaling(plant, channels)
    elif seeding != "identity":
        raise ValueError("options.seed_scaling must be 'identity' or 'baseline'")
    rounds = int(opts.get("dk_rounds", 0))

    try:
        if rounds > 0:
            res = dk_iterate(plant, channels, rounds, theta0)
        else:
            res = synthesize(plant, channels, theta0)
    except SynthesisInfeasibleError as e:
        results = {"status": "infeasible", "message": str(e),
                   "constraint_margins": e.margins}
        _emit("synthesize", digest, results, {}, args.out)
        return 1

    results = {
        "status": "ok",
        "gamma": res.gamma,
        "gamma_history": res.gamma_history,
        "achieved_critical_variance": res.achieved_critical_variance,
        "theta": res.theta,
        "controller": {"a": res.controller.a, "b": res.controller.b,
                       "c": res.controller.c},
        "self_check": _self_check(res.loop, res.achieved_critical_variance),
    }
    _emit("synthesize", digest, results, {}, args.out)
    code = _battery_exit(results["self_check"])
    # a synthesized loop failing its own certificate is a solver error
    return 0 if code == 0 else 1


def cmd_simulate(args) -> int:
    sc, digest = _load_scenario(args.scenario)
    ic = _resolve_interconnection(sc)
    opts = sc.get("options", {})
    n = ic.nominal.n

    paths = args.paths if args.paths is not None else int(opts.get("paths", 2000))
    seed = args.seed if args.seed is not None else int(opts.get("seed", 0))
    x0 = (_array(opts["initial_state"], "options.initial_state", (1, 2))
          if opts.get("initial_state") is not None else np.ones(n))
    step = opts.get("step")
    cfg = SimConfig(step=None if step is None else float(step),
                    horizon=float(opts.get("horizon", 10.0)),
                    paths=paths, seed=seed, initial_state=x0)
    additive = (_array(opts["additive"], "options.additive", (2,))
                if opts.get("additive") is not None else None)

    files = {}
    try:
        comp = compare_with_moments(ic, cfg, additive)
    except DivergenceError as e:
        verdict, _ = is_mean_square_stable(ic)
        results = {"error": f"second moment diverges before the horizon: {e}",
                   "verdict": verdict}
        _emit("simulate", digest, results, files, args.out)
        return 2

    os.makedirs(args.out, exist_ok=True)
    comp.write_csv(os.path.join(args.out, "moments.csv"))
    files["moments_csv"] = "moments.csv"
    results = {
        "paths": paths, "seed": seed, "horizon": cfg.horizon,
        "max_abs_z": comp.max_abs_z,
        "max_relative_deviation": comp.max_relative_deviation,
        "final_empirical_trace": float(comp.empirical_traces[-1]),
        "final_analytic_trace": float(comp.analytic_traces[-1]),
        "divergence": {"count": comp.diverged_path_count,
                       "times": comp.divergence_times},
    }

    if opts.get("sweep") is not None:
        grid = _array(opts["sweep"], "options.sweep", (1,))
        table = sweep_variance(ic, grid, cfg, additive,
                               bool(opts.get("sweep_empirical", False)))
        table.write_csv(os.path.join(args.out, "sweep.csv"))
        files["sweep_csv"] = "sweep.csv"
        results["sweep"] = [{"sigma_sq": r.sigma_sq, "verdict": r.verdict,
                             "analytic_trace": r.analytic_trace}
                            for r in table.rows]

    _emit("simulate", digest, results, files, args.out)
    return 0


def _limits_core(a, b, mu: float) -> dict:
    """Formula, the gain attaining it, and a bisection cross-check of the
    closed loop under the lifted test."""
    if b.shape[1] != 1:
        raise ValueError(
            "the fundamental limitation applies to single-input plants under "
            f"full state feedback; this plant has {b.shape[1]} inputs")
    rep = fundamental_limit(a, mu)
    k, _ = optimal_state_feedback(a, b, mu)
    out = {
        "mean_gain": rep.mean_gain,
        "unstable_eig_sum": rep.unstable_eig_sum,
        "sigma_star": rep.sigma_star,
        "sigma_star_sq": rep.sigma_star ** 2,
        "gain": k,
        "stabilizable": rep.stabilizable,
    }

    def loop(sig: float) -> Interconnection:
        return Interconnection(StateSpace(a - mu * (b @ k), b, -k), [sig])

    if not math.isfinite(rep.sigma_star):
        # Hurwitz open loop: nothing to bisect, spot-check a large noise level
        out["bisection"] = {"note": "no finite critical level for this plant",
                            "spot_check_sigma": 1e3,
                            "spot_check_verdict": is_mean_square_stable(loop(1e3))[0]}
        return out

    lo, hi = 0.0, 2.0 * rep.sigma_star
    for _ in range(20):
        if is_mean_square_stable(loop(hi))[0] != "stable":
            break
        hi *= 2.0
    else:
        raise ArithmeticError("no unstable bracket found for the bisection")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if is_mean_square_stable(loop(mid))[0] == "stable":
            lo = mid
        else:
            hi = mid
    sig_bis = 0.5 * (lo + hi)
    out["bisection"] = {"critical_sigma": sig_bis,
                        "relative_gap": abs(sig_bis - rep.sigma_star)
                        / rep.sigma_star}
    return out


def cmd_limits(args) -> int:
    sc, digest = _load_scenario(args.scenario)
    if "plant" not in sc:
        raise ValueError("limits needs a plant block")
    plant = _system_block(sc["plant"], "plant")
    channels = _channels_block(sc.get("channels"), plant.n_inputs, plant.n_outputs)
    mu = float(channels.input_means[0])
    results = _limits_core(plant.a, plant.b, mu)
    _emit("limits", digest, results, {}, args.out)
    return 0


# ---------------------------------------------------------------------------
# the embedded benchmark


def _wscc_table1() -> dict:
    """Per-output critical variance achieved by scaling-iterated synthesis on
    the detectable quotient, next to the hard output-feedback ceiling."""
    rows = {}
    for output in _WSCC_OUTPUT_ROWS:
        plant = build_wscc9("table1", output)
        ch = ChannelSet.identical(1, 1)
        res = dk_iterate(plant, ch, 2, baseline_scaling(plant, ch))
        floor = input_gain_floor(plant)
        rows[output] = {
            "achieved_critical_variance": res.achieved_critical_variance,
            "gamma": res.gamma,
            "input_channel_variance_ceiling": np.inf if floor == 0.0 else 1.0 / floor,
        }
    rows["note"] = (
        "ceiling is the inverse of the smallest squared input-channel gain any "
        "internally stabilizing output feedback can realize for this plant; no "
        "design, by any method, can tolerate more input-channel variance")
    return rows


def _wscc_synth() -> dict:
    plant = build_wscc9("mimo")
    ch = ChannelSet.identical(3, 3)
    ident = dk_iterate(plant, ch, 3)
    base = dk_iterate(plant, ch, 2, baseline_scaling(plant, ch))
    return {
        "identity_start": {"gamma": ident.gamma,
                           "gamma_history": ident.gamma_history,
                           "achieved_critical_variance":
                               ident.achieved_critical_variance},
        "baseline_start": {"gamma": base.gamma,
                           "gamma_history": base.gamma_history,
                           "achieved_critical_variance":
                               base.achieved_critical_variance,
                           "theta": base.theta,
                           "controller": {"a": base.controller.a,
                                          "b": base.controller.b,
                                          "c": base.controller.c}},
        "self_check": _self_check(base.loop, base.achieved_critical_variance),
    }


def _wscc_sweep(out_dir) -> tuple:
    plant = build_wscc9("mimo")
    ch = ChannelSet.identical(3, 3)
    res = dk_iterate(plant, ch, 2, baseline_scaling(plant, ch))
    s2c = res.achieved_critical_variance
    grid = np.concatenate([np.linspace(0.5, 0.95, 10) * s2c, [1.05 * s2c]])
    nloop = res.loop.nominal.n
    cfg = SimConfig(step=None, horizon=1.0, paths=2, seed=0,
                    initial_state=np.zeros(nloop))
    table = sweep_variance(res.loop, grid, cfg, 1e-3 * np.eye(nloop))
    os.makedirs(out_dir, exist_ok=True)
    table.write_csv(os.path.join(out_dir, "sweep.csv"))
    stable = [r.analytic_trace for r in table.rows if r.verdict == "bounded"]
    results = {
        "critical_variance": s2c,
        "rows": [{"sigma_sq": r.sigma_sq, "verdict": r.verdict,
                  "analytic_trace": r.analytic_trace} for r in table.rows],
        "strictly_increasing": bool(np.all(np.diff(stable) > 0)),
        "growth_ratio": stable[-1] / stable[0],
    }
    return results, {"sweep_csv": "sweep.csv"}


def cmd_wscc9(args) -> int:
    task = args.task
    digest = _digest(f"wscc9:{task}".encode())
    files = {}
    if task == "poles":
        results = _spectrum_entry(build_wscc9("state-feedback").a)
    elif task == "zeros":
        results = {}
        for output in _WSCC_OUTPUT_ROWS:
            sys_ = build_wscc9("zero-study", output)
            z = transmission_zeros(sys_.a, sys_.b, sys_.c)
            results[output] = list(z[np.argsort(-z.real)])
    elif task == "table1":
        results = _wscc_table1()
    elif task == "synth":
        results = _wscc_synth()
    elif task == "limits":
        plant = build_wscc9("state-feedback")
        results = _limits_core(plant.a, plant.b, 1.0)
    elif task == "sweep":
        results, files = _wscc_sweep(args.out)
    else:
        raise ValueError(f"unknown wscc9 task {task!r}")
    _emit("wscc9", digest, {task: results}, files, args.out)
    if task == "synth" and _battery_exit(results["self_check"]) != 0:
        return 1
    return 0


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", metavar="FILE", help="scenario JSON file")
    common.add_argument("--theta", nargs="+", type=float, metavar="T",
                        help="channel scaling, output channels first")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--paths", type=int, help="override the scenario path count")
    common.add_argument("--out", default=".", metavar="DIR",
                        help="directory for report.json and CSVs (default .)")

    parser = argparse.ArgumentParser(
        prog="msslab",
        description="mean-square stability analysis, synthesis and simulation "
                    "for linear systems with multiplicative channel noise")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common],
                   help="run the three stability tests on an interconnection")
    sub.add_parser("synthesize", parents=[common],
                   help="design a robust output-feedback controller")
    sub.add_parser("simulate", parents=[common],
                   help="Monte Carlo moments against the covariance ODE")
    sub.add_parser("limits", parents=[common],
                   help="single-input state-feedback variance limit")
    wp = sub.add_parser("wscc9", parents=[common],
                        help="built-in three-machine benchmark tasks")
    wp.add_argument("task", choices=_WSCC_TASKS)

    args = parser.parse_args(argv)
    dispatch = {"analyze": cmd_analyze, "synthesize": cmd_synthesize,
                "simulate": cmd_simulate, "limits": cmd_limits,
                "wscc9": cmd_wscc9}
    try:
        return dispatch[args.command](args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ArithmeticError, NotMeanSquareStableError) as e:
        print(f"solver error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
