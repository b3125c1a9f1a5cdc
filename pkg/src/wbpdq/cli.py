"""Command line entry point (``wbpdq``).

Exit codes: 0 success, 2 bad arguments or configuration, 3 non-convergence
of ``recover --strict``, 4 unreadable or unwritable files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np
from threadpoolctl import threadpool_limits

from . import analysis, harness
from ._version import __version__
from .model import SensingMatrix, quantize
from .prox import TubeProjectionConfig
from .solver import SolverConfig, solve_bp, solve_bpdq

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_IO = 0, 2, 3, 4


class _UsageError(Exception):
    pass


def _exponent(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    return v


def _epsilon(text: str):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("epsilon must be a number or 'auto'") from None


def _dump(obj, out):
    json.dump(obj, out, indent=2, allow_nan=False, default=harness._json_number)
    out.write("\n")


def _clean(d):
    return {k: harness._json_number(v) for k, v in d.items()}


# --- subcommands -----------------------------------------------------------

def _cmd_recover(args) -> int:
    phi = harness.read_matrix(args.matrix)
    y = harness.read_vector(args.measurements)
    w = harness.read_vector(args.weights) if args.weights else np.ones(phi.shape[1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        matrix = SensingMatrix(phi)
    if y.size != matrix.m or w.size != matrix.n:
        raise _UsageError(f"shape mismatch: matrix {matrix.shape}, y {y.size}, weights {w.size}")
    if np.any(w <= 0):
        raise _UsageError("weights must be positive")
    try:
        cfg = SolverConfig(p=args.p, epsilon=args.epsilon if not args.noiseless else "auto",
                           gamma=args.gamma, relaxation=args.relaxation,
                           max_iters=args.max_iters, fp_tol=args.fp_tol)
        if args.noiseless:
            report = solve_bp(y, matrix, w, cfg)
        else:
            report = solve_bpdq(y, matrix, w, cfg, TubeProjectionConfig(method=args.tube_method),
                                bin_width=args.alpha)
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    harness.write_vector(args.out, report.x)
    summary = {
        "iterations": report.iterations, "converged": report.converged,
        "epsilon": report.epsilon, "feasibility_gap": report.feasibility_gap,
        "objective": report.objective,
        "final_residual": float(report.residual_history[-1]) if report.iterations else 0.0,
    }
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            _dump(_clean(summary), fh)
    print(json.dumps(_clean(summary)), file=sys.stderr)
    if args.strict and not report.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_experiment(args) -> int:
    overrides = {}
    if args.no_timing:
        overrides["record_timing"] = False
    cfg = harness.load_config(args.config, **overrides)
    os.makedirs(args.out, exist_ok=True)

    def progress(r):
        if not args.quiet:
            print(f"p={r.p:g} m={r.m} trial={r.trial_id} snr={r.snr_db:.2f} dB "
                  f"iters={r.iterations} converged={r.converged}", file=sys.stderr)

    table = harness.run_experiment(cfg, progress=progress)
    harness.emit_results(table, args.format, os.path.join(args.out, f"results.{args.format}"))
    harness.emit_aggregates(table, os.path.join(args.out, "aggregates.csv"))
    return EXIT_OK


def _cmd_quantize(args) -> int:
    v = harness.read_vector(args.input)
    try:
        q = quantize(v, args.alpha)
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    if args.out:
        harness.write_vector(args.out, q)
    else:
        sys.stdout.write(f"{q.size} 1\n")
        for val in q:
            sys.stdout.write(repr(float(val)) + "\n")
    return EXIT_OK


def _cmd_check_rip(args) -> int:
    phi = harness.read_matrix(args.matrix)
    method = None if args.method == "auto" else args.method
    try:
        est = analysis.estimate_rip(phi, args.s, args.p, args.q, num_samples=args.samples,
                                    seed=args.seed, method=method)
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    out = {"s": est.s, "p": est.p, "q": est.q, "mu": est.mu, "delta": est.delta,
           "method": est.method, "num_samples": est.num_samples,
           "ratio_min": est.ratio_min, "ratio_max": est.ratio_max}
    if args.theta is not None:
        try:
            nsp = analysis.rip_implies_rnsp(est, args.theta)
            out["rnsp"] = {"s": nsp.s, "rho": nsp.rho, "gamma": nsp.gamma_nsp}
        except ValueError as exc:  # includes UncertifiableError
            out["rnsp"] = {"error": str(exc)}
    _dump(_clean(out), sys.stdout)
    return EXIT_OK


_BOUND_FLAGS = {
    "thm1": ("delta", "mu", "p", "q", "theta", "s", "epsilon", "sigma"),
    "thm2": ("rho", "gamma", "theta", "s", "r", "q", "epsilon", "sigma"),
}


def _cmd_bounds(args) -> int:
    needed = _BOUND_FLAGS[args.mode]
    missing = [f"--{k}" for k in needed if getattr(args, k) is None]
    if missing:
        raise _UsageError(f"mode {args.mode} needs {' '.join(missing)}")
    vals = {k: getattr(args, k) for k in needed}
    try:
        if args.mode == "thm1":
            vals["delta_2s"] = vals.pop("delta")
            res = analysis.recovery_error_bound("rip_thm1", **vals)
        else:
            res = analysis.recovery_error_bound("rnsp_thm2", **vals)
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    _dump(_clean({"mode": args.mode, "A": res.A, "B": res.B,
                  "bound": res.bound_value, "valid": res.valid}), sys.stdout)
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wbpdq", description="Weighted dequantizing sparse recovery.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("recover", help="decode one measurement vector")
    r.add_argument("--matrix", required=True)
    r.add_argument("--measurements", required=True)
    r.add_argument("--weights")
    r.add_argument("--p", type=_exponent, default=2.0)
    r.add_argument("--epsilon", type=_epsilon, default="auto")
    r.add_argument("--alpha", type=float, help="quantizer bin width (needed for --epsilon auto)")
    r.add_argument("--max-iters", type=int, default=800)
    r.add_argument("--gamma", type=float, default=1.0)
    r.add_argument("--relaxation", type=float, default=1.0)
    r.add_argument("--fp-tol", type=float)
    r.add_argument("--tube-method", choices=("iterative_dual", "tight_frame"),
                   default="iterative_dual")
    r.add_argument("--noiseless", action="store_true", help="equality-constrained decoding")
    r.add_argument("--strict", action="store_true", help="exit 3 if not converged")
    r.add_argument("--report", help="write a JSON run summary here")
    r.add_argument("--out", required=True)
    r.set_defaults(func=_cmd_recover)

    e = sub.add_parser("experiment", help="run a seeded sweep from a config file")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--format", choices=("csv", "json"), default="csv")
    e.add_argument("--no-timing", action="store_true", help="write zero wall times")
    e.add_argument("--quiet", action="store_true")
    e.set_defaults(func=_cmd_experiment)

    q = sub.add_parser("quantize", help="mid-riser quantization of a vector file")
    q.add_argument("--input", required=True)
    q.add_argument("--alpha", type=float, required=True)
    q.add_argument("--out")
    q.set_defaults(func=_cmd_quantize)

    c = sub.add_parser("check-rip", help="estimate RIP constants")
    c.add_argument("--matrix", required=True)
    c.add_argument("--s", type=int, required=True)
    c.add_argument("--p", type=_exponent, default=2.0)
    c.add_argument("--q", type=_exponent, default=2.0)
    c.add_argument("--samples", type=int, default=10000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--method", choices=("auto", "exact_22", "sampled"), default="auto")
    c.add_argument("--theta", type=float, help="also report the implied null space constants")
    c.set_defaults(func=_cmd_check_rip)

    b = sub.add_parser("bounds", help="evaluate recovery error bounds")
    b.add_argument("--mode", choices=("thm1", "thm2"), required=True)
    for name in ("delta", "mu", "p", "q", "theta", "epsilon", "sigma", "rho", "gamma", "r"):
        b.add_argument(f"--{name}", type=_exponent)
    b.add_argument("--s", type=int)
    b.set_defaults(func=_cmd_bounds)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad usage
    try:
        with threadpool_limits(limits=1):
            return args.func(args)
    except (harness.ConfigError, _UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, harness.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
