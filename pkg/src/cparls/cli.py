"""Command-line interface: ``cparls {decompose,sample-bench,synth,score}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Any long option may also be given in an INI file passed with ``--config``
(section named after the command, or ``[DEFAULT]``); command-line flags win.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
import time
from fractions import Fraction
from typing import List, Optional

import numpy as np

from . import __version__
from .exceptions import NumericalError
from .kernels import krp_samp, mttkrp, solve_lsq
from .kruskal import read_model, write_model
from .sampling import ModeDistribution, format_plan, mode_probabilities, skrp_lev
from .solver import (
    SolverConfig,
    build_fit_estimator,
    cp_als,
    cp_arls_lev,
    estimated_fit,
    exact_fit,
    exact_lsq_solution,
    initial_model,
    residual_rel_diff,
    write_trace_csv,
)
from .sparse_tensor import (
    fiber_linear_index,
    other_modes,
    precompute_mode_linearization,
    read_frostt,
    tnsr_samp,
    write_frostt,
)
from .synth import SynthSpec, factor_match_score, gen_synthetic

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_tau(text: str, samples: int) -> float:
    """``1``, ``1/s`` (resolved against ``samples``), or a literal in (0, 1]."""
    text = text.strip()
    if text == "1/s":
        return 1.0 / samples
    try:
        tau = float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"invalid --tau {text!r}") from None
    if not 0.0 < tau <= 1.0:
        raise UsageError(f"--tau must lie in (0, 1], got {text}")
    return tau


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.replace("x", ",").split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolved(args) -> dict:
    skip = {"func", "config", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


class _Outputs:
    """Tracks files written by a command so they can be removed on failure."""

    def __init__(self):
        self.paths: List[str] = []

    def add(self, path: str) -> str:
        self.paths.append(path)
        return path

    def cleanup(self) -> None:
        for p in self.paths:
            try:
                os.remove(p)
            except OSError:
                pass


# --- decompose --------------------------------------------------------------


def _load_tensor(args, model=None):
    # without --shape, a model file fixes the mode sizes
    shape = args.shape if args.shape is not None or model is None else model.shape
    return read_frostt(args.tensor, shape=shape)


def _load_model(path):
    with open(path) as fh:
        return read_model(fh)


def cmd_decompose(args, outputs: _Outputs) -> int:
    tau = parse_tau(args.tau, args.samples)
    t = precompute_mode_linearization(_load_tensor(args))
    digest = _sha256(args.tensor)
    os.makedirs(args.out, exist_ok=True)
    shared_est = None
    if args.fit == "estimated" and args.method == "arls-lev":
        # one frozen sample shared by every run so fits are comparable
        shared_est = build_fit_estimator(
            t, args.fit_samples, args.fit_alpha, np.random.default_rng([args.seed, 0xF17])
        )
    for j in range(args.runs):
        seed = args.seed + j
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        init = initial_model(t, args.rank, args.init, rng, s_init=args.init_samples)
        if args.method == "arls-lev":
            cfg = SolverConfig(
                rank=args.rank,
                samples=args.samples,
                tau=tau,
                epoch_size=args.epoch_size,
                fail_epochs=args.fail_epochs,
                tol=args.tol,
                max_epochs=args.max_epochs,
                fit_mode=args.fit,
                fit_samples=args.fit_samples,
                fit_alpha=args.fit_alpha,
                init=args.init,
                init_samples=args.init_samples,
                seed=seed,
            )
            model, traces = cp_arls_lev(t, cfg, init, rng=rng, fit_estimator=shared_est)
        else:
            model, traces = cp_als(t, args.rank, init, tol=args.tol, max_iters=args.max_iters)
        elapsed = time.perf_counter() - t0
        final_exact = exact_fit(t, model) if args.fit == "exact" or args.method == "als" else None
        stem = os.path.join(args.out, f"run{j:03d}")
        model_path = outputs.add(stem + ".model")
        trace_path = outputs.add(stem + ".trace.csv")
        manifest_path = outputs.add(stem + ".manifest.json")
        with open(model_path, "w") as fh:
            write_model(model, fh)
        with open(trace_path, "w") as fh:
            write_trace_csv(traces, fh, with_time=args.wall_clock)
        manifest = {
            "command": "decompose",
            "version": __version__,
            "config": _resolved(args),
            "resolved_tau": tau,
            "input": {"path": args.tensor, "sha256": digest, "shape": list(t.shape), "nnz": t.nnz},
            "run": j,
            "seed": seed,
            "outputs": {"model": model_path, "trace": trace_path},
            "result": {
                "epochs": len(traces),
                "final_fit": traces[-1].fit if traces else None,
                "final_fit_kind": traces[-1].fit_kind if traces else None,
                "final_exact_fit": final_exact,
            },
        }
        if args.wall_clock:
            manifest["result"]["time_s"] = elapsed
        _dump_json(manifest, manifest_path)
        print(
            f"run {j} seed {seed}: {len(traces)} {'epochs' if args.method == 'arls-lev' else 'iterations'}, "
            f"fit {traces[-1].fit:.6f} ({traces[-1].fit_kind})"
        )
    return EXIT_OK


# --- sample-bench -----------------------------------------------------------

BENCH_HEADER = [
    "s", "sampler", "tau", "combine", "rep", "s_bar", "s_det", "p_det", "rhs_nnz",
    "resid_diff", "t_plan", "t_krp", "t_gather", "t_solve",
]


def cmd_sample_bench(args, outputs: _Outputs) -> int:
    model = _load_model(args.model)
    t = precompute_mode_linearization(_load_tensor(args, model))
    if model.shape != t.shape:
        raise ValueError(f"model shape {model.shape} does not match tensor shape {t.shape}")
    k = args.mode - 1
    if not 0 <= k < t.ndim:
        raise UsageError(f"--mode must lie in [1, {t.ndim}]")
    factors = model.factors
    rest = other_modes(t.ndim, k)
    dist = ModeDistribution([mode_probabilities(factors[j]) for j in rest])
    sub = [factors[j] for j in rest]
    M = B_exact = None
    if args.exact:
        M = mttkrp(t, factors, k)
        B_exact = exact_lsq_solution(t, factors, k)
    samplers = {"random": lambda s: 1.0, "hybrid": lambda s: 1.0 / s}
    chosen = ["random", "hybrid"] if args.sampler == "both" else [args.sampler]
    combines = [True, False] if args.combine == "both" else [args.combine == "on"]
    rows = []
    first_plan = None
    for s in args.samples:
        for name in chosen:
            tau = samplers[name](s)
            for rep in range(args.repeats):
                for comb in combines:
                    # identical seeds across combine on/off: same draws before merging
                    rng = np.random.default_rng([args.seed, s, rep, chosen.index(name)])
                    t0 = time.perf_counter()
                    plan = skrp_lev(dist, s, tau, rng, combine=comb)
                    t1 = time.perf_counter()
                    Zs = krp_samp(sub, plan.idx, plan.wgt)
                    t2 = time.perf_counter()
                    Xs = tnsr_samp(t, k, fiber_linear_index(plan.idx, t.shape, k), plan.wgt)
                    t3 = time.perf_counter()
                    B = solve_lsq(Zs, Xs)
                    t4 = time.perf_counter()
                    if not np.all(np.isfinite(B)):
                        raise NumericalError("non-finite sketched solution")
                    diff = ""
                    if args.exact:
                        diff = repr(residual_rel_diff(t, factors, k, B, B_exact, M))
                    timing = [repr(v) for v in (t1 - t0, t2 - t1, t3 - t2, t4 - t3)] if args.wall_clock else [""] * 4
                    rows.append([s, name, repr(tau), "on" if comb else "off", rep, plan.s_bar,
                                 plan.s_det, repr(plan.p_det), Xs.nnz, diff, *timing])
                    if first_plan is None:
                        first_plan = plan
    if args.dump_plan:
        with open(outputs.add(args.dump_plan), "w") as fh:
            fh.write(format_plan(first_plan))
    if args.out:
        fh = open(outputs.add(args.out), "w")
    else:
        fh = sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


# --- synth ------------------------------------------------------------------


def cmd_synth(args, outputs: _Outputs) -> int:
    spec = SynthSpec(
        shape=args.shape_spec,
        rank=args.rank,
        n_concentrated=args.n_concentrated,
        spread=args.spread,
        magnitude=args.magnitude,
        seed_noise=args.seed_noise,
        noise=args.noise,
        seed=args.seed,
    )
    t, truth = gen_synthetic(spec)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, args.name)
    tns = outputs.add(stem + ".tns")
    mdl = outputs.add(stem + ".truth.model")
    man = outputs.add(stem + ".manifest.json")
    with open(tns, "w") as fh:
        write_frostt(t, fh)
    with open(mdl, "w") as fh:
        write_model(truth, fh)
    _dump_json(
        {
            "command": "synth",
            "version": __version__,
            "config": _resolved(args),
            "spec": spec.to_dict(),
            "seed": args.seed,
            "outputs": {"tensor": tns, "truth": mdl},
            "result": {"nnz": t.nnz, "tensor_sha256": _sha256(tns)},
        },
        man,
    )
    print(f"wrote {tns} ({t.nnz} nonzeros) and {mdl}")
    return EXIT_OK


# --- score ------------------------------------------------------------------


def cmd_score(args, outputs: _Outputs) -> int:
    model = _load_model(args.model)
    t = _load_tensor(args, model)
    if model.shape != t.shape:
        raise ValueError(f"model shape {model.shape} does not match tensor shape {t.shape}")
    print(f"exact_fit {exact_fit(t, model)!r}")
    if args.estimated:
        est = build_fit_estimator(t, args.fit_samples, args.fit_alpha, np.random.default_rng(args.seed))
        print(f"estimated_fit {estimated_fit(est, model)!r}")
    if args.truth:
        truth = _load_model(args.truth)
        print(f"fms {factor_match_score(model, truth)!r}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cparls", description="Sparse CP decomposition by leverage-score sketching.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, tensor=True):
        sp.add_argument("--config", help="INI file with defaults for this command")
        if tensor:
            sp.add_argument("tensor", help="FROSTT .tns file")
            sp.add_argument("--shape", type=_int_list, default=None,
                            help="explicit mode sizes, e.g. 183,24,1140,1717")
        sp.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("decompose", help="compute a CP decomposition")
    common(d)
    d.add_argument("--rank", type=int, required=True)
    d.add_argument("--method", choices=["arls-lev", "als"], default="arls-lev")
    d.add_argument("--samples", type=int, default=2**17)
    d.add_argument("--tau", default="1", help="1, 1/s, or a number in (0, 1]")
    d.add_argument("--epoch-size", type=int, default=5)
    d.add_argument("--fail-epochs", type=int, default=3)
    d.add_argument("--tol", type=float, default=1e-4)
    d.add_argument("--max-epochs", type=int, default=50)
    d.add_argument("--max-iters", type=int, default=250, help="CP-ALS iteration cap")
    d.add_argument("--fit", choices=["exact", "estimated"], default="exact")
    d.add_argument("--fit-samples", type=int, default=2**17)
    d.add_argument("--fit-alpha", type=float, default=0.5)
    d.add_argument("--init", choices=["gaussian", "rrf"], default="gaussian")
    d.add_argument("--init-samples", type=int, default=10**5)
    d.add_argument("--runs", type=int, default=1)
    d.add_argument("--out", default="cparls-out")
    d.add_argument("--wall-clock", action="store_true",
                   help="record wall-clock times (outputs are then not byte-reproducible)")
    d.set_defaults(func=cmd_decompose)

    b = sub.add_parser("sample-bench", help="benchmark sketches of one least-squares subproblem")
    common(b)
    b.add_argument("model", help="Kruskal model file providing the frozen factors")
    b.add_argument("--mode", type=int, default=1, help="1-based mode to solve for")
    b.add_argument("--samples", type=_int_list, default=[2**e for e in range(7, 20, 2)])
    b.add_argument("--sampler", choices=["random", "hybrid", "both"], default="both")
    b.add_argument("--combine", choices=["on", "off", "both"], default="both")
    b.add_argument("--repeats", type=int, default=10)
    b.add_argument("--exact", action="store_true", help="report the relative residual difference")
    b.add_argument("--out", default=None, help="CSV path (default: stdout)")
    b.add_argument("--dump-plan", default=None, help="write the first plan's rows to this file")
    b.add_argument("--wall-clock", action="store_true")
    b.set_defaults(func=cmd_sample_bench)

    s = sub.add_parser("synth", help="generate a synthetic tensor with known factors")
    common(s, tensor=False)
    s.add_argument("--shape", dest="shape_spec", type=_int_list, default=[50, 50, 50])
    s.add_argument("--rank", type=int, default=25)
    s.add_argument("--n-concentrated", type=int, default=3)
    s.add_argument("--spread", type=int, default=5)
    s.add_argument("--magnitude", type=float, default=3.0)
    s.add_argument("--seed-noise", type=float, default=0.05)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--out", default=".")
    s.add_argument("--name", default="synth")
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("score", help="report fit and factor match score of a model")
    common(c)
    c.add_argument("model")
    c.add_argument("--truth", default=None, help="ground-truth model for the factor match score")
    c.add_argument("--estimated", action="store_true", help="also report the stratified fit estimate")
    c.add_argument("--fit-samples", type=int, default=2**17)
    c.add_argument("--fit-alpha", type=float, default=0.5)
    c.set_defaults(func=cmd_score)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: List[str]) -> None:
    """Load ``--config`` values into the chosen subparser's defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    command = next((a for a in rest if not a.startswith("-")), None)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if command not in subparsers.choices:
        return
    sp = subparsers.choices[command]
    cp = configparser.ConfigParser()
    if not cp.read(known.config):
        raise UsageError(f"cannot read config file {known.config}")
    section = cp[command] if cp.has_section(command) else cp.defaults()
    actions = {}
    for a in sp._actions:
        for opt in a.option_strings:
            actions[opt.lstrip("-").replace("-", "_")] = a
    defaults = {}
    for key, raw in section.items():
        a = actions.get(key.replace("-", "_"))
        if a is None:
            raise UsageError(f"unknown option {key!r} in config section [{command}]")
        if isinstance(a, argparse._StoreTrueAction):
            val = _bool(raw)
        elif a.type is not None:
            val = a.type(raw)
        else:
            val = raw
        if a.choices is not None and val not in a.choices:
            raise UsageError(f"invalid value {raw!r} for {key} in config")
        defaults[a.dest] = val
        a.required = False
    sp.set_defaults(**defaults)


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (UsageError, ValueError, argparse.ArgumentTypeError) as exc:
        print(f"cparls: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    outputs = _Outputs()
    try:
        return args.func(args, outputs)
    except UsageError as exc:
        outputs.cleanup()
        print(f"cparls: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        outputs.cleanup()
        print(f"cparls: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, IndexError, OSError, RuntimeError) as exc:
        outputs.cleanup()
        print(f"cparls: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
