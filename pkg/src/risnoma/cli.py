"""Command-line interface.

  risnoma run SPEC.json [--out DIR] [--trials N] [--seed N]
                        [--scheme S ...] [--sweep VAR=V1,V2,...] [--jobs N]
  risnoma trace [--desk] [--cfg FILE] [--scheme S] [--seed N] [--out DIR]
  risnoma selftest

Exit codes: 0 success, 1 configuration error, 2 runtime/solver failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from . import driver, harness
from .errors import ConfigError
from .scenario import ScenarioConfig, gen_channels


def _load_spec(args) -> harness.ExperimentSpec:
    with open(args.spec) as fh:
        spec = harness.ExperimentSpec.from_json(fh.read())
    changes = {}
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.scheme:
        changes["schemes"] = tuple(args.scheme)
    if args.sweep:
        var, _, vals = args.sweep.partition("=")
        if not vals:
            raise ConfigError("--sweep expects VAR=V1,V2,...")
        changes["sweep_var"] = var
        changes["sweep_grid"] = tuple(float(v) for v in vals.split(","))
    return dataclasses.replace(spec, **changes) if changes else spec


def _cmd_run(args) -> int:
    spec = _load_spec(args)
    os.makedirs(args.out, exist_ok=True)

    def progress(done, total):
        if not args.quiet:
            print(f"\r[{done}/{total}] trials", end="", file=sys.stderr, flush=True)

    results, agg = harness.run_monte_carlo(spec, n_jobs=args.jobs, progress=progress)
    if not args.quiet:
        print(file=sys.stderr)
    trials_path = os.path.join(args.out, "trials.csv")
    agg_path = os.path.join(args.out, "aggregate.csv")
    harness.write_trials_csv(trials_path, results)
    harness.write_aggregate_csv(agg_path, agg)
    print(f"wrote {trials_path} and {agg_path}")
    for row in agg:
        print("  " + ",".join(str(c) for c in row))
    return 0


def _cmd_trace(args) -> int:
    if args.cfg:
        with open(args.cfg) as fh:
            cfg = ScenarioConfig.from_json(fh.read())
    else:
        cfg = ScenarioConfig.desk()
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    if args.scheme != "ris-hybrid-noma":
        sol = harness.baseline_eval(args.scheme, cfg, rng)
        print(f"{args.scheme}: sum_rate={sol.sum_rate:.6g} feasible={sol.feasible}")
        return 0
    channels = gen_channels(cfg, rng)
    sol = driver.optimize(cfg, channels, rng, collect_traces=True)
    outer = os.path.join(args.out, "outer_trace.csv")
    with open(outer, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outer_iter", "sum_rate", "best_sum_rate"])
        for i, (r, b) in enumerate(zip(sol.traces["sum_rate"],
                                       sol.traces["best_sum_rate"])):
            w.writerow([i, f"{r:.9g}", f"{b:.9g}"])
    amo = os.path.join(args.out, "amo_trace.csv")
    with open(amo, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outer_iter", "block", "iteration", "objective", "grad_norm"])
        for t, rows in enumerate(sol.traces.get("amo", [])):
            for (block, it, obj, gn) in rows or []:
                w.writerow([t, block, it, f"{obj:.9g}", f"{gn:.9g}"])
    sca = os.path.join(args.out, "sca_trace.csv")
    with open(sca, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outer_iter", "sca_iter", "objective", "w_change_sq"])
        for t, rows in enumerate(sol.traces.get("sca", [])):
            for (it, obj, dw) in rows or []:
                w.writerow([t, it, f"{obj:.9g}", f"{dw:.9g}"])
    print(f"sum_rate={sol.sum_rate:.6g} feasible={sol.feasible} "
          f"outer_iters={sol.outer_iterations}")
    print(f"wrote {outer}, {amo}, {sca}")
    return 0


def _cmd_selftest(args) -> int:
    """Quick invariant suite: determinism, manifold feasibility, gradient
    check, and the power-allocation oracle on one small instance."""
    from . import manifold_opt, power_alloc, rate_model

    cfg = ScenarioConfig.desk(rng_seed=7)
    failures = []

    def check(name, ok):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        if not ok:
            failures.append(name)

    ch1 = gen_channels(cfg, np.random.default_rng(7))
    ch2 = gen_channels(cfg, np.random.default_rng(7))
    check("channel determinism",
          np.array_equal(ch1.ap_ris, ch2.ap_ris)
          and all(np.array_equal(a, b) for a, b in zip(ch1.ris_user, ch2.ris_user)))
    s = np.linalg.svd(ch1.ap_ris, compute_uv=False)
    check("rank-one AP-RIS channel", s[1] / s[0] < 1e-12)

    rng = np.random.default_rng(1)
    _, state = driver.initialize(cfg, driver.normalized_view(ch1, cfg).channels, rng)
    res = state.manifold_residuals()
    check("initial manifold feasibility", max(res.values()) < 1e-9)

    pt = manifold_opt.ManifoldPoint(manifold_opt.CIRCLE_VEC,
                                    np.exp(1j * rng.uniform(0, 2 * np.pi, 8)))
    g = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    tangent = manifold_opt.rgrad(pt, g)
    check("tangent projection",
          np.max(np.abs(np.real(np.conj(pt.value) * tangent))) < 1e-12)

    gains = [np.array([5.0, 2.0]), np.array([4.0, 1.5])]
    gammas = [np.array([1.0, 1.0])] * 2
    sol_pa, _ = power_alloc.allocate_from_gains(gains, gammas, 2.0, 0.1)
    table = rate_model.GainTable(own=gains)
    _, rates = rate_model.sum_rate(table, sol_pa, 0.1)
    check("power allocation meets min rates",
          all(np.all(r >= 1.0 - 1e-9) for r in rates))
    check("power budget exact", abs(sol_pa.total() - 2.0) < 1e-9)

    sol = driver.optimize(cfg, ch1, np.random.default_rng(3))
    check("driver returns a solution", sol.feasible or sol.sum_rate == 0.0)
    return 0 if not failures else 2


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="risnoma", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a Monte-Carlo experiment spec")
    p_run.add_argument("spec", help="ExperimentSpec JSON path")
    p_run.add_argument("--out", default="results", help="output directory")
    p_run.add_argument("--trials", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--scheme", action="append", default=None,
                       help="override schemes (repeatable)")
    p_run.add_argument("--sweep", default=None, help="VAR=V1,V2,... override")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_tr = sub.add_parser("trace", help="single trial with iteration traces")
    p_tr.add_argument("--cfg", default=None, help="ScenarioConfig JSON path")
    p_tr.add_argument("--scheme", default="ris-hybrid-noma", choices=harness.SCHEMES)
    p_tr.add_argument("--seed", type=int, default=0)
    p_tr.add_argument("--out", default="results")
    p_tr.set_defaults(func=_cmd_trace)

    p_st = sub.add_parser("selftest", help="run the quick invariant suite")
    p_st.set_defaults(func=_cmd_selftest)

    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # solver/runtime failures
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
