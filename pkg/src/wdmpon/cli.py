"""Command-line front end.

Exit codes: 0 stable / success, 1 input or solver error, 2 saturation or
backlog growth detected.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import Optional

import numpy as np

from . import __version__
from . import configfile
from .analysis import (
    NoSolution,
    RegimeError,
    Verdict,
    classical_stability,
    gpon_frame_stability,
    mean_field_stability,
    server_limit_stability,
    uniform_overhead_stability,
)
from .experiments import (
    ClassSpec,
    ProbeError,
    convergence_sweep,
    fraction_rays,
    probe_boundary_sim,
    region_analytic,
    verify_toy_meanfield,
    write_convergence_csv,
    write_rays_csv,
    write_toy_csv,
)
from .model import GponFrame, PeriodicPolling, RandomPolling
from .sim import detect_growth, run, run_gpon_frame, write_csv

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SATURATED = 2
MANIFEST = "manifest.json"

log = logging.getLogger("wdmpon")


class UsageError(Exception):
    pass


def _time(text: str) -> float:
    try:
        return configfile.parse_time(text)
    except configfile.ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _rays(text: str) -> list[list[float]]:
    return [_floats(r) for r in text.split(";") if r.strip()]


def _seed(args) -> None:
    # randomized commands always end up with explicit seeds in the manifest
    if getattr(args, "seed", "absent") is None:
        args.seed = int(np.random.SeedSequence().generate_state(1)[0])
    if getattr(args, "seeds", "absent") is None:
        base = int(np.random.SeedSequence().generate_state(1)[0])
        args.seeds = [base + k for k in range(3)]


def _write_manifest(args, out: str) -> str:
    params = {k: v for k, v in vars(args).items() if k not in ("func", "out")}
    manifest = {
        "command": args.command,
        "config": os.path.abspath(args.config) if getattr(args, "config", None) else None,
        "parameters": params,
        "seeds": params.get("seeds", [params["seed"]] if "seed" in params else []),
        "output_dir": os.path.abspath(out),
        "version": __version__,
    }
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, MANIFEST)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# -- analyze ----------------------------------------------------------------------------------

ANALYSES = ("auto", "mean-field", "corollary", "classical", "server-limit", "gpon")


def cmd_analyze(args) -> int:
    loaded = configfile.load(args.config)
    config, traffic, policy = loaded.config, loaded.traffic, loaded.policy
    method = args.method
    if method == "auto":
        method = "gpon" if isinstance(policy, GponFrame) else "mean-field"
    if method == "mean-field":
        report = mean_field_stability(config, traffic, selection=args.selection)
    elif method == "corollary":
        report = uniform_overhead_stability(config, traffic)
    elif method == "classical":
        report = classical_stability(config, traffic)
    elif method == "server-limit":
        report = server_limit_stability(config, traffic)
    else:
        ratios = policy.delta_ratios if isinstance(policy, GponFrame) else None
        if ratios is None:
            raise UsageError("gpon analysis needs a [policy] section with kind = gpon")
        report = gpon_frame_stability(config, traffic, ratios)

    print(f"analysis: {method}")
    mf = report.mean_field
    if mf is not None:
        print(f"theta = {mf.theta!r} s")
        print(f"delta = {mf.delta!r} s")
    for note in report.notes:
        print(f"note: {note}")
    print("saturated set: " + (" ".join(f"({i},{j})" for i, j in sorted(report.saturated_set)) or "none"))
    print("onu queue verdict margin")
    for (i, j), v in sorted(report.verdict.items()):
        print(f"{i} {j} {v.value} {report.binding_margin[(i, j)]!r}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "analysis.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["onu", "queue", "verdict", "margin", "theta", "delta"])
            for (i, j), v in sorted(report.verdict.items()):
                w.writerow([i, j, v.value, repr(report.binding_margin[(i, j)]),
                            repr(mf.theta) if mf else "", repr(mf.delta) if mf else ""])
        _write_manifest(args, args.out)
    stable = all(v is Verdict.STABLE for v in report.verdict.values())
    print("verdict: " + ("stable" if stable else "not stable"))
    return EXIT_OK if stable else EXIT_SATURATED


# -- simulate ------------------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    loaded = configfile.load(args.config)
    sim = loaded.simulation
    horizon = args.horizon if args.horizon is not None else sim.get("horizon")
    if horizon is None:
        raise UsageError("no horizon: pass --horizon or set it in [simulation]")
    warmup = args.warmup if args.warmup is not None else sim.get("warmup", 0.1 * horizon)
    window = args.window if args.window is not None else sim.get("window", 1e-3)
    if args.seed is None and "seed" in sim:
        args.seed = sim["seed"]
    _seed(args)
    # keep the resolved values so the manifest replays exactly
    args.horizon, args.warmup, args.window = horizon, warmup, window

    policy = loaded.policy
    if args.policy == "random":
        policy = policy if isinstance(policy, RandomPolling) else RandomPolling()
    elif args.policy == "periodic":
        policy = PeriodicPolling()
    elif args.policy == "gpon" and not isinstance(policy, GponFrame):
        raise UsageError("--policy gpon needs frame settings in the [policy] section")

    if isinstance(policy, GponFrame):
        report = run_gpon_frame(loaded.config, loaded.traffic, policy.frame, policy.delta_ratios,
                                horizon=horizon, warmup=warmup, seed=args.seed)
    else:
        report = run(loaded.config, loaded.traffic, policy, horizon, warmup, args.seed, window, audit=args.audit)
    paths = write_csv(report, args.out)
    _write_manifest(args, args.out)
    growing, flags = detect_growth(report, args.threshold)
    print(f"events: {report.events}")
    print(f"mean overhead fraction: {report.mean_overhead_fraction()!r}")
    for w in report.warnings:
        print(f"warning: {w}")
    if report.audit:
        print("audit: " + " ".join(f"{k}={v}" for k, v in report.audit.items()))
    print(f"wrote {len(paths)} files to {args.out}")
    if growing:
        print("backlog growth detected at: " + " ".join(f"({i},{j})" for (i, j), f in flags.items() if f))
        return EXIT_SATURATED
    print("no backlog growth detected")
    return EXIT_OK


# -- region ---------------------------------------------------------------------------------------


def cmd_region(args) -> int:
    loaded = configfile.load(args.config)
    spec = ClassSpec.from_loaded(loaded)
    rays = args.rays
    if rays is None:
        rays = [list(r) for r in fraction_rays(5)] if spec.n_classes == 2 else [[1.0] * spec.n_classes]
        args.rays = rays
    if not rays:
        raise UsageError("ray list is empty")
    for r in rays:
        if len(r) != spec.n_classes:
            raise UsageError(f"ray {r} needs {spec.n_classes} entries, one per group")
    os.makedirs(args.out, exist_ok=True)
    analytic = sim = None
    if args.mode in ("analytic", "both"):
        analytic = region_analytic(spec, rays, args.offset, args.monitor)
    if args.mode in ("sim", "both"):
        _seed(args)
        sim = [
            probe_boundary_sim(spec, r, args.resolution, args.seeds, args.horizon, args.warmup,
                               args.offset, args.monitor, args.threshold)
            for r in rays
        ]
    if analytic is not None:
        write_rays_csv(os.path.join(args.out, "region_analytic.csv"), analytic)
    if sim is not None:
        write_rays_csv(os.path.join(args.out, "region_sim.csv"), sim, analytic)
    _write_manifest(args, args.out)
    print("ray analytic sim rel_gap")
    for k, r in enumerate(rays):
        a = analytic[k].boundary_load if analytic else float("nan")
        s = sim[k].boundary_load if sim else float("nan")
        gap = (s - a) / a if analytic and sim else float("nan")
        print(f"{','.join(map(repr, r))} {a:.6g} {s:.6g} {gap:+.4f}")
    return EXIT_OK


# -- converge / toy ---------------------------------------------------------------------------------


def cmd_converge(args) -> int:
    _seed(args)
    sweep = convergence_sweep(args.Ns, args.ratio, args.load, args.window, args.horizon, args.warmup, args.seeds)
    os.makedirs(args.out, exist_ok=True)
    write_convergence_csv(os.path.join(args.out, "convergence.csv"), sweep)
    _write_manifest(args, args.out)
    print("n_onus std mean")
    for n, s, m in zip(sweep.Ns, sweep.std, sweep.mean):
        print(f"{n} {s:.6g} {m:.6g}")
    print(("PASS" if sweep.decreasing() else "FAIL") + ": standard deviation decreasing in N")
    return EXIT_OK


def cmd_toy(args) -> int:
    if not args.rho < args.s:
        raise UsageError(f"--rho {args.rho} must be below --s {args.s}: otherwise the busy queues outnumber the servers")
    _seed(args)
    checks = verify_toy_meanfield(args.N, args.s, args.rho, args.horizon, args.seeds, args.mu)
    os.makedirs(args.out, exist_ok=True)
    write_toy_csv(os.path.join(args.out, "toy.csv"), checks)
    _write_manifest(args, args.out)
    for c in checks:
        print(f"N={c.n_queues}: {'PASS' if c.sup_ok else 'FAIL'} sup|A_N - rho| < {c.sup_tol} on {c.sup_pass}/{len(c.sup_deviation)} seeds")
        print(f"N={c.n_queues}: {'PASS' if c.tv_ok else 'FAIL'} TV to Geometric({c.rho}) = {c.tv:.4g} < {c.tv_tol}")
        print(f"N={c.n_queues}: {'PASS' if c.hitting_ok else 'FAIL'} drain time T_N/N = "
              f"{c.mean_hitting_time / c.n_queues:.4g} <= {c.drain_bound:.4g} (mean T_N = {c.mean_hitting_time:.4g})")
    return EXIT_OK


# -- replay -------------------------------------------------------------------------------------------


def cmd_replay(args) -> int:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    params = dict(manifest["parameters"])
    if manifest.get("config"):
        params["config"] = manifest["config"]
    out = args.out or manifest["output_dir"]
    ns = argparse.Namespace(**params, out=out)
    ns.func = COMMANDS[manifest["command"]]
    return ns.func(ns)


COMMANDS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "region": cmd_region,
    "converge": cmd_converge,
    "toy": cmd_toy,
    "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wdmpon", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="analytic stability verdicts")
    a.add_argument("config")
    a.add_argument("--method", choices=ANALYSES, default="auto")
    a.add_argument("--selection", choices=("worst", "ranked", "ranked-theta"), default="worst",
                   help="queue tested each round of the saturated-set search")
    a.add_argument("--out", help="directory for analysis.csv and the manifest")

    s = sub.add_parser("simulate", help="discrete-event simulation")
    s.add_argument("config")
    s.add_argument("--horizon", type=_time)
    s.add_argument("--warmup", type=_time)
    s.add_argument("--window", type=_time)
    s.add_argument("--seed", type=int)
    s.add_argument("--policy", choices=("config", "random", "periodic", "gpon"), default="config")
    s.add_argument("--threshold", type=float, default=0.01, help="growth detector threshold")
    s.add_argument("--audit", action="store_true", help="check model invariants at every event")
    s.add_argument("--out", default="sim-out")

    r = sub.add_parser("region", help="capacity-region boundaries along rays")
    r.add_argument("config", help="groups in the file are the load classes")
    r.add_argument("--rays", type=_rays, help="semicolon-separated per-class directions, e.g. '1,1;1,0'")
    r.add_argument("--offset", type=_floats, help="per-class base loads added to every point")
    r.add_argument("--monitor", type=_ints, help="class indices whose stability is tracked")
    r.add_argument("--mode", choices=("sim", "analytic", "both"), default="both")
    r.add_argument("--resolution", type=float)
    r.add_argument("--seeds", type=_ints)
    r.add_argument("--horizon", type=_time)
    r.add_argument("--warmup", type=_time)
    r.add_argument("--threshold", type=float, default=0.01)
    r.add_argument("--out", default="region-out")

    c = sub.add_parser("converge", help="overhead-fraction fluctuations versus N")
    c.add_argument("--Ns", type=_ints, default=[10, 50, 100, 500])
    c.add_argument("--ratio", type=float, default=0.5, help="L/N")
    c.add_argument("--load", type=float, default=0.2, help="load per ONU")
    c.add_argument("--window", type=_time, default=1e-3)
    c.add_argument("--horizon", type=_time, default=0.2)
    c.add_argument("--warmup", type=_time, default=0.02)
    c.add_argument("--seeds", type=_ints)
    c.add_argument("--out", default="converge-out")

    t = sub.add_parser("toy", help="homogeneous toy-model checks")
    t.add_argument("--N", type=_ints, default=[1000])
    t.add_argument("--s", type=float, default=0.5, help="servers per queue")
    t.add_argument("--rho", type=float, default=0.3)
    t.add_argument("--mu", type=float, default=1.0)
    t.add_argument("--horizon", type=float, default=10.0, help="in mean service times")
    t.add_argument("--seeds", type=_ints, default=list(range(20)))
    t.add_argument("--out", default="toy-out")

    m = sub.add_parser("replay", help="re-run a manifest")
    m.add_argument("manifest")
    m.add_argument("--out", help="write somewhere other than the recorded directory")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (configfile.ConfigError, UsageError, RegimeError, NoSolution, ProbeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
