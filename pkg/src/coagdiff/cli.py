"""Command-line entry point.

Exit codes: 0 all checks pass, 1 a numeric check failed, 2 usage or
configuration error, 3 solver abort (partial artifacts are written).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, duality, kernels
from .config import SCHEMA, ConfigError, Settings
from .experiments import (EXPERIMENTS, Check, ExperimentResult, contraction_study, dual_problem,
                          e3_settings, gelation_checks, run_weak_form, save_trajectory, write_rows)
from .grid import write_frames_csv
from .simulator import (SolverAbort, averaged_diffusivity_field, gelation_scan, moment_field,
                        psi_bounds, run, tail_moment_field)

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3

# flag -> (section, key); each overrides exactly one config key
SIM_FLAGS = {
    "n": ("grid", "n"), "N": ("grid", "N"), "dt": ("time", "dt"), "T": ("time", "T"),
    "scheme": ("time", "scheme"), "output_stride": ("time", "output_stride"),
    "tail_index": ("output", "tail_index"), "seed": ("output", "seed"),
}
DUAL_FLAGS = {
    "m": ("duality", "m"), "q": ("duality", "q"), "p": ("duality", "p"), "a": ("duality", "a"),
    "b": ("duality", "b"), "nx": ("duality", "nx"), "nt": ("duality", "nt"),
    "T": ("duality", "T"), "samples": ("duality", "samples"), "seed": ("duality", "seed"),
    "pattern": ("duality", "pattern"), "blocks": ("duality", "blocks"),
    "forcing": ("duality", "forcing"), "rtol": ("duality", "rtol"),
    "max_iter": ("duality", "max_iter"),
}


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default)


# -- argument parsing -------------------------------------------------------

def _common(p: argparse.ArgumentParser, config_required=False):
    p.add_argument("--config", required=config_required, help="sectioned key-value config file")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key (repeatable)")


def _flags(p: argparse.ArgumentParser, table: dict, names):
    for name in names:
        section, key = table[name]
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"flag_{name}", metavar="VALUE",
                       help=f"overrides [{section}] {key}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coagdiff", allow_abbrev=False,
                                     description="Coagulation-diffusion simulation and duality tools")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (("simulate", "run the split scheme from a config"),
                        ("homogeneous", "space-independent run (single cell)"),
                        ("moments", "run and write tail-moment diagnostics")):
        p = sub.add_parser(name, help=help_, allow_abbrev=False)
        _common(p, config_required=True)
        _flags(p, SIM_FLAGS, SIM_FLAGS)

    p = sub.add_parser("gelation-scan", help="retained mass versus truncation size",
                       allow_abbrev=False)
    _common(p)
    _flags(p, SIM_FLAGS, ["dt", "T", "scheme"])
    p.add_argument("--ns", dest="flag_ns", metavar="LIST", help="overrides [scan] ns")

    p = sub.add_parser("duality-k", help="sampled lower bound on the duality constant",
                       allow_abbrev=False)
    _common(p)
    _flags(p, DUAL_FLAGS, ["m", "q", "nx", "nt", "T", "samples", "seed"])

    p = sub.add_parser("closeness", help="evaluate the closeness condition", allow_abbrev=False)
    _common(p)
    _flags(p, DUAL_FLAGS, ["a", "b", "p", "nx", "nt", "samples", "seed"])

    p = sub.add_parser("dual-solve", help="contraction solver for a non-divergence problem",
                       allow_abbrev=False)
    _common(p)
    _flags(p, DUAL_FLAGS, ["a", "b", "q", "nx", "nt", "T", "pattern", "blocks", "seed",
                           "forcing", "rtol", "max_iter"])

    p = sub.add_parser("weakform-test", help="random sweep of the weak-form identity",
                       allow_abbrev=False)
    _common(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--ns", default="8,64,256")
    p.add_argument("--seed", dest="flag_seed", metavar="VALUE", help="overrides [output] seed")

    p = sub.add_parser("experiment", help="run a built-in experiment", allow_abbrev=False)
    p.add_argument("name", choices=sorted(EXPERIMENTS))
    _common(p)
    return parser


def _settings(args, base: Settings | None = None) -> Settings:
    s = base or Settings()
    if args.config:
        s.update_from_file(args.config)
    s.apply_overrides(args.set)
    # T and seed exist in both tables; the command decides which section wins
    if args.command in ("duality-k", "closeness", "dual-solve"):
        tables = {**SIM_FLAGS, **DUAL_FLAGS}
    else:
        tables = {**DUAL_FLAGS, **SIM_FLAGS}
    for name, value in vars(args).items():
        if not name.startswith("flag_") or value is None:
            continue
        key = name[5:]
        if key == "ns":
            s.set("scan", "ns", value)
        else:
            s.set(*tables[key], value)
    if args.out:
        s.set("output", "dir", args.out)
    return s


# -- output -----------------------------------------------------------------

def _finish(s: Settings, out: Path, result: ExperimentResult, command: str,
            status: int | None = None) -> int:
    passed = result.passed
    report = {
        "schema": SCHEMA,
        "command": command,
        "experiment": result.name,
        "version": __version__,
        "passed": passed,
        "checks": [c.to_dict() for c in result.checks],
        "summary": result.summary,
    }
    (out / "summary.json").write_text(_dumps(report) + "\n")
    manifest = {
        "schema": SCHEMA,
        "experiment": result.name,
        "version": __version__,
        "seed": s.get_int("output", "seed"),
        "config": s.snapshot(),
        "files": ["summary.json", "manifest.json"] + list(result.files),
    }
    (out / "manifest.json").write_text(_dumps(manifest) + "\n")
    for c in result.checks:
        print(c.line())
    print(f"wrote {out / 'summary.json'}")
    if status is not None:
        return status
    return EXIT_OK if passed else EXIT_CHECK


def _outdir(s: Settings) -> Path:
    out = Path(s.raw("output", "dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ---------------------------------------------------------------

def _sim_checks(s: Settings, rec) -> list[Check]:
    cfg = rec.config
    scale = max(float(np.max(np.abs(c))) for c in rec.states) or 1.0
    lowest = min(float(c.min()) for c in rec.states)
    checks = [Check("min_concentration", lowest, -s.tol("positivity_tol") * scale, ">=")]
    try:
        gelling = cfg.kernel.growth() is kernels.Growth.SUPERLINEAR
    except kernels.KernelError:
        gelling = False
    if cfg.scheme == "rk4" and not gelling:
        checks.append(Check("mass_drift_rel", rec.mass_drift_rel(), s.tol("mass_drift_tol"), "<="))
    checks.append(Check("mass_increase_rel", rec.max_mass_increase_rel(),
                        s.tol("mass_drift_tol"), "<="))
    return checks


def _simulate(s: Settings, command: str) -> int:
    cfg = s.sim_config(homogeneous=command == "homogeneous")
    out = _outdir(s)
    try:
        rec = run(cfg)
    except SolverAbort as exc:
        partial = exc.partial
        files = save_trajectory(partial, out, s.get_bool("output", "frames")) if partial.times else []
        summary = dict(partial.summary(), error=str(exc)) if partial.times else {"error": str(exc)}
        print(f"solver abort: {exc}", file=sys.stderr)
        return _finish(s, out, ExperimentResult(command, summary, [], files), command, EXIT_ABORT)
    files = save_trajectory(rec, out, s.get_bool("output", "frames"))
    result = ExperimentResult(command, rec.summary(), _sim_checks(s, rec), files)
    if command == "moments":
        result.files += _moment_diagnostics(s, rec, out, result)
    return _finish(s, out, result, command)


def _moment_diagnostics(s: Settings, rec, out: Path, result: ExperimentResult) -> list[str]:
    cfg = rec.config
    I = cfg.resolved_tail_index()
    g = cfg.grid
    files = []
    lo, hi = cfg.diffusion.tail_bounds(I)
    worst_tail, worst_range = 0.0, 0.0
    for k in cfg.moments:
        full = np.array([moment_field(c, k) for c in rec.states])
        tail = np.array([tail_moment_field(c, k, I) for c in rec.states])
        avg = np.array([averaged_diffusivity_field(c, k, I, cfg.diffusion) for c in rec.states])
        worst_tail = max(worst_tail, float(np.max((tail - full) / np.maximum(full, 1e-300))))
        worst_range = max(worst_range, float(max(lo - avg.min(), avg.max() - hi, 0.0)))
        write_frames_csv(out / f"rho{k:g}_tail.csv", g, rec.state_times, tail, f"rho{k:g}_I")
        write_frames_csv(out / f"M{k:g}.csv", g, rec.state_times, avg, f"M{k:g}_I")
        files += [f"rho{k:g}_tail.csv", f"M{k:g}.csv"]
    C = float(s.section("kernel").get("C", s.section("kernel").get("c0", 1.0)))
    if I >= 2:
        rows = [(t,) + psi_bounds(c, I, C) for t, c in zip(rec.state_times, rec.states)]
        write_rows(out / "psi.csv", ["t", "mu1", "mu2"], rows)
        files.append("psi.csv")
    result.summary["tail_index"] = I
    result.summary["tail_diffusivity_bounds"] = [lo, hi]
    result.checks.append(Check("tail_moment_excess_rel", worst_tail, 1e-12, "<="))
    result.checks.append(Check("averaged_diffusivity_out_of_range", worst_range, 0.0, "<="))
    return files


def _gelation(s: Settings) -> int:
    out = _outdir(s)
    scan = gelation_scan(s.kernel(), s.get_ints("scan", "ns"), s.get_float("time", "T"),
                         s.get_float("time", "dt"), s.raw("time", "scheme").strip(),
                         s.initial(), s.get_float("scan", "fraction"))
    checks, extra = gelation_checks(scan, s.tol("gelation_drop"), s.tol("gelation_persist"))
    write_rows(out / "gelation.csv", ["n", "retained_mass", "total_mass"],
               zip(scan["n"], scan["retained_mass"], scan["total_mass"]))
    return _finish(s, out, ExperimentResult("gelation-scan", dict(scan, **extra), checks,
                                            ["gelation.csv"]), "gelation-scan")


def _report(obj, checks=()) -> int:
    print(_dumps(obj))
    for c in checks:
        print(c.line(), file=sys.stderr)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK


def _duality_k(s: Settings) -> int:
    q = s.get_float("duality", "q")
    if not q > 1:
        raise ConfigError("q must exceed 1")
    est = duality.estimate_K(s.get_float("duality", "m"), q, s.get_int("duality", "nx"),
                             s.get_int("duality", "nt"), s.get_float("duality", "T"),
                             s.get_int("duality", "samples"), s.get_int("duality", "seed"))
    checks = [Check("k_estimate_lower", est.estimate, 1.0 - 1e-9, ">=")]
    if q == 2:
        checks.append(Check("k2_estimate_upper", est.estimate, 1.0 + s.tol("k2_upper_roundoff"), "<="))
    return _report(dict(est.to_dict(), schema=SCHEMA), checks)


def _closeness(s: Settings) -> int:
    a, b, p = (s.get_float("duality", k) for k in ("a", "b", "p"))
    if not (0 < a <= b) or not p > 1:
        raise ConfigError("closeness needs 0 < a <= b and p > 1")
    rep = duality.check_closeness(a, b, p, nx=s.get_int("duality", "nx"), nt=s.get_int("duality", "nt"),
                                  samples=s.get_int("duality", "samples"),
                                  seed=s.get_int("duality", "seed"))
    out = dict(rep.to_dict(), schema=SCHEMA)
    print(_dumps(out))
    return EXIT_OK if rep.satisfied else EXIT_CHECK


def _dual_solve(s: Settings) -> int:
    try:
        prob = dual_problem(s)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[duality] {exc}") from exc
    try:
        summary, checks, sol = contraction_study(s, prob)
    except duality.NonConvergence as exc:
        print(_dumps({"schema": SCHEMA, "error": str(exc), "observed_ratio": exc.observed_ratio}))
        return EXIT_ABORT
    out = _outdir(s)
    sol.u.to_csv(out / "u.csv", "u")
    summary["m"] = prob.m
    return _finish(s, out, ExperimentResult("dual-solve", summary, checks, ["u.csv"]), "dual-solve")


def _weakform(s: Settings, args) -> int:
    try:
        ns = tuple(int(v) for v in args.ns.split(","))
    except ValueError:
        raise ConfigError(f"--ns: invalid integer list {args.ns!r}") from None
    if args.trials < 1 or any(n < 1 for n in ns):
        raise ConfigError("--trials and --ns must be positive")
    out = _outdir(s)
    result = run_weak_form(s, out, ns, args.trials)
    return _finish(s, out, result, "weakform-test")


def _experiment(args) -> int:
    make, fn = EXPERIMENTS[args.name]
    s = _settings(args, make())
    if args.out is None and ("output", "dir") not in s.explicit:
        s.set("output", "dir", str(Path("out") / args.name))
    out = _outdir(s)
    try:
        result = fn(s, out)
    except SolverAbort as exc:
        print(f"solver abort: {exc}", file=sys.stderr)
        partial = exc.partial
        files = save_trajectory(partial, out) if partial is not None and partial.times else []
        return _finish(s, out, ExperimentResult(args.name, {"error": str(exc)}, [], files),
                       f"experiment {args.name}", EXIT_ABORT)
    return _finish(s, out, result, f"experiment {args.name}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "experiment":
            return _experiment(args)
        if args.command == "gelation-scan":
            s = _settings(args, e3_settings())
            return _gelation(s)
        s = _settings(args)
        if args.command in ("simulate", "homogeneous", "moments"):
            return _simulate(s, args.command)
        if args.command == "duality-k":
            return _duality_k(s)
        if args.command == "closeness":
            return _closeness(s)
        if args.command == "dual-solve":
            return _dual_solve(s)
        if args.command == "weakform-test":
            return _weakform(s, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (kernels.KernelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    parser.error(f"unknown command {args.command}")
    return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
