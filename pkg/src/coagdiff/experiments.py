"""Built-in experiments E1-E6.

Each experiment reads its parameters and tolerances from a
:class:`~coagdiff.config.Settings`, writes CSV artifacts to an output
directory and returns an :class:`ExperimentResult` whose checks decide
the CLI exit status.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import coagulation, duality, kernels
from .config import ConfigError, Settings
from .grid import DiffusionProfile, Grid1D, SpaceTimeSeries
from .simulator import (InitialData, SimConfig, averaged_diffusivity_field, gelation_scan,
                        homogeneous_config, moment_field, run)


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    op: str  # "<=", ">=", "<"
    passed: bool = field(init=False)

    def __post_init__(self):
        v, t = float(self.value), float(self.threshold)
        self.passed = bool({"<=": v <= t, ">=": v >= t, "<": v < t}[self.op]) and not math.isnan(v)

    def to_dict(self) -> dict:
        return {"name": self.name, "value": float(self.value), "threshold": float(self.threshold),
                "op": self.op, "passed": self.passed}

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.6g} {self.op} {self.threshold:.6g}"


@dataclass
class ExperimentResult:
    name: str
    summary: dict
    checks: list = field(default_factory=list)
    files: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def write_rows(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# -- weak form sweep --------------------------------------------------------

FAMILIES = ("constant", "sum_power", "product_power", "multiplicative", "table")


def random_kernel(family: str, n: int, rng: np.random.Generator) -> kernels.KernelSpec:
    if family == "constant":
        return kernels.Constant(float(rng.uniform(0.1, 3.0)))
    if family == "sum_power":
        return kernels.SumPower(float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.0, 1.0)))
    if family == "product_power":
        return kernels.ProductPower(float(rng.uniform(0.1, 2.0)), float(rng.uniform(0, 1)),
                                    float(rng.uniform(0, 1)))
    if family == "multiplicative":
        return kernels.Multiplicative()
    if family == "table":
        a = rng.uniform(0.0, 2.0, size=(n, n))
        return kernels.Table(0.5 * (a + a.T))
    raise ValueError(f"unknown kernel family {family!r}")


def weak_form_sweep(ns=(8, 64, 256), trials: int = 100, seed: int = 0,
                    families=FAMILIES) -> dict:
    """Worst-case weak-form and mass-nullity errors over random ``(c, phi)``.

    Errors are normalised: the weak-form mismatch by the sum of absolute
    summands, the mass functional by ``sum_i i (gain_i + loss_i)``.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for family in families:
        worst_weak, worst_mass = 0.0, 0.0
        for n in ns:
            for _ in range(trials):
                kern = random_kernel(family, n, rng)
                c = rng.uniform(0, 1, n) * np.exp(-rng.uniform(0, 5) * np.arange(n) / n)
                phi = rng.normal(size=n)
                lhs = coagulation.weak_form_lhs(c, kern, phi)
                rhs = coagulation.weak_form_rhs(c, kern, phi)
                scale = coagulation.weak_form_scale(c, kern, phi)
                if scale > 0:
                    worst_weak = max(worst_weak, abs(lhs - rhs) / scale)
                g, lo = coagulation.gain(c, kern), coagulation.loss(c, kern)
                idx = np.arange(1, n + 1)
                mscale = float(idx @ (g + lo))
                if mscale > 0:
                    worst_mass = max(worst_mass, abs(float(idx @ (g - lo))) / mscale)
        out[family] = {"weak_form_rel": worst_weak, "mass_null_rel": worst_mass}
    return out


def run_weak_form(s: Settings, out: Path | None, ns=(8, 64, 256), trials=100) -> ExperimentResult:
    t0 = time.perf_counter()
    res = weak_form_sweep(ns, trials, s.get_int("output", "seed"))
    checks = []
    for fam, r in res.items():
        checks.append(Check(f"weak_form[{fam}]", r["weak_form_rel"], s.tol("weakform_tol"), "<="))
        checks.append(Check(f"mass_null[{fam}]", r["mass_null_rel"], s.tol("mass_null_tol"), "<="))
    summary = {"families": res, "ns": list(ns), "trials": trials,
               "wall_clock_s": time.perf_counter() - t0}
    return ExperimentResult("weakform-test", summary, checks)


# -- E1 ---------------------------------------------------------------------

def save_trajectory(rec, out: Path, frames: bool = True) -> list[str]:
    files = ["mass.csv"]
    write_rows(out / "mass.csv", ["t", "mass", "tail_mass"],
               zip(rec.times, rec.mass, rec.tail_mass))
    if frames:
        for k in sorted(rec.moment_frames):
            name = f"rho{k:g}.csv"
            rec.moment_series(k).to_csv(out / name, f"rho{k:g}")
            files.append(name)
    write_rows(out / "species_sup.csv", ["i", "max_c"],
               ((i + 1, float(v)) for i, v in enumerate(rec.species_sup)))
    files.append("species_sup.csv")
    return files


def e1_settings() -> Settings:
    s = Settings()
    s.set("grid", "n", 128)
    s.set("grid", "N", 32)
    return s


def e1(s: Settings, out: Path) -> ExperimentResult:
    """Mass conservation of the full split scheme."""
    cfg = s.sim_config()
    rec = run(cfg)
    files = save_trajectory(rec, out, s.get_bool("output", "frames"))
    summary = rec.summary()
    checks = [Check("mass_drift_rel", summary["mass_drift_rel"], s.tol("mass_drift_tol"), "<=")]
    return ExperimentResult("E1", summary, checks, files)


# -- E2 ---------------------------------------------------------------------

def e2_settings() -> Settings:
    return Settings()


def e2(s: Settings, out: Path) -> ExperimentResult:
    """Homogeneous runs against closed-form moment solutions."""
    init = InitialData("monodisperse", 1.0)
    dt = min(s.get_float("time", "dt"), 1e-3)
    cfg0 = homogeneous_config(kernels.Constant(2.0), 512, 1.0, dt, initial=init, moments=(0, 1))
    r0 = run(cfg0)
    t0 = np.array(r0.times)
    rho0 = np.array(r0.moment_frames[0])[:, 0]
    oracle0 = 1.0 / (1.0 + t0)
    write_rows(out / "constant_rho0.csv", ["t", "rho0", "oracle"], zip(t0, rho0, oracle0))

    cfg2 = homogeneous_config(kernels.Multiplicative(), 2000, 0.5, dt, initial=init, moments=(1, 2))
    r2 = run(cfg2)
    t2 = np.array(r2.times)
    rho2 = np.array(r2.moment_frames[2])[:, 0]
    oracle2 = 1.0 / (1.0 - t2)
    write_rows(out / "multiplicative_rho2.csv", ["t", "rho2", "oracle"], zip(t2, rho2, oracle2))

    err0 = abs(rho0[-1] - 0.5)
    err2 = abs(rho2[-1] - 2.0) / 2.0
    summary = {
        "constant": {"rho0_final": float(rho0[-1]), "oracle": 0.5, "abs_error": float(err0),
                     "rejections": r0.rejections},
        "multiplicative": {"rho2_final": float(rho2[-1]), "oracle": 2.0, "rel_error": float(err2),
                           "rejections": r2.rejections},
    }
    checks = [Check("constant_rho0_abs_error", err0, s.tol("rho0_abs_tol"), "<="),
              Check("multiplicative_rho2_rel_error", err2, s.tol("rho2_rel_tol"), "<=")]
    return ExperimentResult("E2", summary, checks, ["constant_rho0.csv", "multiplicative_rho2.csv"])


# -- E3 ---------------------------------------------------------------------

def e3_settings() -> Settings:
    s = Settings()
    s.set("kernel", "family", "product_power")
    s.set("kernel", "alpha", 0.6)
    s.set("kernel", "beta", 0.6)
    s.set("time", "dt", 1e-2)
    s.set("time", "T", 5.0)
    return s


def gelation_checks(scan: dict, drop: float, persist: float) -> tuple[list, dict]:
    """Decrease of retained mass from smallest to largest ``n`` and
    persistence of the per-doubling changes."""
    m = np.asarray(scan["retained_mass"])
    m0 = scan["initial_mass"]
    incr = np.diff(m)
    ratios = [float(incr[k + 1] / incr[k]) if incr[k] != 0 else float("nan")
              for k in range(incr.size - 1)]
    decrease = float(m[0] - m[-1])
    checks = [Check("retained_mass_decrease", decrease, drop * m0, ">=")]
    for k, r in enumerate(ratios):
        checks.append(Check(f"doubling_persistence[{k}]", r, persist, ">="))
    return checks, {"increments": incr.tolist(), "increment_ratios": ratios,
                    "decrease": decrease}


def e3(s: Settings, out: Path) -> ExperimentResult:
    """Truncation study for a gelling kernel."""
    kern = s.kernel()
    scan = gelation_scan(kern, s.get_ints("scan", "ns"), s.get_float("time", "T"),
                         s.get_float("time", "dt"), s.raw("time", "scheme"),
                         s.initial() if ("initial", "family") in s.explicit else None,
                         s.get_float("scan", "fraction"))
    checks, extra = gelation_checks(scan, s.tol("gelation_drop"), s.tol("gelation_persist"))
    deficit = [scan["initial_mass"] - m for m in scan["retained_mass"]]
    write_rows(out / "gelation.csv", ["n", "retained_mass", "deficit", "total_mass"],
               zip(scan["n"], scan["retained_mass"], deficit, scan["total_mass"]))
    summary = dict(scan, deficit=deficit, **extra)
    return ExperimentResult("E3", summary, checks, ["gelation.csv"])


# -- E4 ---------------------------------------------------------------------

E4_NS = (50, 100, 200, 400)
CASCADE_NS = (64, 128, 256)


def e4_settings() -> Settings:
    s = Settings()
    s.set("grid", "N", 32)
    return s


def e4_config(s: Settings, n: int) -> SimConfig:
    s.set("grid", "n", n)
    return s.sim_config()


def e4(s: Settings, out: Path) -> ExperimentResult:
    """Boundedness of second-moment norms and species maxima under
    truncation refinement."""
    base_n = s.raw("grid", "n")
    ps = s.get_floats("output", "lp")
    norms, sups = {}, {}
    for n in sorted(set(E4_NS) | set(CASCADE_NS)):
        rec = run(e4_config(s, n))
        if n in E4_NS:
            norms[n] = {p: rec.lp_norm(2, p) for p in ps}
        if n in CASCADE_NS:
            sups[n] = rec.species_sup[:8].copy()
    s.set("grid", "n", base_n)
    checks, ratios = [], {}
    for p in ps:
        vals = np.array([norms[n][p] for n in E4_NS])
        ratios[f"L{p:g}"] = float(vals.max() / vals.min())
        checks.append(Check(f"rho2_L{p:g}_max_over_min", ratios[f"L{p:g}"],
                            s.tol("propagation_ratio"), "<="))
    S = np.array([sups[n] for n in CASCADE_NS])
    spread = float(np.max((S.max(axis=0) - S.min(axis=0)) / S.max(axis=0)))
    checks.append(Check("species_sup_spread", spread, s.tol("cascade_rel_tol"), "<"))
    write_rows(out / "moment_norms.csv", ["n"] + [f"rho2_L{p:g}" for p in ps],
               ([n] + [norms[n][p] for p in ps] for n in E4_NS))
    write_rows(out / "species_sup.csv", ["n"] + [f"c{i}" for i in range(1, 9)],
               ([n] + list(sups[n]) for n in CASCADE_NS))
    summary = {"norms": {str(n): {f"L{p:g}": v for p, v in d.items()} for n, d in norms.items()},
               "max_over_min": ratios, "species_sup": {str(n): sups[n].tolist() for n in CASCADE_NS},
               "species_sup_spread": spread}
    return ExperimentResult("E4", summary, checks, ["moment_norms.csv", "species_sup.csv"])


# -- E5 ---------------------------------------------------------------------

def e5_settings() -> Settings:
    s = Settings()
    s.set("duality", "nx", 32)
    s.set("duality", "nt", 32)
    return s


def e5(s: Settings, out: Path) -> ExperimentResult:
    """Duality constant for ``q = 2`` and the discrete energy identity."""
    nx, nt = s.get_int("duality", "nx"), s.get_int("duality", "nt")
    T, samples = s.get_float("duality", "T"), s.get_int("duality", "samples")
    seed = s.get_int("duality", "seed")
    rows, per_m, worst_sample = [], {}, 0.0
    for m in (0.5, 1.0, 2.0):
        est = duality.estimate_K(m, 2.0, nx, nt, T, samples, seed)
        per_m[str(m)] = est.to_dict()
        worst_sample = max(worst_sample, float(est.ratios.max()))
        rows.extend((m, k, kind, float(r)) for k, (kind, r) in enumerate(zip(est.kinds, est.ratios)))
    k_est = max(v["k_estimate"] for v in per_m.values())
    k_min = min(v["k_estimate"] for v in per_m.values())
    write_rows(out / "k_samples.csv", ["m", "sample", "kind", "ratio"], rows)

    rng = np.random.default_rng(seed)
    g, times = Grid1D(nx), duality.time_mesh(T, nt)
    energy = []
    for _ in range(50):
        f = SpaceTimeSeries(g, times, rng.normal(size=(nt + 1, nx)))
        energy.append(duality.energy_identity_check(float(rng.uniform(0.2, 3.0)), f))
    write_rows(out / "energy.csv", ["trial", "lhs", "matched"],
               ((k, e.lhs, e.matched) for k, e in enumerate(energy)))
    violations = sum(1 for e in energy if e.lhs > 0)

    q4 = duality.estimate_K(1.0, 4.0, nx, nt, T, samples, seed)
    summary = {"k_estimate": k_est, "per_m": per_m, "max_sample_ratio": worst_sample,
               "energy_trials": len(energy), "energy_violations": violations,
               "energy_max_lhs": max(e.lhs for e in energy),
               "q4_baseline": q4.to_dict()}
    eps = s.tol("k2_upper_roundoff")
    checks = [Check("k2_max_sample_ratio", worst_sample, 1.0 + eps, "<="),
              Check("k2_estimate_upper", k_est, 1.0 + eps, "<="),
              Check("k2_estimate_lower", k_min, 1.0 - s.tol("k2_lower_tol"), ">="),
              Check("energy_sign_violations", violations, 0, "<="),
              Check("q4_estimate_lower", q4.estimate, 1.0 - 1e-9, ">=")]
    return ExperimentResult("E5", summary, checks, ["k_samples.csv", "energy.csv"])


# -- E6 ---------------------------------------------------------------------

def e6_settings() -> Settings:
    return Settings()


def dual_problem(s: Settings, pattern: str | None = None, a=None, b=None) -> duality.DualProblem:
    nx, nt = s.get_int("duality", "nx"), s.get_int("duality", "nt")
    a = s.get_float("duality", "a") if a is None else a
    b = s.get_float("duality", "b") if b is None else b
    g = Grid1D(nx)
    blocks = tuple(s.get_ints("duality", "blocks"))
    if len(blocks) != 2:
        raise ConfigError("[duality] blocks must be two integers 'time,space'")
    M = duality.coefficient_pattern(pattern or s.raw("duality", "pattern").strip(), g, nt, a, b,
                                    blocks, s.get_int("duality", "seed"))
    forcing = s.raw("duality", "forcing").strip()
    if forcing == "cos":
        f = np.tile(np.cos(np.pi * g.x), (nt, 1))
    elif forcing == "random":
        f = np.random.default_rng(s.get_int("duality", "seed") + 1).normal(size=(nt, nx))
    elif forcing == "constant":
        f = np.ones((nt, nx))
    else:
        raise ConfigError(f"[duality] forcing: unknown forcing {forcing!r}")
    return duality.DualProblem(g, s.get_float("duality", "T"), M, f,
                               q=s.get_float("duality", "q"), a=a, b=b)


def contraction_study(s: Settings, prob: duality.DualProblem):
    """Solve from three initial iterates and compare the fixed points.

    Returns ``(summary, checks, result_from_zero_start)``.
    """
    rtol, max_iter = s.get_float("duality", "rtol"), s.get_int("duality", "max_iter")
    rng = np.random.default_rng(s.get_int("duality", "seed") + 2)
    shape = (prob.nt + 1, prob.grid.N)
    f_scaled = np.vstack([np.zeros(prob.grid.N), prob.f]) * prob.dt
    starts = {"zero": None, "f_scaled": f_scaled, "random": rng.normal(size=shape)}
    results = {k: duality.solve_dual_contraction(prob, v0, rtol, max_iter) for k, v0 in starts.items()}
    ref = results["zero"]
    scale = max(float(np.max(np.abs(ref.solution.v))), 1e-300)
    spread = max(float(np.max(np.abs(r.solution.v - ref.solution.v))) / scale
                 for r in results.values())
    fn = duality._lq(prob.f, prob.q, prob.grid.h, prob.dt)
    worst_ratio = max(r.observed_ratio for r in results.values())
    worst_res = max(r.residual / fn for r in results.values())
    checks = [
        Check("observed_ratio", worst_ratio, ref.bound + s.tol("contraction_slack"), "<="),
        Check("residual_rel", worst_res, s.tol("residual_rtol"), "<="),
        Check("initial_iterate_independence", spread, s.tol("independence_tol"), "<="),
    ]
    summary = {k: r.to_dict() for k, r in results.items()}
    summary["independence_spread"] = spread
    return summary, checks, ref


def pairing_study(dt: float = 1e-2, T: float = 0.5, n: int = 64, N: int = 32):
    """Integration-by-parts audit of ``rho_1`` from a simulator run."""
    diff = DiffusionProfile.limit(1.0, 1.0, 1.0)
    cfg = SimConfig(kernel=kernels.SumPower(1.0, 0.5), diffusion=diff, n=n, N=N, dt=dt, T=T,
                    initial=InitialData("monodisperse", 1.0, 0.5), output_stride=1, moments=(1,))
    rec = run(cfg)
    g, times = cfg.grid, np.array(rec.state_times)
    rho = np.array([moment_field(c, 1) for c in rec.states])
    M = np.array([averaged_diffusivity_field(c, 1, 1, diff) for c in rec.states])
    phi = np.array([1.0 + 0.5 * np.cos(np.pi * g.x) * np.cos(t) for t in times])
    return duality.pairing_audit(SpaceTimeSeries(g, times, rho), SpaceTimeSeries(g, times, M),
                                 SpaceTimeSeries(g, times, phi))


def e6(s: Settings, out: Path) -> ExperimentResult:
    """Contraction solver on discontinuous coefficients."""
    prob = dual_problem(s)
    summary, checks, _ = contraction_study(s, prob)
    a, b = prob.a, prob.b
    rows = []
    for pattern in ("constant", "checkerboard", "random-two-valued"):
        res = duality.solve_dual_contraction(dual_problem(s, pattern), rtol=s.get_float("duality", "rtol"),
                                             max_iter=s.get_int("duality", "max_iter"))
        rows.append((pattern, a, b, res.iterations, res.observed_ratio, res.bound, res.residual_rel))
    m = 0.5 * (a + b)
    for half_width in (0.1, 0.3, 0.5, 0.7):
        res = duality.solve_dual_contraction(
            dual_problem(s, "checkerboard", m * (1 - half_width), m * (1 + half_width)),
            rtol=s.get_float("duality", "rtol"), max_iter=s.get_int("duality", "max_iter"))
        rows.append(("checkerboard", m * (1 - half_width), m * (1 + half_width), res.iterations,
                     res.observed_ratio, res.bound, res.residual_rel))
    write_rows(out / "contraction.csv",
               ["pattern", "a", "b", "iterations", "observed_ratio", "bound", "residual_rel"], rows)
    pair = pairing_study()
    summary["pairing"] = pair.to_dict()
    checks.append(Check("pairing_rel_error", pair.rel_error, s.tol("pairing_rel_tol"), "<="))
    return ExperimentResult("E6", summary, checks, ["contraction.csv"])


EXPERIMENTS = {
    "E1": (e1_settings, e1),
    "E2": (e2_settings, e2),
    "E3": (e3_settings, e3),
    "E4": (e4_settings, e4),
    "E5": (e5_settings, e5),
    "E6": (e6_settings, e6),
}
