"""Parabolic duality constants and the non-divergence heat solver.

Everything here works on a uniform time mesh ``t_k = k dt`` and the
cell-centred Neumann grid.  Time discretisation is backward Euler, so a
forcing is a step function: its value on ``(t_{k-1}, t_k]`` is the frame
at ``t_k`` (the frame at ``t_0`` is never used).  Space-time norms
therefore use the rectangle rule over ``k = 1..M``, which is the
quadrature under which the backward-Euler energy estimate holds exactly.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid1D, SpaceTimeSeries, TridiagonalFactor, gradient, laplacian_apply


class NonConvergence(RuntimeError):
    """The fixed-point iteration did not reach its tolerance."""

    def __init__(self, message, observed_ratio):
        super().__init__(message)
        self.observed_ratio = observed_ratio


# -- mesh helpers -----------------------------------------------------------

def time_mesh(T: float, nt: int) -> np.ndarray:
    return np.linspace(0.0, T, nt + 1)


def _steps(f: SpaceTimeSeries) -> tuple[Grid1D, float, np.ndarray]:
    dts = np.diff(f.times)
    if dts.size == 0:
        raise ValueError("forcing needs at least two time stamps")
    dt = float(dts.mean())
    if np.max(np.abs(dts - dt)) > 1e-9 * dt:
        raise ValueError("duality solvers need a uniform time mesh")
    return f.grid, dt, f.frames[1:]


def _lq(values: np.ndarray, q: float, h: float, dt: float) -> float:
    return float(np.sum(np.abs(values) ** q) * h * dt) ** (1.0 / q)


@dataclass
class HeatSolution:
    """Backward-Euler solution ``v`` at ``t_0..t_M`` with its discrete
    time derivative and Laplacian at ``t_1..t_M``."""

    grid: Grid1D
    times: np.ndarray
    v: np.ndarray = field(repr=False)
    dvdt: np.ndarray = field(repr=False)
    lap: np.ndarray = field(repr=False)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def series(self) -> SpaceTimeSeries:
        return SpaceTimeSeries(self.grid, self.times, self.v)

    def z_norm(self, m: float, q: float) -> float:
        """``(||dv/dt||_q^q + m^q ||Lap v||_q^q)^(1/q)``."""
        h, dt = self.grid.h, self.dt
        return (_lq(self.dvdt, q, h, dt) ** q + m**q * _lq(self.lap, q, h, dt) ** q) ** (1.0 / q)


def _heat_solve(g: Grid1D, dt: float, m: float, F: np.ndarray, factor=None) -> np.ndarray:
    """``v^k`` from ``(v^k - v^{k-1})/dt - m L v^k = F^k``, ``v^0 = 0``."""
    factor = factor or TridiagonalFactor(g, m * dt)
    v = np.zeros((F.shape[0] + 1, g.N))
    for k in range(F.shape[0]):
        v[k + 1] = factor.solve(v[k] + dt * F[k])
    return v


def _package(g, times, v) -> HeatSolution:
    dt = times[1] - times[0]
    return HeatSolution(g, times, v, np.diff(v, axis=0) / dt, laplacian_apply(g, v[1:]))


def solve_heat_forced(m: float, f: SpaceTimeSeries) -> HeatSolution:
    """Solve ``v_t - m v_xx = f`` with ``v(0) = 0`` and Neumann boundaries."""
    if m <= 0:
        raise ValueError("diffusion coefficient must be positive")
    g, dt, F = _steps(f)
    return _package(g, f.times, _heat_solve(g, dt, m, F))


# -- the duality ratio ------------------------------------------------------

def k_ratio(m: float, q: float, f: SpaceTimeSeries) -> float:
    """``||v||_Z / ||f||_q`` for the constant-coefficient problem."""
    g, dt, F = _steps(f)
    fn = _lq(F, q, g.h, dt)
    if fn == 0:
        raise ValueError("forcing must be nonzero")
    return solve_heat_forced(m, f).z_norm(m, q) / fn


class _SolutionOperator:
    """``f -> (dv/dt, m Lap v)`` as a linear map on step-valued forcings,
    with its transpose (a backward-in-time solve)."""

    def __init__(self, g: Grid1D, dt: float, nt: int, m: float):
        self.g, self.dt, self.nt, self.m = g, dt, nt, m
        self.factor = TridiagonalFactor(g, m * dt)
        self.shape_in = (nt, g.N)

    def apply(self, F):
        v = _heat_solve(self.g, self.dt, self.m, F, self.factor)
        e = self.m * laplacian_apply(self.g, v[1:])
        return np.concatenate([F + e, e])

    def apply_t(self, Y):
        G, E = Y[: self.nt], Y[self.nt:]
        w = self.m * laplacian_apply(self.g, G + E)
        p = np.zeros((self.nt + 1, self.g.N))
        for k in range(self.nt - 1, -1, -1):
            p[k] = self.factor.solve(w[k] + p[k + 1])
        return G + self.dt * p[: self.nt]


def _dual_vector(y, p):
    """Unit ``p'``-norm vector attaining Hoelder equality against ``y``."""
    ny = np.sum(np.abs(y) ** p) ** (1.0 / p)
    return np.sign(y) * (np.abs(y) / ny) ** (p - 1)


def power_norm(op: _SolutionOperator, x0: np.ndarray, q: float, iters: int = 100,
               tol: float = 1e-13) -> tuple[float, np.ndarray]:
    """Lower bound on the ``q -> q`` operator norm by the nonlinear power
    method (reduces to ordinary power iteration for ``q = 2``).

    Returns the best ratio seen and the maximising input.
    """
    qc = q / (q - 1.0)
    x = x0 / np.sum(np.abs(x0) ** q) ** (1.0 / q)
    best, best_x = 0.0, x
    for _ in range(iters):
        y = op.apply(x)
        est = float(np.sum(np.abs(y) ** q) ** (1.0 / q))
        if est > best:
            best, best_x = est, x
        z = op.apply_t(_dual_vector(y, q))
        zn = float(np.sum(np.abs(z) ** qc) ** (1.0 / qc))
        if zn <= float(np.sum(z * x)) * (1.0 + tol) or zn == 0:
            break
        x = _dual_vector(z, qc)
    return best, best_x


@dataclass
class KEstimate:
    """Largest sampled duality ratio; a lower bound on the discrete constant."""

    m: float
    q: float
    nx: int
    nt: int
    T: float
    samples: int
    estimate: float
    ratios: np.ndarray = field(repr=False)
    refined: float = 0.0
    kinds: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "m": self.m, "q": self.q, "nx": self.nx, "nt": self.nt, "T": self.T,
            "samples": self.samples, "k_estimate": self.estimate, "refined": self.refined,
            "witness_ratio": float(self.ratios[0]), "bound_type": "lower",
        }


def sample_forcings(g: Grid1D, times: np.ndarray, count: int, rng: np.random.Generator):
    """Yield ``(kind, SpaceTimeSeries)`` test forcings.

    The first is the spatially and temporally constant witness, which
    realises ratio 1 exactly; the rest cycle through smooth cosine
    superpositions, blockwise-constant fields and white noise.
    """
    x, nt = g.x, times.size - 1
    yield "constant", SpaceTimeSeries(g, times, np.ones((times.size, g.N)))
    kinds = ("smooth", "blocks", "noise")
    for s in range(1, count):
        kind = kinds[(s - 1) % 3]
        if kind == "smooth":
            kx = np.arange(0, 9)
            ax = rng.normal(size=kx.size) / (1 + kx)
            space = ax @ np.cos(np.pi * kx[:, None] * x[None, :])
            kt = np.arange(0, 5)
            at = rng.normal(size=kt.size)
            tt = np.cos(np.pi * kt[:, None] * times[None, :] / max(times[-1], 1e-300))
            frames = np.outer(at @ tt, space)
            frames += 0.1 * rng.normal() * np.outer(rng.normal(size=times.size), np.ones(g.N))
        elif kind == "blocks":
            bt = int(rng.integers(1, max(2, nt // 2) + 1))
            bx = int(rng.integers(1, max(2, g.N // 2) + 1))
            vals = rng.normal(size=(bt, bx))
            ti = np.minimum((np.arange(times.size) * bt) // (times.size), bt - 1)
            xi = np.minimum((np.arange(g.N) * bx) // g.N, bx - 1)
            frames = vals[ti][:, xi]
        else:
            frames = rng.normal(size=(times.size, g.N))
        if not np.any(frames[1:]):
            frames[1:] = 1.0
        yield kind, SpaceTimeSeries(g, times, frames)


def estimate_K(m: float, q: float, nx: int = 32, nt: int = 32, T: float = 1.0,
               samples: int = 100, seed: int = 0, refine: bool = True,
               refine_iters: int = 60) -> KEstimate:
    """Sampled lower bound on the discrete constant ``K_{m,q}``.

    Every sample set contains the constant witness, so the estimate is
    never below 1.  With ``refine`` the best random samples seed the
    nonlinear power method.
    """
    if not q > 1:
        raise ValueError("q must exceed 1")
    if m <= 0:
        raise ValueError("m must be positive")
    g = Grid1D(nx)
    times = time_mesh(T, nt)
    rng = np.random.default_rng(seed)
    ratios, kinds, forcings = [], [], []
    for kind, f in sample_forcings(g, times, samples, rng):
        ratios.append(k_ratio(m, q, f))
        kinds.append(kind)
        forcings.append(f.frames[1:])
    ratios = np.array(ratios)
    refined = 0.0
    if refine and samples > 1:
        op = _SolutionOperator(g, T / nt, nt, m)
        order = np.argsort(ratios[1:])[::-1][:3] + 1
        starts = [forcings[i] for i in order] + [rng.normal(size=(nt, nx))]
        for x0 in starts:
            val, _ = power_norm(op, x0, q, iters=refine_iters)
            refined = max(refined, val)
    return KEstimate(m, q, nx, nt, T, samples, float(max(ratios.max(), refined)),
                     ratios, refined, kinds)


# -- closeness --------------------------------------------------------------

@dataclass
class ClosenessReport:
    a: float
    b: float
    p: float
    exponent: float  # exponent of the duality constant actually used
    m: float
    K_hat: float
    lhs: float
    satisfied: bool
    rigorous: bool

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["verdict"] = "rigorous" if self.rigorous else "heuristic (K is a sampled lower bound)"
        return d


def _closeness(a, b, q, estimator_kw=None) -> ClosenessReport:
    if not 0 < a <= b:
        raise ValueError("need 0 < a <= b")
    m = 0.5 * (a + b)
    prefactor = (b - a) / (b + a)
    if q == 2:
        # proven bound K_{m,2} <= 1
        K_hat, rigorous = 1.0, True
    elif prefactor == 0:
        K_hat, rigorous = float("nan"), True
    else:
        K_hat, rigorous = estimate_K(m, q, **(estimator_kw or {})).estimate, False
    lhs = 0.0 if prefactor == 0 else prefactor * K_hat
    return ClosenessReport(a, b, float("nan"), q, m, K_hat, lhs, lhs < 1.0, rigorous)


def check_closeness(a: float, b: float, p: float, **estimator_kw) -> ClosenessReport:
    """Evaluate ``(b-a)/(b+a) K_{(a+b)/2, p'}`` with ``p' = p/(p-1)``.

    For ``p' = 2`` the proven bound ``K <= 1`` is used and the verdict is
    rigorous; otherwise ``K`` comes from :func:`estimate_K` and, being a
    lower bound, only supports a heuristic verdict.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    rep = _closeness(a, b, p / (p - 1.0), estimator_kw)
    rep.p = p
    return rep


# -- energy identity --------------------------------------------------------

@dataclass
class EnergyReport:
    lhs: float
    gradient_term: float
    dissipation_term: float
    matched: float
    sign_ok: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def energy_identity_check(m: float, f: SpaceTimeSeries) -> EnergyReport:
    """Compare ``sum dv/dt * Lap v h dt`` with its summation-by-parts form.

    Discretely, ``lhs = -1/2 ||grad v(T)||^2 - 1/2 sum_k ||grad(v^k -
    v^{k-1})||^2``; the second term is the numerical dissipation of
    backward Euler and has the same sign as the first.
    """
    sol = solve_heat_forced(m, f)
    g, dt = sol.grid, sol.dt
    lhs = float(np.sum(sol.dvdt * sol.lap) * g.h * dt)
    grad_T = gradient(g, sol.v[-1])
    grad_inc = gradient(g, np.diff(sol.v, axis=0))
    gterm = -0.5 * float(np.sum(grad_T**2) * g.h)
    dterm = -0.5 * float(np.sum(grad_inc**2) * g.h)
    return EnergyReport(lhs, gterm, dterm, gterm + dterm, lhs <= 0.0)


# -- non-divergence problem -------------------------------------------------

@dataclass
class DualProblem:
    """``u_t - M u_xx = f``, ``u(0) = 0``, Neumann, with ``a <= M <= b``.

    ``M`` and ``f`` are step-valued in time: arrays of shape ``(nt, N)``
    holding the values on ``(t_{k-1}, t_k]``.
    """

    grid: Grid1D
    T: float
    M: np.ndarray = field(repr=False)
    f: np.ndarray = field(repr=False)
    q: float = 2.0
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        if self.M.ndim != 2 or self.M.shape != self.f.shape or self.M.shape[1] != self.grid.N:
            raise ValueError("M and f must both have shape (nt, N)")
        if self.a is None:
            self.a = float(self.M.min())
        if self.b is None:
            self.b = float(self.M.max())
        if not 0 < self.a <= self.b:
            raise ValueError("need 0 < a <= b")
        if self.M.min() < self.a * (1 - 1e-12) or self.M.max() > self.b * (1 + 1e-12):
            raise ValueError("coefficient M leaves [a, b]")
        if not self.q > 1:
            raise ValueError("q must exceed 1")

    @property
    def nt(self) -> int:
        return self.M.shape[0]

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def times(self) -> np.ndarray:
        return time_mesh(self.T, self.nt)

    @property
    def m(self) -> float:
        return 0.5 * (self.a + self.b)


def coefficient_pattern(pattern: str, g: Grid1D, nt: int, a: float, b: float,
                        blocks: tuple[int, int] = (4, 4), seed: int = 0) -> np.ndarray:
    """Cellwise-constant coefficient fields for :class:`DualProblem`.

    ``constant`` is ``(a + b)/2``; ``checkerboard`` alternates ``a`` and
    ``b`` on a ``blocks[0] x blocks[1]`` (time x space) board;
    ``random-two-valued`` picks ``a`` or ``b`` independently per entry.
    """
    if pattern == "constant":
        return np.full((nt, g.N), 0.5 * (a + b))
    if pattern == "checkerboard":
        bt, bx = blocks
        ti = (np.arange(nt) * bt) // nt
        xi = (np.arange(g.N) * bx) // g.N
        parity = (ti[:, None] + xi[None, :]) % 2
        return np.where(parity == 0, a, b).astype(float)
    if pattern in ("random-two-valued", "random"):
        rng = np.random.default_rng(seed)
        return np.where(rng.random((nt, g.N)) < 0.5, a, b).astype(float)
    raise ValueError(f"unknown coefficient pattern {pattern!r}")


@dataclass
class ContractionResult:
    solution: HeatSolution
    iterations: int
    update_norms: list
    ratios: list
    observed_ratio: float
    bound: float
    residual: float
    residual_rel: float

    @property
    def u(self) -> SpaceTimeSeries:
        return self.solution.series()

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "update_norms": [float(v) for v in self.update_norms],
            "observed_ratio": self.observed_ratio,
            "contraction_bound": self.bound,
            "residual": self.residual,
            "residual_rel": self.residual_rel,
        }


def _residual(prob: DualProblem, sol: HeatSolution) -> np.ndarray:
    return sol.dvdt - prob.M * sol.lap - prob.f


def solve_dual_contraction(prob: DualProblem, v0: np.ndarray | None = None,
                           rtol: float = 1e-10, max_iter: int = 200,
                           K_hat: float | None = None) -> ContractionResult:
    """Fixed-point iteration ``v -> F v`` where ``F v`` solves
    ``w_t - m w_xx = -(m - M) v_xx + f`` with ``m = (a + b)/2``.

    ``v0`` is the initial iterate at ``t_0..t_M`` (its first frame is
    forced to zero).  Stops once the residual of the non-divergence
    equation is below ``rtol * ||f||_q``.  Raises NonConvergence after
    ``max_iter`` iterations.
    """
    g, dt, q, m = prob.grid, prob.dt, prob.q, prob.m
    if K_hat is None:
        rep = _closeness(prob.a, prob.b, q, {"nx": g.N, "nt": prob.nt, "T": prob.T, "samples": 30})
        if not rep.satisfied:
            if rep.rigorous:
                raise ValueError(f"closeness condition fails (lhs={rep.lhs:.3g})")
            warnings.warn(f"closeness condition appears violated (lhs={rep.lhs:.3g}); iterating anyway")
        K_hat = rep.K_hat if np.isfinite(rep.K_hat) else 1.0
    bound = (prob.b - prob.a) / 2.0 * K_hat / m
    fn = _lq(prob.f, q, g.h, dt)
    factor = TridiagonalFactor(g, m * dt)
    times = prob.times
    if v0 is None:
        v = np.zeros((prob.nt + 1, g.N))
    else:
        v = np.array(v0, dtype=float)
        if v.shape != (prob.nt + 1, g.N):
            raise ValueError("initial iterate must have shape (nt + 1, N)")
        v[0] = 0.0
    prev = _package(g, times, v)
    norms, ratios = [], []
    for it in range(1, max_iter + 1):
        F = prob.f - (m - prob.M) * prev.lap
        cur = _package(g, times, _heat_solve(g, dt, m, F, factor))
        diff = _package(g, times, cur.v - prev.v)
        norms.append(diff.z_norm(m, q))
        if len(norms) > 1 and norms[-2] > 1e-12 * max(cur.z_norm(m, q), fn):
            ratios.append(norms[-1] / norms[-2])
        res = _lq(_residual(prob, cur), q, g.h, dt)
        prev = cur
        if res <= rtol * fn:
            observed = max(ratios) if ratios else 0.0
            return ContractionResult(cur, it, norms, ratios, observed, bound, res,
                                     res / fn if fn else 0.0)
    observed = max(ratios) if ratios else float("nan")
    raise NonConvergence(f"no convergence in {max_iter} iterations "
                         f"(observed ratio {observed:.3g}, bound {bound:.3g})", observed)


def solve_dual_direct(prob: DualProblem) -> HeatSolution:
    """Reference solve of the same discrete problem by one tridiagonal
    system per time step (``I - dt M^k L``, non-symmetric)."""
    g, dt = prob.grid, prob.dt
    N = g.N
    L = g.laplacian_matrix()
    v = np.zeros((prob.nt + 1, N))
    for k in range(prob.nt):
        A = np.eye(N) - dt * prob.M[k][:, None] * L
        v[k + 1] = np.linalg.solve(A, v[k] + dt * prob.f[k])
    return _package(g, prob.times, v)


# -- duality pairing on simulator output ------------------------------------

@dataclass
class PairingReport:
    lhs: float
    rhs: float
    rel_error: float
    iterations: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def pairing_audit(rho: SpaceTimeSeries, M: SpaceTimeSeries, phi: SpaceTimeSeries,
                  source: SpaceTimeSeries | None = None, rtol: float = 1e-10) -> PairingReport:
    """Integration-by-parts audit of ``rho_t - (M rho)_xx = S``.

    Solves the backward dual problem ``v_t + M v_xx = -phi``, ``v(T) = 0``
    by time reversal and the contraction solver, then compares
    ``int int rho phi`` with ``int rho(0) v(0) + int int S v``.
    """
    g, dt, _ = _steps(rho)
    if not (np.allclose(rho.times, M.times) and np.allclose(rho.times, phi.times)):
        raise ValueError("rho, M and phi must share a time mesh")
    nt = rho.times.size - 1
    # reversed time tau_k = T - t_{nt-k}; step values on (tau_{k-1}, tau_k]
    # are taken at the left end of the forward interval
    Mr = M.frames[::-1][1:]
    phir = phi.frames[::-1][1:]
    prob = DualProblem(g, rho.T, Mr, phir, q=2.0)
    res = solve_dual_contraction(prob, rtol=rtol)
    v = res.solution.v[::-1]  # back to forward time, v[k] at t_k
    w = g.h * dt
    lhs = float(np.sum(rho.frames[:-1] * phi.frames[:-1]) * w)
    rhs = float(np.sum(rho.frames[0] * v[0]) * g.h)
    if source is not None:
        rhs += float(np.sum(source.frames[:-1] * v[:-1]) * w)
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return PairingReport(lhs, rhs, abs(lhs - rhs) / scale, res.iterations)
