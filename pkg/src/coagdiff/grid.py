"""Cell-centred grid on [0, 1] with homogeneous Neumann boundaries.

The discrete Laplacian uses reflecting ghost cells, which makes it
symmetric, negative semidefinite and exactly mass conserving; constants
span its kernel and ``cos(pi x)`` is an exact eigenvector.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    """Uniform cell-centred grid with ``N`` cells of width ``h = 1/N``.

    ``N = 1`` is accepted as the degenerate single-cell grid of a
    spatially homogeneous run, on which the Laplacian vanishes.
    """

    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"grid needs a positive integer cell count, got {self.N}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.h

    def laplacian_matrix(self) -> np.ndarray:
        """Dense ``(N, N)`` Laplacian, for tests and small problems."""
        N, h2 = self.N, self.h**2
        L = np.zeros((N, N))
        for j in range(N):
            if j > 0:
                L[j, j - 1] += 1.0
                L[j, j] -= 1.0
            if j < N - 1:
                L[j, j + 1] += 1.0
                L[j, j] -= 1.0
        return L / h2

    def eigenvalue(self, k: int = 1) -> float:
        """``lambda_h`` with ``L cos(k pi x) = -lambda_h cos(k pi x)``."""
        return 2.0 / self.h**2 * (1.0 - math.cos(k * math.pi * self.h))


def _check_len(g: Grid1D, u: np.ndarray):
    if u.shape[-1] != g.N:
        raise ValueError(f"array has {u.shape[-1]} cells, grid has {g.N}")


def laplacian_apply(g: Grid1D, u) -> np.ndarray:
    """Neumann Laplacian along the last axis."""
    u = np.asarray(u, dtype=float)
    _check_len(g, u)
    flux = np.diff(u, axis=-1)  # interior faces
    out = np.zeros_like(u)
    out[..., :-1] += flux
    out[..., 1:] -= flux
    return out / g.h**2


def gradient(g: Grid1D, u) -> np.ndarray:
    """Difference quotients on the ``N - 1`` interior faces (boundary
    fluxes are zero by the Neumann condition)."""
    u = np.asarray(u, dtype=float)
    _check_len(g, u)
    return np.diff(u, axis=-1) / g.h


class TridiagonalFactor:
    """Factorisation of ``I - r_k L`` for a batch of coefficients ``r_k``.

    The Thomas elimination is done once; ``solve`` then costs two sweeps
    over the cells, vectorised across the batch.  Every matrix is a
    symmetric M-matrix with unit column sums, so no pivoting is needed,
    solutions of nonnegative data stay nonnegative and sums are preserved.
    """

    def __init__(self, g: Grid1D, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise ValueError("diffusion step coefficients must be nonnegative")
        self.grid = g
        N = g.N
        s = r / g.h**2
        lower = -s  # sub- and super-diagonal
        diag = np.empty((N,) + s.shape)
        diag[:] = 1.0 + 2.0 * s
        diag[0] = 1.0 + s
        diag[-1] = 1.0 + s
        if N == 1:
            diag[0] = 1.0
        cp = np.zeros((N,) + s.shape)
        denom = np.empty((N,) + s.shape)
        denom[0] = diag[0]
        if N > 1:
            cp[0] = lower / denom[0]
        for j in range(1, N):
            denom[j] = diag[j] - lower * cp[j - 1]
            if j < N - 1:
                cp[j] = lower / denom[j]
        self._lower = lower
        self._cp = cp
        self._denom = denom
        self.shape = s.shape

    def solve(self, b) -> np.ndarray:
        """Solve for right-hand sides ``b`` of shape ``batch + (N,)``.

        Columns that are exactly constant are returned unchanged: they lie
        in the null space of ``L``, and elimination roundoff would
        otherwise perturb that invariant.
        """
        b = np.asarray(b, dtype=float)
        g = self.grid
        _check_len(g, b)
        N = g.N
        bt = np.moveaxis(b, -1, 0)
        dp = np.empty_like(bt)
        dp[0] = bt[0] / self._denom[0]
        for j in range(1, N):
            dp[j] = (bt[j] - self._lower * dp[j - 1]) / self._denom[j]
        x = np.empty_like(bt)
        x[-1] = dp[-1]
        for j in range(N - 2, -1, -1):
            x[j] = dp[j] - self._cp[j] * x[j + 1]
        const = np.all(bt == bt[0], axis=0)
        if bt.ndim == 1:
            if const:
                x[:] = bt
        elif np.any(const):
            x[:, const] = bt[:, const]
        return np.moveaxis(x, 0, -1)


def heat_step_be(g: Grid1D, u, d: float, dt: float) -> np.ndarray:
    """One backward-Euler step of ``u_t = d u_xx``: solve
    ``(I - dt d L) u_new = u``."""
    if d <= 0 or dt <= 0:
        raise ValueError("diffusivity and time step must be positive")
    return TridiagonalFactor(g, d * dt).solve(u)


def lp_norm_space(g: Grid1D, u, p: float) -> float:
    """``(sum_j |u_j|^p h)^(1/p)``, or the max norm for ``p = inf``."""
    u = np.asarray(u, dtype=float)
    _check_len(g, u)
    if p == math.inf:
        return float(np.max(np.abs(u)))
    if p < 1:
        raise ValueError("p must be >= 1")
    return float(np.sum(np.abs(u) ** p) * g.h) ** (1.0 / p)


@dataclass
class SpaceTimeSeries:
    """Time-stamped spatial frames representing a function on [0, T] x [0, 1]."""

    grid: Grid1D
    times: np.ndarray
    frames: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 2 or self.frames.shape[0] != self.times.shape[0]:
            raise ValueError("need one frame per time stamp")
        _check_len(self.grid, self.frames)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @classmethod
    def from_function(cls, g: Grid1D, times: Sequence[float], fn) -> "SpaceTimeSeries":
        times = np.asarray(times, dtype=float)
        t, x = np.meshgrid(times, g.x, indexing="ij")
        return cls(g, times, np.broadcast_to(fn(t, x), t.shape).astype(float))

    @property
    def T(self) -> float:
        return float(self.times[-1] - self.times[0])

    def time_weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights on the time stamps."""
        w = np.zeros_like(self.times)
        dt = np.diff(self.times)
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
        return w

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.frames)))

    def to_csv(self, path, name: str = "value") -> None:
        write_frames_csv(path, self.grid, self.times, self.frames, name)


def lp_norm_spacetime(s: SpaceTimeSeries, p: float) -> float:
    """Space-time ``L^p`` norm: midpoint in space, trapezoid in time."""
    if p == math.inf:
        return s.max_abs()
    if p < 1:
        raise ValueError("p must be >= 1")
    w = s.time_weights()
    total = float(w @ np.sum(np.abs(s.frames) ** p, axis=1)) * s.grid.h
    return total ** (1.0 / p)


def write_frames_csv(path, g: Grid1D, times, frames, name: str = "value") -> None:
    """Dump frames as ``t,x,<name>`` rows; floats written with ``repr`` so
    reruns are byte-identical."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", name])
        xs = [repr(float(x)) for x in g.x]
        for t, frame in zip(times, frames):
            ts = repr(float(t))
            for x, v in zip(xs, frame):
                w.writerow([ts, x, repr(float(v))])


# -- diffusion coefficients -------------------------------------------------

class DiffusionProfile:
    """Sequence ``d_i > 0`` with finite positive infimum and supremum.

    Build with :meth:`constant`, :meth:`limit` or :meth:`explicit`.
    """

    def __init__(self, kind: str, d_inf: float, A: float = 0.0, r: float = 1.0,
                 head: Sequence[float] = (), tail: "DiffusionProfile | None" = None):
        self.kind = kind
        self.d_inf = float(d_inf)
        self.A = float(A)
        self.r = float(r)
        self.head = np.asarray(head, dtype=float)
        self.tail = tail
        if self.d_inf <= 0:
            raise ValueError("limit diffusivity must be positive")
        if kind == "limit" and self.r <= 0:
            raise ValueError("decay exponent r must be positive")
        if kind == "limit" and self.d_inf + min(self.A, 0.0) <= 0:
            raise ValueError("limit profile has a nonpositive coefficient")
        if np.any(self.head <= 0) or not np.all(np.isfinite(self.head)):
            raise ValueError("explicit diffusivities must be positive and finite")

    @classmethod
    def constant(cls, d: float) -> "DiffusionProfile":
        return cls("constant", d)

    @classmethod
    def limit(cls, d_inf: float, A: float, r: float = 1.0) -> "DiffusionProfile":
        """``d_i = d_inf + A / i**r``."""
        return cls("limit", d_inf, A, r)

    @classmethod
    def explicit(cls, values: Sequence[float], tail: "DiffusionProfile | None" = None) -> "DiffusionProfile":
        """Listed ``d_1..d_m``; indices beyond ``m`` follow ``tail``
        (default: constant equal to the last listed value)."""
        values = list(values)
        if not values:
            raise ValueError("explicit profile needs at least one value")
        tail = tail or cls.constant(values[-1])
        return cls("explicit", tail.d_inf, head=values, tail=tail)

    def values(self, n: int) -> np.ndarray:
        """``d_1..d_n``."""
        i = np.arange(1, n + 1, dtype=float)
        if self.kind == "constant":
            return np.full(n, self.d_inf)
        if self.kind == "limit":
            return self.d_inf + self.A / i**self.r
        m = len(self.head)
        if n <= m:
            return self.head[:n].copy()
        return np.concatenate([self.head, self.tail.values(n)[m:]])

    def tail_bounds(self, I: int = 1) -> tuple[float, float]:
        """``(inf_{i>=I} d_i, sup_{i>=I} d_i)`` over the infinite sequence."""
        if I < 1:
            raise ValueError("tail index starts at 1")
        if self.kind == "constant":
            return self.d_inf, self.d_inf
        if self.kind == "limit":
            d_I = self.d_inf + self.A / I**self.r
            return min(d_I, self.d_inf), max(d_I, self.d_inf)
        m = len(self.head)
        lo, hi = self.tail.tail_bounds(max(I, m + 1))
        if I <= m:
            lo = min(lo, float(self.head[I - 1 :].min()))
            hi = max(hi, float(self.head[I - 1 :].max()))
        return lo, hi

    @property
    def delta(self) -> float:
        return self.tail_bounds(1)[0]

    @property
    def D(self) -> float:
        return self.tail_bounds(1)[1]

    def default_tail_index(self, spread: float = 0.05, i_max: int = 10**6) -> int:
        """Smallest ``I`` with ``(sup - inf) / (sup + inf) <= spread`` over
        ``i >= I``."""
        I = 1
        while I <= i_max:
            lo, hi = self.tail_bounds(I)
            if (hi - lo) / (hi + lo) <= spread:
                return I
            I = I + 1 if I < 64 else int(I * 1.05) + 1
        raise ValueError("diffusivities do not settle within the search range")

    def to_config(self) -> dict:
        if self.kind == "constant":
            return {"family": "constant", "d": self.d_inf}
        if self.kind == "limit":
            return {"family": "limit", "d_inf": self.d_inf, "A": self.A, "r": self.r}
        return {"family": "explicit", "values": ",".join(repr(float(v)) for v in self.head),
                "tail": self.tail.to_config()}

    @classmethod
    def from_config(cls, section: dict) -> "DiffusionProfile":
        family = str(section.get("family", "")).strip().lower()
        if family == "constant":
            return cls.constant(float(section.get("d", 1.0)))
        if family == "limit":
            return cls.limit(float(section["d_inf"]), float(section.get("A", 0.0)),
                             float(section.get("r", 1.0)))
        if family == "explicit":
            values = [float(v) for v in str(section["values"]).replace(";", ",").split(",") if v.strip()]
            return cls.explicit(values)
        raise ValueError(f"unknown diffusion family {family!r}")

    def __repr__(self):
        return f"DiffusionProfile({self.to_config()})"
