"""Coagulation kernel families.

A kernel is the symmetric, nonnegative rate table ``a(i, j)`` at which
clusters of sizes ``i`` and ``j`` merge.  Closed-form families are
expressed as a short sum of monomials ``coef * i**p * j**q``; the
coagulation module uses that decomposition for its fast path.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class KernelError(ValueError):
    """Invalid kernel parameters or an unsupported kernel operation."""


class Growth(enum.Enum):
    SUBLINEAR = "sublinear"
    LINEAR_BORDERLINE = "linear_borderline"
    SUPERLINEAR = "superlinear"


class KernelSpec:
    """Base class for coagulation kernels.

    Subclasses are immutable.  ``n_max`` is ``None`` for closed-form
    families (rates exist for every index pair).
    """

    family: str = ""
    n_max: int | None = None

    def terms(self) -> list[tuple[float, float, float]]:
        """Monomial decomposition ``[(coef, p, q), ...]`` with
        ``a(i, j) = sum(coef * i**p * j**q)``.

        Raises KernelError for kernels without such a structure.
        """
        raise KernelError(f"{self.family} kernel is not separable")

    def growth(self) -> Growth:
        raise KernelError(f"classification undefined for {self.family} kernel")

    def _check_index(self, i, j):
        i = np.asarray(i)
        j = np.asarray(j)
        if np.any(i < 1) or np.any(j < 1):
            raise IndexError("cluster sizes start at 1")
        if self.n_max is not None and (np.any(i > self.n_max) or np.any(j > self.n_max)):
            raise IndexError(f"index beyond n_max={self.n_max}")
        return i, j

    def __call__(self, i, j):
        i, j = self._check_index(i, j)
        i = i.astype(float)
        j = j.astype(float)
        out = np.zeros(np.broadcast(i, j).shape)
        for coef, p, q in self.terms():
            # product first so a(i, j) and a(j, i) round identically
            out = out + coef * (i**p * j**q)
        return out if out.ndim else float(out)

    def matrix(self, n: int) -> np.ndarray:
        """Rates ``a(i, j)`` for ``1 <= i, j <= n`` as an ``(n, n)`` array."""
        idx = np.arange(1, n + 1)
        return np.asarray(self(idx[:, None], idx[None, :]), dtype=float)

    def to_config(self) -> dict:
        raise NotImplementedError


def _check_exponent(name, value, upper=1.0):
    if not (0.0 <= value <= upper):
        raise KernelError(f"{name} must lie in [0, {upper}], got {value}")


@dataclass(frozen=True)
class Constant(KernelSpec):
    c0: float = 1.0
    family = "constant"

    def __post_init__(self):
        if self.c0 < 0:
            raise KernelError("constant rate must be nonnegative")

    def terms(self):
        return [(float(self.c0), 0.0, 0.0)]

    def growth(self):
        return Growth.SUBLINEAR

    def to_config(self):
        return {"family": self.family, "c0": self.c0}


@dataclass(frozen=True)
class SumPower(KernelSpec):
    """``a(i, j) = C (i**gamma + j**gamma)``.

    ``gamma = 1`` is the additive kernel, accepted as the borderline case.
    """

    C: float = 1.0
    gamma: float = 0.5
    family = "sum_power"

    def __post_init__(self):
        if self.C <= 0:
            raise KernelError("C must be positive")
        _check_exponent("gamma", self.gamma)

    def terms(self):
        return [(float(self.C), float(self.gamma), 0.0), (float(self.C), 0.0, float(self.gamma))]

    def growth(self):
        return Growth.SUBLINEAR if self.gamma < 1 else Growth.LINEAR_BORDERLINE

    def to_config(self):
        return {"family": self.family, "C": self.C, "gamma": self.gamma}


@dataclass(frozen=True)
class ProductPower(KernelSpec):
    """``a(i, j) = C (i**alpha j**beta + i**beta j**alpha)``."""

    C: float = 1.0
    alpha: float = 0.25
    beta: float = 0.25
    family = "product_power"

    def __post_init__(self):
        if self.C <= 0:
            raise KernelError("C must be positive")
        _check_exponent("alpha", self.alpha)
        _check_exponent("beta", self.beta)

    def terms(self):
        C, a, b = float(self.C), float(self.alpha), float(self.beta)
        return [(C, a, b), (C, b, a)]

    def growth(self):
        s = self.alpha + self.beta
        if s < 1:
            return Growth.SUBLINEAR
        if s == 1:
            return Growth.LINEAR_BORDERLINE
        return Growth.SUPERLINEAR

    def to_config(self):
        return {"family": self.family, "C": self.C, "alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class Multiplicative(KernelSpec):
    """``a(i, j) = i j``."""

    family = "multiplicative"

    def terms(self):
        return [(1.0, 1.0, 1.0)]

    def growth(self):
        return Growth.SUPERLINEAR

    def to_config(self):
        return {"family": self.family}


@dataclass(frozen=True, eq=False)
class Table(KernelSpec):
    """Explicit symmetric ``(n, n)`` rate matrix, stored in full."""

    rates: np.ndarray = field(repr=False, default_factory=lambda: np.ones((1, 1)))
    source: str | None = None
    family = "table"

    def __post_init__(self):
        a = np.array(self.rates, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise KernelError("table kernel needs a square, nonempty matrix")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise KernelError("table rates must be finite and nonnegative")
        if not np.array_equal(a, a.T):
            raise KernelError("table rates must be symmetric")
        a.setflags(write=False)
        object.__setattr__(self, "rates", a)

    @property
    def n_max(self) -> int:
        return self.rates.shape[0]

    def __call__(self, i, j):
        i, j = self._check_index(i, j)
        out = self.rates[i - 1, j - 1]
        return out if np.ndim(out) else float(out)

    def matrix(self, n):
        if n > self.n_max:
            raise IndexError(f"index beyond n_max={self.n_max}")
        return self.rates[:n, :n].copy()

    def to_config(self):
        return {"family": self.family, "path": self.source}


def eval(spec: KernelSpec, i: int, j: int) -> float:
    """Rate ``a(i, j)``."""
    return spec(i, j)


def classify(spec: KernelSpec) -> Growth:
    return spec.growth()


def sublinearity_profile(spec: KernelSpec, i: int, j_max: int) -> np.ndarray:
    """Ratios ``a(i, j) / j`` for ``j = 1..j_max``.

    For kernels obeying ``a(i, j) / j -> 0`` the tail of this sequence
    decays; a flat or growing tail signals a superlinear kernel.
    """
    j = np.arange(1, j_max + 1)
    return np.asarray(spec(np.full_like(j, i), j), dtype=float) / j


def read_table_csv(path) -> Table:
    """Load a table kernel from a CSV with header ``i,j,a``.

    Exactly ``n**2`` rows are expected, in row-major order.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != ["i", "j", "a"]:
            raise KernelError(f"{path}: expected header 'i,j,a', got {','.join(header)}")
        rows = [r for r in reader if r]
    n = int(round(len(rows) ** 0.5))
    if n * n != len(rows):
        raise KernelError(f"{path}: {len(rows)} rows is not a perfect square")
    rates = np.empty((n, n))
    for k, row in enumerate(rows):
        i, j, a = int(row[0]), int(row[1]), float(row[2])
        if (i, j) != (k // n + 1, k % n + 1):
            raise KernelError(f"{path}: row {k + 2} out of row-major order")
        rates[i - 1, j - 1] = a
    return Table(rates, source=str(path))


def write_table_csv(spec: Table, path) -> None:
    n = spec.n_max
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "a"])
        for i in range(1, n + 1):
            for j in range(1, n + 1):
                w.writerow([i, j, repr(float(spec.rates[i - 1, j - 1]))])


def from_config(section: dict, base_dir=None) -> KernelSpec:
    """Build a kernel from a config stanza such as
    ``{"family": "sum_power", "C": "1.0", "gamma": "0.5"}``."""
    params = dict(section)
    family = str(params.pop("family", "")).strip().lower()

    def num(name, default=None):
        if name not in params:
            if default is None:
                raise KernelError(f"kernel family {family!r} requires parameter {name!r}")
            return default
        return float(params[name])

    if family == "constant":
        return Constant(num("c0", 1.0))
    if family == "sum_power":
        return SumPower(num("C", 1.0), num("gamma"))
    if family == "product_power":
        return ProductPower(num("C", 1.0), num("alpha"), num("beta"))
    if family == "multiplicative":
        return Multiplicative()
    if family == "table":
        if "path" not in params:
            raise KernelError("table kernel requires 'path'")
        p = Path(params["path"])
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        return read_table_csv(p)
    raise KernelError(f"unknown kernel family {family!r}")
