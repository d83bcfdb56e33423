"""Truncated Smoluchowski coagulation operator.

All functions take concentrations with species on axis 0: shape ``(n,)``
for a single spatial node or ``(n, N)`` for ``N`` nodes at once.  Entry
``k`` along axis 0 holds the cluster of size ``k + 1``.

Two evaluation routes are provided.  ``gain``/``loss`` are the reference
path: explicit double sums accumulated in ascending ``j``, valid for any
kernel.  ``gain_fast``/``loss_fast`` exploit the monomial structure of
closed-form kernels (FFT convolution for the gain, prefix sums for the
loss) and are checked against the reference path in the test-suite.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.fft

from .kernels import KernelError, KernelSpec

Convolver = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


def _as_conc(c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim == 0 or c.shape[0] < 1:
        raise ValueError("concentration vector needs at least one species")
    return c


def _bcast(v: np.ndarray, c: np.ndarray) -> np.ndarray:
    return v.reshape(v.shape + (1,) * (c.ndim - 1))


def gain(c, kernel: KernelSpec) -> np.ndarray:
    """Gain term ``Q_i^+ = 1/2 sum_{j<i} a(i-j, j) c_{i-j} c_j``.

    Reference implementation, ``O(n**2)`` per node.
    """
    c = _as_conc(c)
    n = c.shape[0]
    a = kernel.matrix(n)
    out = np.zeros_like(c)
    for j in range(1, n):
        # all i = j+1..n receive the j-th summand; i - j runs over 1..n-j
        out[j:] += 0.5 * _bcast(a[: n - j, j - 1], c) * c[: n - j] * c[j - 1]
    return out


def loss_rate(c, kernel: KernelSpec) -> np.ndarray:
    """Per-capita loss rate ``sum_{j <= n-i} a(i, j) c_j`` (reference path)."""
    c = _as_conc(c)
    n = c.shape[0]
    a = kernel.matrix(n)
    out = np.zeros_like(c)
    for j in range(1, n):
        out[: n - j] += _bcast(a[: n - j, j - 1], c) * c[j - 1]
    return out


def loss(c, kernel: KernelSpec) -> np.ndarray:
    """Loss term ``Q_i^- = c_i sum_{j <= n-i} a(i, j) c_j`` (reference path)."""
    c = _as_conc(c)
    return c * loss_rate(c, kernel)


def q_truncated(c, kernel: KernelSpec, fast: bool = False) -> np.ndarray:
    """Truncated coagulation operator ``Q^n(c) = gain - loss``.

    With ``fast=True`` separable kernels go through the accelerated path;
    other kernels silently use the reference sums.
    """
    if fast and is_separable(kernel):
        return gain_fast(c, kernel) - loss_fast(c, kernel)
    return gain(c, kernel) - loss(c, kernel)


def mass_functional(q) -> np.ndarray:
    """``sum_i i q_i`` along axis 0."""
    q = np.asarray(q, dtype=float)
    return np.tensordot(np.arange(1, q.shape[0] + 1, dtype=float), q, axes=(0, 0))


# -- weak formulation -------------------------------------------------------

def _phi(phi, n) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape[0] < n:
        raise ValueError(f"test sequence must be defined up to index {n}")
    if not np.all(np.isfinite(phi[:n])):
        raise ValueError("test sequence must be finite")
    return phi[:n]


def weak_form_lhs(c, kernel: KernelSpec, phi) -> float:
    """``sum_i phi_i Q_i^n(c)`` for a single node."""
    c = _as_conc(c)
    phi = _phi(phi, c.shape[0])
    return float(phi @ q_truncated(c, kernel))


def _weak_terms(c, kernel, phi):
    n = c.shape[0]
    a = kernel.matrix(n)
    idx = np.arange(1, n + 1)
    s = idx[:, None] + idx[None, :]
    mask = s <= n
    phi_sum = np.zeros((n, n))
    phi_sum[mask] = phi[s[mask] - 1]
    weights = 0.5 * a * np.outer(c, c)
    return weights, phi_sum, mask


def weak_form_rhs(c, kernel: KernelSpec, phi) -> float:
    """``1/2 sum_{i+j<=n} a(i,j) c_i c_j (phi_{i+j} - phi_i - phi_j)``."""
    c = _as_conc(c)
    phi = _phi(phi, c.shape[0])
    w, phi_sum, mask = _weak_terms(c, kernel, phi)
    delta = phi_sum - phi[:, None] - phi[None, :]
    return float(np.sum(np.where(mask, w * delta, 0.0)))


def weak_form_scale(c, kernel: KernelSpec, phi) -> float:
    """Sum of absolute summands of the weak form, a natural error scale."""
    c = _as_conc(c)
    phi = _phi(phi, c.shape[0])
    w, phi_sum, mask = _weak_terms(c, kernel, phi)
    size = np.abs(phi_sum) + np.abs(phi)[:, None] + np.abs(phi)[None, :]
    return float(np.sum(np.where(mask, np.abs(w) * size, 0.0)))


# -- separable fast path ----------------------------------------------------

def is_separable(kernel: KernelSpec) -> bool:
    try:
        kernel.terms()
    except KernelError:
        return False
    return True


def fft_convolve(x: np.ndarray, y: np.ndarray, length: int) -> np.ndarray:
    """First ``length`` entries of the linear convolution of ``x`` and
    ``y`` along axis 0, zero-padded real FFT."""
    size = scipy.fft.next_fast_len(x.shape[0] + y.shape[0] - 1, real=True)
    fx = scipy.fft.rfft(x, n=size, axis=0)
    fy = scipy.fft.rfft(y, n=size, axis=0)
    return scipy.fft.irfft(fx * fy, n=size, axis=0)[:length]


def _weighted(c, p, idx):
    if p == 0:
        return c
    return _bcast(idx**p, c) * c


def gain_fast(c, kernel: KernelSpec, convolve: Convolver | None = None) -> np.ndarray:
    """Gain term via fast convolution of the kernel's factor sequences.

    ``convolve(x, y, length)`` may be supplied to swap the transform
    provider; by default a real FFT is used.
    Raises KernelError for kernels without a monomial decomposition.
    """
    c = _as_conc(c)
    terms = kernel.terms()
    n = c.shape[0]
    out = np.zeros_like(c)
    if n < 2:
        return out
    idx = np.arange(1, n + 1, dtype=float)
    # (p, q) and (q, p) give the same convolution
    pairs: dict[tuple[float, float], float] = {}
    for coef, p, q in terms:
        key = (min(p, q), max(p, q))
        pairs[key] = pairs.get(key, 0.0) + coef

    if convolve is None:
        size = scipy.fft.next_fast_len(2 * n - 1, real=True)
        spectra = {}

        def spec(p):
            if p not in spectra:
                spectra[p] = scipy.fft.rfft(_weighted(c, p, idx), n=size, axis=0)
            return spectra[p]

        acc = 0
        for (p, q), coef in pairs.items():
            acc = acc + coef * spec(p) * spec(q)
        conv = scipy.fft.irfft(acc, n=size, axis=0)[: n - 1]
    else:
        conv = 0
        for (p, q), coef in pairs.items():
            conv = conv + coef * convolve(_weighted(c, p, idx), _weighted(c, q, idx), n - 1)
    # the exact sums are nonnegative; drop transform roundoff of the wrong sign
    out[1:] = np.maximum(0.5 * conv, 0.0)
    return out


def loss_rate_fast(c, kernel: KernelSpec) -> np.ndarray:
    """Per-capita loss rate from prefix sums, ``O(n)`` per node."""
    c = _as_conc(c)
    n = c.shape[0]
    idx = np.arange(1, n + 1, dtype=float)
    out = np.zeros_like(c)
    zero = np.zeros((1,) + c.shape[1:])
    for coef, p, q in kernel.terms():
        prefix = np.concatenate([zero, np.cumsum(_weighted(c, q, idx), axis=0)])
        # prefix[m] = sum_{j<=m} j**q c_j; entry i needs m = n - i
        out += coef * _bcast(idx**p, c) * prefix[n - 1 :: -1][:n]
    return out


def loss_fast(c, kernel: KernelSpec) -> np.ndarray:
    c = _as_conc(c)
    return c * loss_rate_fast(c, kernel)


def coagulation_rhs(kernel: KernelSpec, n: int, fast: bool = True):
    """Return ``(gain_fn, rate_fn)`` for the chosen path.

    Table kernels always use the reference sums.
    """
    if fast and is_separable(kernel):
        return (lambda c: gain_fast(c, kernel)), (lambda c: loss_rate_fast(c, kernel))
    a = kernel.matrix(n)
    cached = _MatrixKernel(a)
    return (lambda c: gain(c, cached)), (lambda c: loss_rate(c, cached))


class _MatrixKernel(KernelSpec):
    """Precomputed rate matrix so the reference path skips rebuilding it."""

    family = "table"

    def __init__(self, a):
        self._a = a

    def matrix(self, n):
        return self._a[:n, :n]
