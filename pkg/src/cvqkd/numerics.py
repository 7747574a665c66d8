"""Numerically stable primitives shared by the rest of the package.

Everything here is concerned with one of three things: evaluating Fock-basis
amplitudes of coherent and thermal states without overflow, summing long
sequences of wildly-scaled terms without losing the 1e-11-scale quantities
the certification bounds are made of, and generating quadrature rules for
radial/Gaussian weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "LogAmplitude",
    "ThermalSpectrum",
    "coherent_fock_amplitude",
    "thermal_coefficient",
    "thermal_coefficients",
    "tail_mass",
    "compensated_sum",
    "CompensatedAccumulator",
    "half_log_poisson_pmf",
    "poisson_upper_tail",
    "quadrature_nodes",
]

_TWO_PI = 2.0 * math.pi
_LN_2PI = math.log(2.0 * math.pi)

# Practical ceiling for Gauss rules; beyond this the classical node solvers
# degrade and runtimes explode.
_MAX_QUAD_COUNT = 4096


@dataclass(frozen=True)
class LogAmplitude:
    """A complex amplitude stored as (log magnitude, phase).

    The log scale keeps amplitudes representable for |alpha| up to 100 and
    photon indices up to 10000, far past where ``alpha**n / sqrt(n!)``
    overflows in linear double arithmetic.  ``log_magnitude`` is a natural
    log; ``phase`` lies in (-pi, pi].
    """

    log_magnitude: float
    phase: float

    @property
    def magnitude(self) -> float:
        return math.exp(self.log_magnitude)

    @property
    def value(self) -> complex:
        m = math.exp(self.log_magnitude)
        return complex(m * math.cos(self.phase), m * math.sin(self.phase))


def _stirling_excess(n: np.ndarray) -> np.ndarray:
    # lgamma(n+1) - (n ln n - n) for n >= 1, via the Stirling series.
    # Used only for n >= 64 where the series with three terms is below 1 ulp.
    inv = 1.0 / n
    inv2 = inv * inv
    series = inv / 12.0 - inv * inv2 / 360.0 + inv * inv2 * inv2 / 1260.0
    return 0.5 * (_LN_2PI + np.log(n)) + series


def half_log_poisson_pmf(n: np.ndarray, lam: float) -> np.ndarray:
    """log |<n|alpha>| for |alpha|^2 = lam, i.e. 0.5*log Poisson(lam) pmf at n.

    The obvious form ``n log(lam) - lam - lgamma(n+1)`` cancels three terms of
    size up to ~7000 to produce results of size ~-60, losing ~4 digits.  For
    n >= 64 we instead use ``n log1p((lam-n)/n) + (n-lam) - stirling(n)``
    whose intermediates stay of the order of the result.

    Parameters
    ----------
    n : array of nonnegative integers (as float or int array).
    lam : nonnegative float.

    Returns
    -------
    Array of 0.5*log pmf values; -inf where pmf is exactly zero.
    """
    n = np.asarray(n, dtype=np.float64)
    if lam == 0.0:
        out = np.full(n.shape, -np.inf)
        out[n == 0] = 0.0
        return out
    out = np.empty(n.shape, dtype=np.float64)
    small = n < 64
    if np.any(small):
        ns = n[small]
        out[small] = ns * math.log(lam) - lam - special.gammaln(ns + 1.0)
    big = ~small
    if np.any(big):
        nb = n[big]
        d = (lam - nb) / nb
        out[big] = nb * np.log1p(d) + (nb - lam) - _stirling_excess(nb)
    return 0.5 * out


def coherent_fock_amplitude(alpha: complex, n: int) -> LogAmplitude:
    """Fock-basis coefficient <n|alpha> of a coherent state, in log scale.

    Equals exp(-|alpha|^2/2) * alpha^n / sqrt(n!); the magnitude is computed
    through `half_log_poisson_pmf` and the phase is n*arg(alpha) reduced to
    (-pi, pi].
    """
    if n < 0:
        raise ValueError("photon index must be >= 0")
    lam = abs(alpha) ** 2
    if lam == 0.0:
        return LogAmplitude(0.0 if n == 0 else -math.inf, 0.0)
    log_mag = float(half_log_poisson_pmf(np.array([n], dtype=float), lam)[0])
    phase = math.remainder(n * math.atan2(alpha.imag, alpha.real), _TWO_PI)
    if phase <= -math.pi:
        phase = math.pi
    return LogAmplitude(log_mag, phase)


def thermal_coefficient(mean_photon: float, n: int) -> float:
    """Photon-number distribution of a thermal state: xbar^n/(xbar+1)^(n+1)."""
    if mean_photon < 0:
        raise ValueError("mean photon number must be >= 0")
    if n < 0:
        raise ValueError("photon index must be >= 0")
    if mean_photon == 0.0:
        return 1.0 if n == 0 else 0.0
    # exp(-n*log1p(1/xbar)) / (xbar+1); log1p keeps the ratio accurate for
    # large xbar where log(xbar) - log(xbar+1) would cancel.
    return math.exp(-n * math.log1p(1.0 / mean_photon)) / (mean_photon + 1.0)


def thermal_coefficients(mean_photon: float, count: int) -> np.ndarray:
    """Vector of thermal_coefficient(mean_photon, n) for n = 0 .. count-1."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if mean_photon == 0.0:
        out = np.zeros(count)
        out[0] = 1.0
        return out
    n = np.arange(count, dtype=np.float64)
    return np.exp(-n * math.log1p(1.0 / mean_photon)) / (mean_photon + 1.0)


@dataclass(frozen=True)
class ThermalSpectrum:
    """Truncated photon-number distribution of a thermal state."""

    mean_photon: float
    coefficients: np.ndarray

    @classmethod
    def build(cls, mean_photon: float, cutoff: int) -> "ThermalSpectrum":
        return cls(mean_photon, thermal_coefficients(mean_photon, cutoff))

    @property
    def cutoff(self) -> int:
        return len(self.coefficients)

    def tail(self) -> float:
        return tail_mass(self.mean_photon, self.cutoff)


def tail_mass(mean_photon: float, cutoff: int) -> float:
    """Thermal probability mass above the Fock cutoff: (xbar/(xbar+1))^Q."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    if mean_photon == 0.0:
        return 0.0
    return math.exp(-cutoff * math.log1p(1.0 / mean_photon))


def poisson_upper_tail(cutoff: int, lam) -> np.ndarray:
    """P[Poisson(lam) >= cutoff], vectorised over lam.

    Uses the regularized incomplete gamma identity, which stays accurate for
    tail probabilities down to the underflow threshold.
    """
    return special.gammainc(cutoff, np.asarray(lam, dtype=np.float64))


def compensated_sum(terms) -> float:
    """Sum a finite sequence exactly rounded (Shewchuk cascade via fsum).

    Accurate to 1/2 ulp of the true sum independent of length and ordering,
    which is what lets 1e-11-scale bound terms survive 1e6+-term
    accumulations.
    """
    arr = np.asarray(terms, dtype=np.float64).ravel()
    return math.fsum(arr)


class CompensatedAccumulator:
    """Streaming Kahan-Babuska (Neumaier) accumulator.

    For data that cannot be materialised at once.  ``merge`` folds another
    accumulator in deterministically, so chunked reductions give
    run-to-run-identical results as long as the chunk order is fixed.
    """

    __slots__ = ("_sum", "_comp")

    def __init__(self) -> None:
        self._sum = 0.0
        self._comp = 0.0

    def add(self, x: float) -> None:
        s = self._sum
        t = s + x
        if abs(s) >= abs(x):
            self._comp += (s - t) + x
        else:
            self._comp += (x - t) + s
        self._sum = t

    def add_array(self, values) -> None:
        # fsum of the chunk, then one compensated scalar add; the per-chunk
        # fsum is exact so the only rounding left is the cross-chunk merge.
        self.add(math.fsum(np.asarray(values, dtype=np.float64).ravel()))

    def merge(self, other: "CompensatedAccumulator") -> None:
        self.add(other._sum)
        self.add(other._comp)

    @property
    def value(self) -> float:
        return self._sum + self._comp


def _validate_moments(nodes: np.ndarray, weights: np.ndarray,
                      second_moment: float, rule: str) -> None:
    if not (np.isfinite(nodes).all() and np.isfinite(weights).all()):
        raise ValueError(f"{rule} rule produced non-finite nodes or weights")
    total = math.fsum(weights)
    m2 = math.fsum(weights * nodes * nodes)
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"{rule} rule lost normalisation: sum(w) = {total!r}")
    if second_moment > 0 and abs(m2 - second_moment) > 1e-12 * second_moment:
        raise ValueError(
            f"{rule} rule lost orthogonality: E[r^2] = {m2!r}, "
            f"expected {second_moment!r}"
        )


def _laguerre_rule(count: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Laguerre nodes/weights by Golub-Welsch on the Jacobi matrix.

    scipy's recurrence-based solver overflows near count ~ 350; the
    tridiagonal eigenproblem stays stable to thousands of nodes (weights of
    far-tail nodes underflow to zero, which is harmless for probability
    weights).
    """
    from scipy.linalg import eigh_tridiagonal

    k = np.arange(count, dtype=np.float64)
    diag = 2.0 * k + 1.0
    off = k[1:]
    x, v = eigh_tridiagonal(diag, off)
    w = v[0, :] ** 2
    return x, w


def quadrature_nodes(rule: str, count: int, scale: float):
    """Nodes and probability weights for the supported quadrature rules.

    Parameters
    ----------
    rule : one of
        ``"uniform"``       -- midpoint nodes (k+1/2)*scale/count on
                               [0, scale], equal weights.
        ``"gauss_hermite"`` -- Gauss-Hermite rule rescaled so the weight is a
                               centred Gaussian of variance ``scale``.
        ``"gauss_radial"``  -- rule for the radial weight
                               r*exp(-r^2/(2*scale)) on [0, inf), built by the
                               substitution u = r^2 (Gauss-Laguerre in u).
        ``"gauss_radial_hermite"`` -- same target weight, built from a
                               2*count-point Hermite rule folded to r >= 0.
    count : number of nodes (>= 1).
    scale : interval length for ``uniform``; variance parameter otherwise.

    Returns
    -------
    (nodes, weights) : two float arrays; weights sum to 1.

    Raises
    ------
    ValueError if the requested count is so large that node generation loses
    orthogonality (checked by reproducing the first two moments of the
    target weight).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if rule != "uniform" and count > _MAX_QUAD_COUNT:
        raise ValueError(f"count {count} exceeds supported maximum {_MAX_QUAD_COUNT}")
    if scale <= 0:
        raise ValueError("scale must be > 0")

    if rule == "uniform":
        k = np.arange(count, dtype=np.float64)
        nodes = (k + 0.5) * (scale / count)
        weights = np.full(count, 1.0 / count)
        return nodes, weights

    if rule == "gauss_hermite":
        x, w = np.polynomial.hermite.hermgauss(count)
        nodes = x * math.sqrt(2.0 * scale)
        weights = w / math.sqrt(math.pi)
        if count >= 2:
            _validate_moments(nodes, weights, scale, rule)
        return nodes, weights

    if rule == "gauss_radial":
        # Target density r/scale * exp(-r^2/(2 scale)); with u = r^2 this is
        # exp(-u/(2 scale))/(2 scale), i.e. a pure Laguerre weight in
        # x = u/(2 scale).
        x, w = _laguerre_rule(count)
        nodes = np.sqrt(2.0 * scale * x)
        weights = w / math.fsum(w)
        if count >= 2:
            _validate_moments(nodes, weights, 2.0 * scale, rule)
        return nodes, weights

    if rule == "gauss_radial_hermite":
        x, w = np.polynomial.hermite.hermgauss(2 * count)
        pos = x > 0
        r = x[pos] * math.sqrt(2.0 * scale)
        # fold |X| and absorb the extra factor r of the radial weight
        weights = w[pos] * r
        weights = weights / math.fsum(weights)
        # The fold introduces a |x|^3 kink at the origin, so this variant is
        # not moment-exact like the Laguerre construction; gate only against
        # gross breakage.
        if count >= 8:
            m2 = math.fsum(weights * r * r)
            if abs(m2 - 2.0 * scale) > 5e-3 * 2.0 * scale:
                raise ValueError(f"{rule} rule lost orthogonality at count {count}")
        return r, weights

    raise ValueError(f"unknown quadrature rule {rule!r}")
