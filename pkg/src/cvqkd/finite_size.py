"""Finite-size parameter estimation and the resulting secret key rate.

Implements the normal linear channel model y = t*x + z: maximum-likelihood
estimators for (t, sigma^2, sigma_0^2, V_A), two-sided confidence intervals
at level eps_PE, propagation of detector-calibration uncertainty, the
worst-case search over the interval box, the privacy-amplification penalty
Delta(n), and the finite-size rate

    K_finite = (n/N) * (beta*I(x:y) - S_epsPE(y:E) - Delta(n)).

Raw data lives in whatever linear units the acquisition produced; everything
is converted to shot-noise units through the estimated shot noise
N0_hat = sigma0_hat^2 - v_el before touching the Gaussian formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .keyrate import SystemParams, holevo_bound, mutual_information
from .numerics import compensated_sum

__all__ = [
    "EstimationAbort",
    "CalibrationBudget",
    "EstimationRecord",
    "SecurityEpsilons",
    "WorstCaseResult",
    "KeyRateReport",
    "propagate_eta_uncertainty",
    "ml_estimates",
    "quantile_two_sided",
    "confidence_halfwidths",
    "worst_case_params",
    "delta_n",
    "finite_key_rate",
    "expected_record",
]


class EstimationAbort(RuntimeError):
    """Raised when the data cannot certify a positive correlation (t-interval
    touches zero): no key can be extracted."""


@dataclass(frozen=True)
class CalibrationBudget:
    """Detector calibration values and their measurement precisions.

    The homodyne efficiency factors as eta = eta_mod^2 * eta_phot * eta_opt
    (interferometer mode matching enters squared).  v_el and delta_v_el are
    in the same linear units as the recorded samples.
    """

    eta_mod: float = 1.0
    eta_phot: float = 1.0
    eta_opt: float = 1.0
    delta_eta_mod: float = 0.0
    delta_eta_phot: float = 0.0
    delta_eta_opt: float = 0.0
    v_el: float = 0.0
    delta_v_el: float = 0.0

    def __post_init__(self):
        for name in ("eta_mod", "eta_phot", "eta_opt"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")
        for name in ("delta_eta_mod", "delta_eta_phot", "delta_eta_opt",
                     "v_el", "delta_v_el"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def exact(cls, eta: float, v_el: float = 0.0) -> "CalibrationBudget":
        """A perfectly known detector with overall efficiency eta."""
        return cls(eta_mod=1.0, eta_phot=eta, eta_opt=1.0, v_el=v_el)

    @classmethod
    def with_relative(cls, eta: float, v_el: float, rel_eta: float,
                      rel_v_el: float) -> "CalibrationBudget":
        """Detector with given overall (eta, v_el) and relative precisions."""
        return cls(eta_mod=1.0, eta_phot=eta, eta_opt=1.0,
                   delta_eta_phot=rel_eta * eta,
                   v_el=v_el, delta_v_el=rel_v_el * v_el)


def propagate_eta_uncertainty(budget: CalibrationBudget) -> tuple[float, float]:
    """(eta, delta_eta) from the three calibrated factors.

    delta_eta = eta * (2 d_mod/mod + d_phot/phot + d_opt/opt); the factor 2
    reflects the squared mode-matching term.
    """
    eta = budget.eta_mod ** 2 * budget.eta_phot * budget.eta_opt
    delta = eta * (2.0 * budget.delta_eta_mod / budget.eta_mod
                   + budget.delta_eta_phot / budget.eta_phot
                   + budget.delta_eta_opt / budget.eta_opt)
    return eta, delta


@dataclass
class EstimationRecord:
    """ML estimates in linear units plus their confidence half-widths."""

    t_hat: float
    sigma2_hat: float
    sigma02_hat: float
    va_hat: float
    n: int
    n_prime: int
    z: float | None = None
    dt: float | None = None
    dsigma2: float | None = None
    dsigma02: float | None = None
    dva: float | None = None

    def to_dict(self) -> dict:
        return {
            "t_hat": self.t_hat,
            "sigma2_hat": self.sigma2_hat,
            "sigma02_hat": self.sigma02_hat,
            "va_hat": self.va_hat,
            "N": self.n,
            "N_prime": self.n_prime,
            "z": self.z,
            "half_widths": {"t": self.dt, "sigma2": self.dsigma2,
                            "sigma02": self.dsigma02, "va": self.dva},
        }


def ml_estimates(x, y, y0) -> EstimationRecord:
    """Maximum-likelihood estimators of the normal linear model.

    t_hat      = sum(x*y) / sum(x^2)
    sigma2_hat = mean((y - t_hat*x)^2)     (noise variance)
    sigma02_hat= mean(y0^2)                (vacuum measurement variance)
    va_hat     = mean(x^2)                 (Alice variance, her units)

    All sums are exactly rounded, so the estimates are reproducible bit for
    bit regardless of chunking upstream.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    y0 = np.asarray(y0, dtype=np.float64)
    if x.size < 2 or y0.size < 2:
        raise ValueError("need at least two samples in each batch")
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    sxx = compensated_sum(x * x)
    if sxx == 0.0:
        raise ValueError("x is identically zero")
    sxy = compensated_sum(x * y)
    t_hat = sxy / sxx
    resid = y - t_hat * x
    sigma2 = compensated_sum(resid * resid) / x.size
    sigma02 = compensated_sum(y0 * y0) / y0.size
    va = sxx / x.size
    return EstimationRecord(t_hat, sigma2, sigma02, va, x.size, y0.size)


def quantile_two_sided(eps: float, tol: float = 1e-12) -> float:
    """z such that a standard normal leaves eps/2 mass in each tail.

    Solves (1 - erf(z/sqrt(2)))/2 = eps/2 by bisection to the given absolute
    tolerance (the erfc form of the same equation keeps precision for tiny
    eps).
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must be in (0, 1)")
    lo, hi = 0.0, 50.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if math.erfc(mid / math.sqrt(2.0)) > eps:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def confidence_halfwidths(record: EstimationRecord, eps_pe: float) -> EstimationRecord:
    """Attach two-sided confidence half-widths at level eps_pe.

    dt       = z * sqrt(sigma2_hat / (N * va_hat))
    dsigma2  = z * sigma2_hat  * sqrt(2/N)
    dsigma02 = z * sigma02_hat * sqrt(2/N')
    dva      = z * va_hat      * sqrt(2/N)
    """
    z = quantile_two_sided(eps_pe)
    return replace(
        record,
        z=z,
        dt=z * math.sqrt(record.sigma2_hat / (record.n * record.va_hat)),
        dsigma2=z * record.sigma2_hat * math.sqrt(2.0 / record.n),
        dsigma02=z * record.sigma02_hat * math.sqrt(2.0 / record.n_prime),
        dva=z * record.va_hat * math.sqrt(2.0 / record.n),
    )


@dataclass(frozen=True)
class SecurityEpsilons:
    """Failure-probability budget; eps_pe + eps_pa + eps_bar <= total."""

    total: float = 1e-10
    eps_pe: float = field(default=None)  # type: ignore[assignment]
    eps_pa: float = field(default=None)  # type: ignore[assignment]
    eps_bar: float = field(default=None)  # type: ignore[assignment]
    eps_prep: float = 0.0  # informational: preparation defect, reported only

    def __post_init__(self):
        third = self.total / 3.0
        for name in ("eps_pe", "eps_pa", "eps_bar"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, third)
        if self.eps_pe + self.eps_pa + self.eps_bar > self.total * (1 + 1e-12):
            raise ValueError("eps_pe + eps_pa + eps_bar exceeds the total budget")


@dataclass
class WorstCaseResult:
    params: SystemParams
    holevo_bits: float
    corner: dict
    shot_noise: float
    flags: list


def _corner_params(t, sigma2, sigma02, va, eta, v_el, model) -> tuple[SystemParams, float, list]:
    flags = []
    n0 = sigma02 - v_el
    if n0 <= 0:
        raise EstimationAbort("estimated shot noise is not positive")
    t_chan = t * t / eta
    if t_chan > 1.0:
        flags.append("transmittance_clamped")
        t_chan = 1.0
    xi_lin = (sigma2 - sigma02) / (t * t)
    xi = xi_lin / n0
    if xi < 0:
        flags.append("excess_noise_clamped")
        xi = 0.0
    params = SystemParams(v_mod=va / n0, transmittance=t_chan,
                          excess_noise=xi, eta=eta, v_el=v_el / n0,
                          model=model)
    return params, n0, flags


def worst_case_params(record: EstimationRecord, budget: CalibrationBudget,
                      eps_pe: float, model: str = "realistic") -> WorstCaseResult:
    """Search the 2^6 interval-box corners for the Holevo-maximising one.

    Box dimensions: t, sigma^2, sigma_0^2, V_A (statistical, at eps_pe) and
    eta, v_el (calibration).  Returns the corner parameters in shot-noise
    units; aborts when the t interval touches zero.
    """
    if record.z is None:
        record = confidence_halfwidths(record, eps_pe)
    eta, d_eta = propagate_eta_uncertainty(budget)
    if record.t_hat - record.dt <= 0.0:
        raise EstimationAbort("t confidence interval touches zero")
    axes = {
        "t": (record.t_hat - record.dt, record.t_hat + record.dt),
        "sigma2": (record.sigma2_hat - record.dsigma2,
                   record.sigma2_hat + record.dsigma2),
        "sigma02": (record.sigma02_hat - record.dsigma02,
                    record.sigma02_hat + record.dsigma02),
        "va": (record.va_hat - record.dva, record.va_hat + record.dva),
        "eta": (max(eta - d_eta, 1e-12), min(eta + d_eta, 1.0)),
        "v_el": (max(budget.v_el - budget.delta_v_el, 0.0),
                 budget.v_el + budget.delta_v_el),
    }
    best = None
    for choice in product((0, 1), repeat=6):
        vals = {k: axes[k][c] for k, c in zip(axes, choice)}
        try:
            params, n0, flags = _corner_params(
                vals["t"], vals["sigma2"], vals["sigma02"], vals["va"],
                vals["eta"], vals["v_el"], model)
            chi = holevo_bound(params).holevo_bits
        except EstimationAbort:
            raise
        except ValueError:
            continue  # unphysical corner cannot be Eve's best case
        if best is None or chi > best.holevo_bits:
            best = WorstCaseResult(params, chi, vals, n0, flags)
    if best is None:
        raise EstimationAbort("no physical corner in the confidence box")
    return best


def delta_n(n: int, eps_bar: float, eps_pa: float) -> float:
    """Finite-size privacy-amplification penalty (bits per symbol):

    Delta(n) = 7*sqrt(log2(2/eps_bar)/n) + (2/n)*log2(1/eps_pa).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    return (7.0 * math.sqrt(math.log2(2.0 / eps_bar) / n)
            + 2.0 / n * math.log2(1.0 / eps_pa))


@dataclass
class KeyRateReport:
    """Everything that went into one finite-size rate evaluation."""

    rate: float
    mutual_information_bits: float
    holevo_bits: float
    delta_n: float
    n_used: int
    n_total: int
    beta: float
    model: str
    shot_noise: float
    point_params: dict
    worst_corner: dict
    flags: list
    record: dict

    def to_dict(self) -> dict:
        return {
            "K_finite": self.rate,
            "mutual_information_bits": self.mutual_information_bits,
            "holevo_bits_worst_case": self.holevo_bits,
            "delta_n": self.delta_n,
            "n_used": self.n_used,
            "N_total": self.n_total,
            "beta": self.beta,
            "model": self.model,
            "shot_noise_estimate": self.shot_noise,
            "point_estimates_snu": self.point_params,
            "worst_case_corner": self.worst_corner,
            "flags": self.flags,
            "estimation": self.record,
        }


def finite_key_rate(record: EstimationRecord, budget: CalibrationBudget,
                    epsilons: SecurityEpsilons, beta: float,
                    n_fraction: float = 1.0,
                    model: str = "realistic") -> KeyRateReport:
    """K_finite = (n/N) (beta I - S_worst - Delta(n)), negative values kept.

    I(x:y) is evaluated at the point estimates; the Holevo term at the
    worst corner of the eps_PE confidence box.
    """
    if not 0.0 < n_fraction <= 1.0:
        raise ValueError("n_fraction must be in (0, 1]")
    record = confidence_halfwidths(record, epsilons.eps_pe)
    eta, _ = propagate_eta_uncertainty(budget)
    point, n0, flags = _corner_params(
        record.t_hat, record.sigma2_hat, record.sigma02_hat, record.va_hat,
        eta, budget.v_el, model)
    point = replace(point, beta=beta)
    worst = worst_case_params(record, budget, epsilons.eps_pe, model=model)
    n_used = max(1, int(n_fraction * record.n))
    dn = delta_n(n_used, epsilons.eps_bar, epsilons.eps_pa)
    mi = mutual_information(point)
    rate = (n_used / record.n) * (beta * mi - worst.holevo_bits - dn)
    return KeyRateReport(
        rate=rate,
        mutual_information_bits=mi,
        holevo_bits=worst.holevo_bits,
        delta_n=dn,
        n_used=n_used,
        n_total=record.n,
        beta=beta,
        model=model,
        shot_noise=n0,
        point_params={"v_mod": point.v_mod, "transmittance": point.transmittance,
                      "excess_noise": point.excess_noise, "eta": point.eta,
                      "v_el": point.v_el},
        worst_corner=worst.corner,
        flags=sorted(set(flags + worst.flags)),
        record=record.to_dict(),
    )


def expected_record(params: SystemParams, shot_noise: float, n: int,
                    n_prime: int | None = None) -> EstimationRecord:
    """The estimation record an infinitely clean run would produce.

    Used for analytic rate curves: point estimates sit at their expected
    values while the half-widths still reflect the finite N and N'.
    """
    if n_prime is None:
        n_prime = n
    t = math.sqrt(params.eta * params.transmittance)
    sigma2 = shot_noise * (1.0 + params.eta * params.transmittance
                           * params.excess_noise + params.v_el)
    sigma02 = shot_noise * (1.0 + params.v_el)
    va = params.v_mod * shot_noise
    return EstimationRecord(t, sigma2, sigma02, va, n, n_prime)
