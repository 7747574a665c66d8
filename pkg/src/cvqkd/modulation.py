"""Discretized-modulation ensembles and their distance-to-thermal certification.

A Gaussian modulation realised on hardware is a finite weighted set of
coherent states.  The functions here build such ensembles (Cartesian grid,
polar grid, Gauss-quadrature radial nodes, optionally perturbed), compute the
Fock-basis matrix elements of the resulting mixture, and assemble the
four-term distance budget

    epsilon_prep = R_rho + Delta_diag + 2*Delta_nondiag + 2*sqrt(R_sigma)
                   (+ truncation slack)

that upper-bounds the trace distance to the ideal thermal state, together
with the randomness entropy each discretization consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .numerics import (
    compensated_sum,
    poisson_upper_tail,
    tail_mass,
    thermal_coefficients,
    quadrature_nodes,
)

__all__ = [
    "MemoryGuardError",
    "CartesianGridSpec",
    "PolarGridSpec",
    "CoherentEnsemble",
    "PolarEnsemble",
    "TraceDistanceBudget",
    "EntropyReport",
    "build_cartesian",
    "build_polar",
    "sigma_matrix_elements",
    "trace_distance_budget",
    "vacuum_overlap_gap",
    "ensemble_entropy",
    "default_cutoff",
    "perturbation_study",
    "certify_cartesian",
    "certify_polar",
]

# significance threshold sits this many nats below the certification target;
# the dropped mass is bounded analytically and charged to the budget
_TRUNCATION_MARGIN_NATS = 40.0

_DEFAULT_MEM_LIMIT = 4 * 2**30


class MemoryGuardError(MemoryError):
    """Raised when a requested Fock matrix would exceed the memory limit."""


# ---------------------------------------------------------------------------
# grid specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CartesianGridSpec:
    """Square grid of coherent states approximating a Gaussian modulation.

    The grid runs over (q_k, p_l) = (k, l) * half_width / steps_per_side for
    k, l in [-N, N]; per-axis weights follow a Gaussian of variance
    ``weight_variance`` (defaults to the modulation variance).

    cutoff_scheme:
        "even_redistribution" -- truncated Gaussian weights renormalised.
        "edge_mass"           -- Riemann weights, lost mass split onto +-N.
    perturbation_sigma > 0 displaces every grid point independently by a
    Gaussian of that standard deviation per quadrature (a model for
    modulator calibration errors).
    """

    modulation_variance: float
    steps_per_side: int
    half_width: float | None = None
    cutoff_scheme: str = "even_redistribution"
    perturbation_sigma: float = 0.0
    weight_variance: float | None = None

    def __post_init__(self):
        if self.modulation_variance <= 0:
            raise ValueError("modulation variance must be > 0")
        if self.steps_per_side < 1:
            raise ValueError("steps_per_side must be >= 1")
        if self.half_width is not None and self.half_width <= 0:
            raise ValueError("half_width must be > 0")
        if self.cutoff_scheme not in ("even_redistribution", "edge_mass"):
            raise ValueError(f"unknown cutoff scheme {self.cutoff_scheme!r}")
        if self.perturbation_sigma < 0:
            raise ValueError("perturbation_sigma must be >= 0")

    @classmethod
    def standard(cls, modulation_variance: float, cutoff_sd: float = 7.0,
                 steps_per_unit: float = 4.0, **kwargs) -> "CartesianGridSpec":
        """Grid truncated at ``cutoff_sd`` standard deviations, discretized in
        steps of 1/steps_per_unit shot-noise units."""
        a = cutoff_sd * math.sqrt(modulation_variance)
        n = math.ceil(steps_per_unit * a)
        return cls(modulation_variance, n, half_width=a, **kwargs)

    @property
    def a(self) -> float:
        if self.half_width is not None:
            return self.half_width
        return 7.0 * math.sqrt(self.modulation_variance)

    @property
    def step(self) -> float:
        return self.a / self.steps_per_side

    @property
    def points_per_axis(self) -> int:
        return 2 * self.steps_per_side + 1

    @property
    def effective_weight_variance(self) -> float:
        return (self.weight_variance if self.weight_variance is not None
                else self.modulation_variance)

    def axis(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis grid values and probability weights."""
        n = self.steps_per_side
        k = np.arange(-n, n + 1, dtype=np.float64)
        x = k * (self.a / n)
        v = self.effective_weight_variance
        if self.cutoff_scheme == "even_redistribution":
            gamma = np.exp(-x * x / (2.0 * v))
            w = gamma / math.fsum(gamma)
        else:
            w = (self.step / math.sqrt(2.0 * math.pi * v)
                 * np.exp(-x * x / (2.0 * v)))
            interior = math.fsum(w[1:-1])
            w[0] = w[-1] = 0.5 * (1.0 - interior)
        return x, w


@dataclass(frozen=True)
class PolarGridSpec:
    """Polar discretization: radii times equally spaced angles.

    Radii follow ``radial_rule``:
        "uniform"              -- midpoints (k+1/2)*R/K with weights
                                  proportional to r*exp(-r^2/(2V));
        "gauss"                -- Gauss nodes for the radial weight
                                  r*exp(-r^2/(2V)) on [0, inf)  (the radius
                                  bound is not enforced for this rule);
        "gauss_hermite_folded" -- folded Gauss-Hermite variant of the same.
    Angles are theta_l = (l + 1/2) * 2*pi/L, each carrying 1/L of the radial
    weight.
    """

    modulation_variance: float
    radial_count: int
    angular_count: int
    radius: float | None = None
    radial_rule: str = "uniform"

    def __post_init__(self):
        if self.modulation_variance <= 0:
            raise ValueError("modulation variance must be > 0")
        if self.radial_count < 1 or self.angular_count < 1:
            raise ValueError("radial_count and angular_count must be >= 1")
        if self.radial_rule not in ("uniform", "gauss", "gauss_hermite_folded"):
            raise ValueError(f"unknown radial rule {self.radial_rule!r}")

    @property
    def r_max(self) -> float:
        if self.radius is not None:
            return self.radius
        return 7.0 * math.sqrt(self.modulation_variance)

    def radial(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.modulation_variance
        if self.radial_rule == "uniform":
            r, _ = quadrature_nodes("uniform", self.radial_count, self.r_max)
            gamma = r * np.exp(-r * r / (2.0 * v))
            return r, gamma / math.fsum(gamma)
        if self.radial_rule == "gauss":
            return quadrature_nodes("gauss_radial", self.radial_count, v)
        return quadrature_nodes("gauss_radial_hermite", self.radial_count, v)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

class CoherentEnsemble:
    """Finite weighted set of coherent states (weights sum to one)."""

    def __init__(self, weights: np.ndarray, alphas: np.ndarray):
        weights = np.asarray(weights, dtype=np.float64)
        alphas = np.asarray(alphas, dtype=np.complex128)
        if weights.shape != alphas.shape or weights.ndim != 1:
            raise ValueError("weights and alphas must be matching 1-d arrays")
        if np.any(weights < 0):
            raise ValueError("weights must be >= 0")
        total = math.fsum(weights)
        if abs(total - 1.0) > 1e-14:
            raise ValueError(f"weights must sum to 1 (got {total!r})")
        self.weights = weights
        self.alphas = alphas

    @property
    def n_points(self) -> int:
        return self.weights.size

    def iter_chunks(self, size: int = 1 << 16):
        for start in range(0, self.n_points, size):
            sl = slice(start, start + size)
            yield self.weights[sl], self.alphas[sl]

    def sqrt_weight_sum(self) -> float:
        return math.fsum(np.sqrt(self.weights))


class PolarEnsemble(CoherentEnsemble):
    """Polar-product ensemble kept in factored (radial x angular) form.

    A 17-bit radial grid with 2000 angles has 2.6e8 points; keeping the
    factored form lets every operation work from the K radial nodes alone.
    """

    def __init__(self, radii: np.ndarray, radial_weights: np.ndarray,
                 angular_count: int):
        self.radii = np.asarray(radii, dtype=np.float64)
        self.radial_weights = np.asarray(radial_weights, dtype=np.float64)
        self.angular_count = int(angular_count)
        total = math.fsum(self.radial_weights)
        if abs(total - 1.0) > 1e-14:
            raise ValueError(f"radial weights must sum to 1 (got {total!r})")
        # intentionally skip CoherentEnsemble.__init__: points stay implicit

    @property
    def n_points(self) -> int:
        return self.radii.size * self.angular_count

    @property
    def weights(self) -> np.ndarray:
        return np.repeat(self.radial_weights / self.angular_count,
                         self.angular_count)

    @weights.setter
    def weights(self, _):  # pragma: no cover
        raise AttributeError("polar ensembles are immutable")

    @property
    def alphas(self) -> np.ndarray:
        if self.n_points > 1 << 22:
            raise MemoryGuardError(
                f"materialising {self.n_points} polar points; use the factored "
                "operations instead")
        return np.concatenate([a for _, a in self.iter_chunks()])

    @alphas.setter
    def alphas(self, _):  # pragma: no cover
        raise AttributeError("polar ensembles are immutable")

    def angles(self) -> np.ndarray:
        ll = np.arange(self.angular_count, dtype=np.float64)
        return (ll + 0.5) * (2.0 * math.pi / self.angular_count)

    def iter_chunks(self, size: int = 1 << 16):
        phases = np.exp(1j * self.angles())
        rows = max(1, size // self.angular_count)
        for start in range(0, self.radii.size, rows):
            sl = slice(start, start + rows)
            alpha = (self.radii[sl, None] * phases[None, :]).ravel()
            w = np.repeat(self.radial_weights[sl] / self.angular_count,
                          self.angular_count)
            yield w, alpha

    def to_explicit(self) -> CoherentEnsemble:
        return CoherentEnsemble(self.weights, self.alphas)

    def sqrt_weight_sum(self) -> float:
        return (math.fsum(np.sqrt(self.radial_weights / self.angular_count))
                * self.angular_count)


def build_cartesian(spec: CartesianGridSpec, seed=None) -> CoherentEnsemble:
    """Materialise the Cartesian grid ensemble (optionally perturbed)."""
    x, wx = spec.axis()
    weights = np.outer(wx, wx).ravel()
    q = np.repeat(x, x.size)
    p = np.tile(x, x.size)
    if spec.perturbation_sigma > 0.0:
        from .simulate import rng_stream

        if seed is None:
            raise ValueError("a seed is required when perturbation_sigma > 0")
        gen = seed if isinstance(seed, np.random.Generator) else rng_stream(seed, 0)
        q = q + spec.perturbation_sigma * _standard_normals(gen, q.size)
        p = p + spec.perturbation_sigma * _standard_normals(gen, p.size)
    return CoherentEnsemble(weights, q + 1j * p)


def _standard_normals(gen: np.random.Generator, size: int) -> np.ndarray:
    from .simulate import standard_normals

    return standard_normals(gen, size)


def build_polar(spec: PolarGridSpec) -> PolarEnsemble:
    """Polar ensemble in factored form; K*L points of weight w_k/L each."""
    r, w = spec.radial()
    return PolarEnsemble(r, w, spec.angular_count)


# ---------------------------------------------------------------------------
# sigma matrix elements and the distance budget
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceDistanceBudget:
    """The four bound terms, their truncation slack, and the total."""

    R_rho: float
    Delta_diag: float
    Delta_nondiag: float
    R_sigma: float
    truncation_slack: float
    epsilon_prep: float
    cutoff: int

    @staticmethod
    def assemble(r_rho: float, delta_diag: float, delta_nondiag: float,
                 r_sigma: float, slack: float, cutoff: int) -> "TraceDistanceBudget":
        total = math.fsum([r_rho, delta_diag, 2.0 * delta_nondiag,
                           2.0 * math.sqrt(max(r_sigma, 0.0)), slack])
        return TraceDistanceBudget(r_rho, delta_diag, delta_nondiag,
                                   max(r_sigma, 0.0), slack, total, cutoff)

    def to_dict(self) -> dict:
        return {
            "Q": self.cutoff,
            "R_rho": self.R_rho,
            "Delta_diag": self.Delta_diag,
            "Delta_nondiag": self.Delta_nondiag,
            "R_sigma": self.R_sigma,
            "slack": self.truncation_slack,
            "epsilon_prep": self.epsilon_prep,
        }


def _log_tau(target: float) -> float:
    return math.log(target) - _TRUNCATION_MARGIN_NATS


def _truncation_slack(ensemble: CoherentEnsemble, cutoff: int,
                      log_tau: float) -> float:
    # dropped per-point terms have magnitude < tau = exp(log_tau); summed over
    # every matrix entry their effect on the budget is below
    # 2 * Q^(3/2) * tau * sum_j sqrt(w_j)
    return 2.0 * cutoff ** 1.5 * math.exp(log_tau) * ensemble.sqrt_weight_sum()


def _r_sigma(ensemble: CoherentEnsemble, cutoff: int) -> float:
    """1 - tr(Pi sigma Pi) via per-point Poisson upper tails.

    The direct subtraction would need ~1e-24 resolution against 1; the
    identity sum_j w_j * P[Poisson(|alpha_j|^2) >= Q] is exact and
    well-conditioned.
    """
    if isinstance(ensemble, PolarEnsemble):
        lam = ensemble.radii ** 2
        return math.fsum(ensemble.radial_weights * poisson_upper_tail(cutoff, lam))
    parts = []
    for w, alpha in ensemble.iter_chunks():
        lam = np.abs(alpha) ** 2
        parts.append(w * poisson_upper_tail(cutoff, lam))
    return math.fsum(np.concatenate(parts))


def _polar_bands(ensemble: PolarEnsemble, cutoff: int,
                 chunk: int = 2048) -> list[np.ndarray]:
    """Nonzero bands of sigma for a polar ensemble.

    bands[j][n] = <n| sigma |n + j*L>; only j*L < cutoff exist.  Values are
    real with sign (-1)^j from the half-step angular offset.
    """
    L = ensemble.angular_count
    n_bands = (cutoff - 1) // L + 1
    sums = [np.zeros(cutoff - j * L) for j in range(n_bands)]
    comps = [np.zeros_like(s) for s in sums]
    for start in range(0, ensemble.radii.size, chunk):
        sl = slice(start, start + chunk)
        lam = ensemble.radii[sl] ** 2
        w = ensemble.radial_weights[sl]
        half = _kernels.half_log_pmf_grid(lam, cutoff)
        with np.errstate(under="ignore"):
            for j in range(n_bands):
                width = cutoff - j * L
                term = np.exp(half[:, :width] + half[:, j * L:])
                part = np.sum(w[:, None] * term, axis=0)
                if j % 2 == 1:
                    part = -part
                sums[j] = _kernels._neumaier_add_inplace(sums[j], comps[j], part)
    return [s + c for s, c in zip(sums, comps)]


def _ensemble_qpw(ensemble: CoherentEnsemble):
    alphas = ensemble.alphas
    return alphas.real.copy(), alphas.imag.copy(), ensemble.weights


def _compute_lower_sigma(ensemble, cutoff, structure_hint, mode, target):
    """Dispatch to the right kernel; returns one of
    ('classes', modulus, blocks), ('bands', L, bands), ('full', lower_matrix)
    plus the truncation slack charged."""
    if isinstance(ensemble, PolarEnsemble) and structure_hint is None:
        structure_hint = ("polar", ensemble.angular_count)
    if structure_hint is not None and not isinstance(structure_hint, tuple):
        structure_hint = (structure_hint,)

    if structure_hint and structure_hint[0] == "polar":
        if isinstance(ensemble, PolarEnsemble):
            return ("bands", ensemble.angular_count,
                    _polar_bands(ensemble, cutoff)), 0.0
        modulus = int(structure_hint[1])
        if modulus >= cutoff:
            modulus = cutoff  # only the diagonal class survives anyway
        q, p, w = _ensemble_qpw(ensemble)
        lt = _log_tau(target)
        blocks = _kernels.accumulate_classes(q, p, w, cutoff, modulus, lt)
        return ("classes", modulus, blocks), _truncation_slack(ensemble, cutoff, lt)

    if structure_hint and structure_hint[0] == "cartesian_symmetric":
        q, p, w = _ensemble_qpw(ensemble)
        lt = _log_tau(target)
        blocks = _kernels.accumulate_classes(q, p, w, cutoff, 4, lt)
        return ("classes", 4, blocks), _truncation_slack(ensemble, cutoff, lt)

    q, p, w = _ensemble_qpw(ensemble)
    if mode == "fast":
        return ("full", _kernels.accumulate_fast(q, p, w, cutoff)), 0.0
    lt = _log_tau(target)
    lower = _kernels.accumulate_generic(q, p, w, cutoff, lt)
    return ("full", lower), _truncation_slack(ensemble, cutoff, lt)


def sigma_matrix_elements(ensemble: CoherentEnsemble, cutoff: int,
                          structure_hint=None, mode: str = "compensated",
                          target: float = 1e-10,
                          mem_limit: int = _DEFAULT_MEM_LIMIT) -> np.ndarray:
    """Full Hermitian matrix <n|sigma|m> for n, m < cutoff.

    ``structure_hint`` may be "cartesian_symmetric" (entries with
    n != m mod 4 are exactly zero and are skipped) or ("polar", L)
    (entries with L not dividing n-m are skipped).  Skipped entries are
    provably zero, so nothing is charged to the error budget for them.

    ``mode="fast"`` switches to plain BLAS accumulation (per-entry noise
    ~1e-15); the default compensated mode is required when reading off
    quantities near 1e-11.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    need = 16 * cutoff * cutoff
    if need > mem_limit:
        raise MemoryGuardError(
            f"sigma matrix needs {need} bytes > limit {mem_limit}")
    (kind, *data), _slack = _compute_lower_sigma(
        ensemble, cutoff, structure_hint, mode, target)
    out = np.zeros((cutoff, cutoff), dtype=np.complex128)
    if kind == "full":
        lower = data[0]
        out += lower
        strict = np.tril(lower, k=-1)
        out += strict.conj().T
    elif kind == "classes":
        modulus, blocks = data
        for c in range(modulus):
            idx = np.arange(c, cutoff, modulus)
            b = blocks[c][:idx.size, :idx.size]
            full = b + np.tril(b, k=-1).T
            out[np.ix_(idx, idx)] = full
    else:
        L, bands = data
        n = np.arange(cutoff)
        out[n, n] = bands[0]
        for j in range(1, len(bands)):
            m = np.arange(cutoff - j * L)
            out[m, m + j * L] = bands[j]
            out[m + j * L, m] = bands[j]
    return out


def trace_distance_budget(ensemble: CoherentEnsemble, mean_photon: float,
                          cutoff: int, structure_hint=None,
                          mode: str = "compensated",
                          target: float = 1e-10,
                          mem_limit: int = _DEFAULT_MEM_LIMIT) -> TraceDistanceBudget:
    """Assemble the full distance budget against a thermal state.

    ``mean_photon`` is the target thermal occupation (2*V_A for a Gaussian
    modulation of variance V_A per quadrature).  Deterministic given the
    ensemble.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    acc_bytes = _accumulator_bytes(ensemble, cutoff, structure_hint, mode)
    if acc_bytes > mem_limit:
        raise MemoryGuardError(
            f"budget accumulators need {acc_bytes} bytes > limit {mem_limit}; "
            "raise mem_limit or lower the cutoff")
    (kind, *data), slack = _compute_lower_sigma(
        ensemble, cutoff, structure_hint, mode, target)
    if kind == "full":
        lower = data[0]
        diag = np.real(np.diagonal(lower)).copy()
        off = np.abs(lower[np.tril_indices(cutoff, k=-1)])
        delta_nondiag = math.fsum(off)
    elif kind == "classes":
        modulus, blocks = data
        diag = np.zeros(cutoff)
        parts = []
        for c in range(modulus):
            idx = np.arange(c, cutoff, modulus)
            b = blocks[c][:idx.size, :idx.size]
            diag[idx] = np.diagonal(b)
            parts.append(np.abs(b[np.tril_indices(idx.size, k=-1)]))
        delta_nondiag = math.fsum(np.concatenate(parts)) if parts else 0.0
    else:
        _L, bands = data
        diag = bands[0]
        delta_nondiag = math.fsum(
            np.abs(np.concatenate(bands[1:]))) if len(bands) > 1 else 0.0
    rho = thermal_coefficients(mean_photon, cutoff)
    delta_diag = math.fsum(np.abs(rho - diag))
    return TraceDistanceBudget.assemble(
        tail_mass(mean_photon, cutoff) if mean_photon > 0 else 0.0,
        delta_diag, delta_nondiag, _r_sigma(ensemble, cutoff), slack, cutoff)


def _accumulator_bytes(ensemble, cutoff, structure_hint, mode) -> int:
    if isinstance(ensemble, PolarEnsemble) or (
            structure_hint and str(structure_hint[0] if isinstance(structure_hint, tuple)
                                   else structure_hint) == "polar"):
        return 64 * cutoff
    if structure_hint:  # class blocks: 2 arrays x modulus blocks ~ 2*Q^2/M
        m = 4
        per_chunk = 2 * m * ((cutoff + m - 1) // m) ** 2 * 8
        return 16 * per_chunk
    if mode == "fast":
        return 16 * cutoff * cutoff
    n_chunks = _kernels._chunk_count(cutoff, getattr(ensemble, "n_points", 1))
    return n_chunks * 4 * cutoff * cutoff * 8


def vacuum_overlap_gap(ensemble: CoherentEnsemble, mean_photon: float) -> float:
    """|<0|rho|0> - <0|sigma|0>| between the thermal target and the ensemble."""
    rho00 = 1.0 / (mean_photon + 1.0)
    if isinstance(ensemble, PolarEnsemble):
        with np.errstate(under="ignore"):
            s = math.fsum(ensemble.radial_weights * np.exp(-ensemble.radii ** 2))
        return abs(rho00 - s)
    parts = []
    with np.errstate(under="ignore"):
        for w, alpha in ensemble.iter_chunks():
            parts.append(w * np.exp(-np.abs(alpha) ** 2))
    return abs(rho00 - math.fsum(np.concatenate(parts)))


# ---------------------------------------------------------------------------
# entropy accounting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EntropyReport:
    total_bits: float
    components: dict = field(default_factory=dict)


def _shannon_bits(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=np.float64)
    w = w[w > 0.0]
    return -math.fsum(w * np.log2(w))


def ensemble_entropy(obj) -> EntropyReport:
    """Shannon entropy (bits) of the randomness used to draw from a grid.

    Product structures are broken down: Cartesian grids report per-axis
    entropy, polar grids report angle and modulus entropy separately.
    """
    if isinstance(obj, CartesianGridSpec):
        _, w = obj.axis()
        per_axis = _shannon_bits(w)
        return EntropyReport(2.0 * per_axis, {"per_axis_bits": per_axis})
    if isinstance(obj, PolarGridSpec):
        _, w = obj.radial()
        modulus = _shannon_bits(w)
        angle = math.log2(obj.angular_count)
        return EntropyReport(angle + modulus,
                             {"angle_bits": angle, "modulus_bits": modulus})
    if isinstance(obj, PolarEnsemble):
        modulus = _shannon_bits(obj.radial_weights)
        angle = math.log2(obj.angular_count)
        return EntropyReport(angle + modulus,
                             {"angle_bits": angle, "modulus_bits": modulus})
    if isinstance(obj, CoherentEnsemble):
        return EntropyReport(_shannon_bits(obj.weights), {})
    raise TypeError(f"cannot compute entropy of {type(obj)!r}")


# ---------------------------------------------------------------------------
# cutoff selection, perturbation study, high-level drivers
# ---------------------------------------------------------------------------

def default_cutoff(ensemble: CoherentEnsemble, mean_photon: float,
                   target: float = 1e-10) -> int:
    """Smallest cutoff with R_rho <= 0.01*target and R_sigma <= (0.01*target)^2."""
    frac = 0.01 * target
    if mean_photon > 0:
        q = math.ceil(math.log(frac) / math.log(mean_photon / (mean_photon + 1.0)))
        q = max(q, 1)
    else:
        q = 1
    bound = frac * frac
    while _r_sigma(ensemble, q) > bound:
        q = math.ceil(q * 1.25)
    lo, hi = max(1, int(q / 1.25)), q
    while lo < hi:
        mid = (lo + hi) // 2
        if _r_sigma(ensemble, mid) <= bound and tail_mass(mean_photon, mid) <= frac:
            hi = mid
        else:
            lo = mid + 1
    return lo


@dataclass(frozen=True)
class PerturbationStudy:
    sigma_errors: np.ndarray
    mean_epsilon: np.ndarray
    epsilon_samples: list
    slope: float
    cutoffs: list


def perturbation_study(spec: CartesianGridSpec, sigma_errors, trials: int,
                       seed: int, cutoff: int | None = None,
                       mode: str = "fast") -> PerturbationStudy:
    """Mean distance budget of randomly perturbed grids, per error level.

    Fits the proportionality coefficient (least squares through the origin)
    of mean epsilon_prep versus the perturbation standard deviation.
    """
    from .simulate import rng_stream

    if trials < 1:
        raise ValueError("trials must be >= 1")
    sigma_errors = np.asarray(sigma_errors, dtype=np.float64)
    xbar = 2.0 * spec.modulation_variance
    samples = []
    means = np.empty(sigma_errors.size)
    cutoffs = []
    stream = 0
    base = build_cartesian(replace(spec, perturbation_sigma=0.0))
    for i, s_err in enumerate(sigma_errors):
        if cutoff is None:
            target = max(1e-12, 0.001 * s_err) if s_err > 0 else 1e-12
            q = default_cutoff(base, xbar, target)
        else:
            q = cutoff
        cutoffs.append(q)
        pspec = replace(spec, perturbation_sigma=float(s_err))
        eps = np.empty(trials)
        for t in range(trials):
            gen = rng_stream(seed, stream)
            stream += 1
            if s_err > 0:
                ens = build_cartesian(pspec, seed=gen)
                hint = None
            else:
                ens = base
                hint = "cartesian_symmetric"
            budget = trace_distance_budget(ens, xbar, q, structure_hint=hint,
                                           mode=mode if s_err > 0 else "compensated",
                                           target=max(1e-12, 0.001 * s_err)
                                           if s_err > 0 else 1e-12)
            eps[t] = budget.epsilon_prep
        samples.append(eps)
        means[i] = eps.mean()
    denom = float(np.dot(sigma_errors, sigma_errors))
    slope = float(np.dot(sigma_errors, means) / denom) if denom > 0 else 0.0
    return PerturbationStudy(sigma_errors, means, samples, slope, cutoffs)


def certify_cartesian(spec: CartesianGridSpec, cutoff: int | None = None,
                      seed=None, target: float = 1e-10,
                      mode: str | None = None):
    """Build the grid and its budget with sensible defaults.

    Unperturbed grids get the mod-4 symmetry hint and compensated
    accumulation; perturbed grids fall back to the generic dense path.
    """
    ens = build_cartesian(spec, seed=seed)
    xbar = 2.0 * spec.modulation_variance
    if cutoff is None:
        cutoff = default_cutoff(ens, xbar, target)
    symmetric = spec.perturbation_sigma == 0.0
    hint = "cartesian_symmetric" if symmetric else None
    if mode is None:
        mode = "compensated" if symmetric else "fast"
    budget = trace_distance_budget(ens, xbar, cutoff, structure_hint=hint,
                                   mode=mode, target=target)
    return ens, budget


def certify_polar(spec: PolarGridSpec, cutoff: int | None = None,
                  target: float = 1e-10):
    """Polar counterpart of certify_cartesian (always factored/exact path)."""
    ens = build_polar(spec)
    xbar = 2.0 * spec.modulation_variance
    if cutoff is None:
        cutoff = default_cutoff(ens, xbar, target)
    budget = trace_distance_budget(ens, xbar, cutoff, target=target)
    return ens, budget
