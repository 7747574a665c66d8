"""Seeded Monte Carlo generation of protocol data.

Ground truth for every estimator in the package: the normal linear channel
y = t*x + z with t = sqrt(eta*T), vacuum calibration shots, and the
phase-noise calibration measurement.  Randomness comes from counter-based
Philox streams keyed by (seed, stream_id) so independent quantities never
share a stream, and Gaussians are produced by the inverse CDF applied to
uniforms with documented bit-level construction, making every sample
reproducible across runs and platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .phase_noise import PhaseCalibrationSamples, PhaseNoiseModel

__all__ = [
    "SimulationSpec",
    "rng_stream",
    "open_uniforms",
    "standard_normals",
    "simulate_channel",
    "simulate_phase_calibration",
]

# fixed stream ids per role; anything new must claim a fresh id
_STREAM_X = 11
_STREAM_Z = 12
_STREAM_VACUUM = 13
_STREAM_AMP_Q = 21
_STREAM_AMP_P = 22
_STREAM_THETA = 23
_STREAM_SHOT = 24


def rng_stream(seed: int, stream_id: int) -> np.random.Generator:
    """Independent deterministic stream for (seed, stream_id).

    Philox is counter-based: distinct keys give statistically independent
    sequences, and the same key always replays the same sequence.
    """
    bits = np.random.Philox(key=np.array([seed & (2**64 - 1),
                                          stream_id & (2**64 - 1)],
                                         dtype=np.uint64))
    return np.random.Generator(bits)


def open_uniforms(gen: np.random.Generator, size: int) -> np.ndarray:
    """Uniforms on the open interval (0, 1): (k + 1/2) * 2^-53.

    The half-step offset keeps the inverse CDF finite at both ends.
    """
    k = gen.integers(0, 1 << 53, size=size, dtype=np.int64)
    return (k.astype(np.float64) + 0.5) * 2.0 ** -53


def standard_normals(gen: np.random.Generator, size: int) -> np.ndarray:
    """Standard normals via the inverse CDF (ndtri) of open uniforms."""
    return special.ndtri(open_uniforms(gen, size))


@dataclass(frozen=True)
class SimulationSpec:
    """Channel and acquisition description.

    Noise parameters (excess_noise, v_el) are in shot-noise units; the
    simulation itself runs in linear units scaled by ``shot_noise`` so the
    normalisation path of the estimators is genuinely exercised.
    """

    v_mod: float
    transmittance: float
    excess_noise: float = 0.0
    eta: float = 1.0
    v_el: float = 0.0
    shot_noise: float = 1.0
    n_samples: int = 10_000
    n_vacuum: int | None = None
    phase_noise: PhaseNoiseModel | None = None
    seed: int = 0

    def __post_init__(self):
        if self.v_mod <= 0 or self.shot_noise <= 0:
            raise ValueError("v_mod and shot_noise must be > 0")
        if not 0.0 < self.transmittance <= 1.0:
            raise ValueError("transmittance must be in (0, 1]")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must be in (0, 1]")
        if self.excess_noise < 0 or self.v_el < 0:
            raise ValueError("noise terms must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    @property
    def n_vacuum_effective(self) -> int:
        return self.n_samples if self.n_vacuum is None else self.n_vacuum

    @property
    def t(self) -> float:
        return math.sqrt(self.eta * self.transmittance)

    @property
    def noise_variance(self) -> float:
        """Var(z) = N0 * (1 + eta*T*xi + v_el), linear units."""
        return self.shot_noise * (1.0 + self.eta * self.transmittance
                                  * self.excess_noise + self.v_el)

    @property
    def vacuum_variance(self) -> float:
        return self.shot_noise * (1.0 + self.v_el)


def simulate_channel(spec: SimulationSpec):
    """Draw (x, y, y0): modulation, channel output, and vacuum shots.

    x ~ N(0, v_mod*N0); y = t*x + z with z ~ N(0, noise_variance);
    y0 ~ N(0, vacuum_variance).  Bit-identical for a fixed seed.
    """
    sx = math.sqrt(spec.v_mod * spec.shot_noise)
    x = sx * standard_normals(rng_stream(spec.seed, _STREAM_X), spec.n_samples)
    z = math.sqrt(spec.noise_variance) * standard_normals(
        rng_stream(spec.seed, _STREAM_Z), spec.n_samples)
    y = spec.t * x + z
    y0 = math.sqrt(spec.vacuum_variance) * standard_normals(
        rng_stream(spec.seed, _STREAM_VACUUM), spec.n_vacuum_effective)
    return x, y, y0


def simulate_phase_calibration(spec: SimulationSpec) -> PhaseCalibrationSamples:
    """Self-calibration run: Alice modulates, applies her phase noise, and
    homodynes the q quadrature herself.

    The modulated point A*e^{i phi} comes from the usual bivariate Gaussian
    (variance v_mod*N0 per quadrature); the outcome is
    A*cos(phi + theta) + shot noise.
    """
    if spec.phase_noise is None:
        raise ValueError("spec.phase_noise must be set for a calibration run")
    n = spec.n_samples
    sx = math.sqrt(spec.v_mod * spec.shot_noise)
    q = sx * standard_normals(rng_stream(spec.seed, _STREAM_AMP_Q), n)
    p = sx * standard_normals(rng_stream(spec.seed, _STREAM_AMP_P), n)
    amplitude = np.hypot(q, p)
    angle = np.arctan2(p, q)
    theta = spec.phase_noise.sample(rng_stream(spec.seed, _STREAM_THETA), n)
    shot = math.sqrt(spec.shot_noise) * standard_normals(
        rng_stream(spec.seed, _STREAM_SHOT), n)
    outcome = amplitude * np.cos(angle + theta) + shot
    return PhaseCalibrationSamples(amplitude, angle, outcome, spec.shot_noise)
