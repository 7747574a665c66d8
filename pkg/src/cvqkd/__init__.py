"""Security numerics for Gaussian continuous-variable QKD with realistic
imperfections: discretized modulation, finitely calibrated detection, and
preparation phase noise."""

__version__ = "0.1.0"

from .finite_size import (
    CalibrationBudget,
    EstimationAbort,
    EstimationRecord,
    KeyRateReport,
    SecurityEpsilons,
    confidence_halfwidths,
    delta_n,
    expected_record,
    finite_key_rate,
    ml_estimates,
    propagate_eta_uncertainty,
    quantile_two_sided,
    worst_case_params,
)
from .keyrate import (
    HolevoDecomposition,
    SystemParams,
    asymptotic_key_rate,
    chi_hom,
    chi_line,
    entropy_g,
    holevo_bound,
    mutual_information,
    symplectic_eigenvalues,
)
from .modulation import (
    CartesianGridSpec,
    CoherentEnsemble,
    EntropyReport,
    MemoryGuardError,
    PolarEnsemble,
    PolarGridSpec,
    TraceDistanceBudget,
    build_cartesian,
    build_polar,
    certify_cartesian,
    certify_polar,
    default_cutoff,
    ensemble_entropy,
    perturbation_study,
    sigma_matrix_elements,
    trace_distance_budget,
    vacuum_overlap_gap,
)
from .numerics import (
    CompensatedAccumulator,
    LogAmplitude,
    ThermalSpectrum,
    coherent_fock_amplitude,
    compensated_sum,
    poisson_upper_tail,
    quadrature_nodes,
    tail_mass,
    thermal_coefficient,
    thermal_coefficients,
)
from .phase_noise import (
    E1Estimate,
    PhaseCalibrationSamples,
    PhaseNoiseComparison,
    PhaseNoiseModel,
    estimate_e1,
    phase_noise_covariance,
    phase_noise_keyrate_comparison,
    remap_parameters,
    rotated_covariance,
)
from .simulate import (
    SimulationSpec,
    rng_stream,
    simulate_channel,
    simulate_phase_calibration,
    standard_normals,
)
