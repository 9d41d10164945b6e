"""Numerical laboratory for the stochastic thermalisation of quantum states.

Pure states diffuse on projective Hilbert space under a Schroedinger flow, a
temperature-controlled gradient flow, and isotropic noise; the stationary
law is the canonical phase-space ensemble exp(-beta H(x)).  The package
integrates the process for ensembles, computes the equilibrium ensemble
exactly, solves the corresponding Fokker-Planck equation on the two-level
state sphere, and verifies the closed-form identities the model satisfies
(energy flow, heat capacity, entropy production, density-matrix dynamics).
"""

from .geometry import (
    Spectrum,
    as_hermitian,
    as_state,
    canonical_gauge,
    expectation,
    projector,
    sample_uniform,
    uniform_average,
    uniform_projector_second_moment,
    variance,
    variance_decomposition,
)
from .canonical import (
    CanonicalResult,
    DosEstimate,
    canonical_summary,
    dos,
    equilibrium_density_matrix,
    equilibrium_energy,
    equilibrium_second_moment,
    heat_capacity,
    mean_conditional_variance,
    partition_function,
    population_mean,
    population_second_moment,
    verify_capacity_identity,
    von_neumann_density_matrix,
)
from .sde import (
    EnsembleSeries,
    SdeParams,
    TrajectoryRecord,
    drift_vector,
    noise_dim,
    sample_theta_equilibrium,
    simulate_ensemble,
    simulate_theta_ensemble,
    simulate_trajectory,
    spin_half_theta_step,
    step,
    trajectory_rng,
)
from .fokker_planck import (
    Density1D,
    ThermoSeries,
    energy,
    entropy,
    eta_field,
    fp_step,
    production,
    solve,
    stable_dt,
)
from .moments import (
    LiouvilleReport,
    MomentSnapshot,
    contract_second_moment,
    estimate_moments,
    liouville_rhs,
    liouville_terms,
    verify_liouville,
)

__version__ = "0.1.0"
