"""Level-set Monte Carlo for lattice potentials.

Samples equipotential hypersurfaces with the 1/|grad V|-weighted surface
measure, estimates the first four derivatives of the configurational
entropy from level-set integrand moments, locates critical points with
Morse indexes, and validates the sum-function moment scalings that make
the derivative estimates well-behaved in N.
"""

from .models import (CoupledRotators, FPU, Harmonic, LatticeTopology,
                     LinearProbe, Phi4, PotentialModel, chain, make_model)
from .geometry import (GeometryPoint, NearCriticalPointError, alpha,
                       integrand_suite, m1_divergence, p_closed_form,
                       psi_v_psi)
from .sampler import (ChainDiagnostics, LevelSetSamples, ShellSamplerConfig,
                      epsilon_extrapolate, sample_level_set, surface_average)
from .entropy import (BetaEstimate, DensityOfStatesTable, DerivativeEstimate,
                      LegendreTable, ThermoCurves, beta_of_v,
                      entropy_derivative, harmonic_beta, harmonic_f,
                      harmonic_surface_derivative,
                      harmonic_volume_entropy_limit, helmholtz, legendre,
                      legendre_roundtrip, oracle_density_of_states,
                      surface_average_quadrature, thermo_curves)
from .critical import (CriticalPoint, CriticalSearchResult, TopologyReport,
                       certify_window, euler_characteristic,
                       find_critical_points, morse_index,
                       rotator_chain_stationary_points,
                       structured_rotator_seeds)
from .moments import (BASES, MomentReport, RatioReport, gaussianity_distance,
                      ratio_average_check, sum_function_moments)
from .runconfig import ConfigError, RunConfig, format_config, parse_config

__version__ = "0.1.0"
