"""Explicit L^p-Wasserstein contraction certificates for diffusions whose
drift is dissipative at infinity, verified empirically by simulating
reflection / synchronous / hybrid couplings."""

__version__ = "0.1.0"

from .drifts import (Certificate, DissipativityProfile, DriftModel,
                     chaining_bound, check_certificate, default_certificate,
                     eval_drift, kappa_analytic, kappa_sampled, make_model,
                     profile_from_model)
from .lyapunov import (AuxiliaryFunction, RateCertificate, build_certificate,
                       build_psi, c0_constant, cbar0_constant, lambda_rate,
                       phi_p, psi1, psi1_psi2_ratio, psi2, sandwich_constants,
                       verify_lyapunov_inequality, wp_bound)
from .coupling import (CouplingEnsemble, CouplingPath, SimConfig,
                       expected_psi_decay, simulate_ensemble, simulate_marginal,
                       simulate_pair, step_reflection, step_synchronous)
from .transport import (EmpiricalMeasure, TransportPlan, brute_force_ot_oracle,
                        tv_upper_from_coupling, wasserstein_exact_1d,
                        wasserstein_exact_assignment, wasserstein_gauge)
from .harness import (ExperimentSpec, Report, run_contraction_experiment,
                      run_experiment, run_flat_potential, run_invariant,
                      run_superconvex, run_tv_decay, run_uniform_dissipative)
