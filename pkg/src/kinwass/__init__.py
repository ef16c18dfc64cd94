"""Kinetic Wasserstein distances, paired Vlasov-Poisson runs, stability bounds."""

__version__ = "0.1.0"

from .core import (TORUS, WHOLE_SPACE, Coupling, EmpiricalMeasure, FieldGrid,
                   GridDensity, Params, load_measure, periodic_distance,
                   save_measure, validate_coupling, wrap_torus)
from .kinetic import (KineticReport, PairedEnsemble, dp_flow_quantity,
                      kinetic_distance, kinetic_distance_report, qp_of_pairing,
                      solve_dp_implicit)
from .rearrange1d import (MonotoneMap, displacement_interpolant_1d,
                          monotone_rearrangement_1d, wasserstein_atoms_1d,
                          wasserstein_grid_1d)
from .stability import (BoundConstants, BoundTrace, assemble_bound_trace,
                        ckw_formula, cp_const, gronwall_oracle, horizon_compare,
                        kinetic_bound, kinetic_condition, loeper_bound,
                        loeper_condition, phi_p)
from .transport import (CostMatrix, TransportPlan, cost_matrix, solve_exact,
                        solve_sinkhorn, wp_distance)
from .vlasov import SimConfig, SimState, compute_A, init_paired, run_paired, step_leapfrog
