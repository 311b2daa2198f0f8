"""dncalc: sampled certification and contour calculus for mixed-order
pseudodifferential systems on periodic desk-scale grids.

Public surface: symbol containers and built-in families, sector
ellipticity checkers and the shift search, parametrix terms and decay
probes, order reduction and diagonalization, torus quantization with
resolvent sweeps, Dunford/H-infinity functional calculus, and the
generalized thermoelastic plate system.
"""

from .errors import (CapabilityError, ContourError, DNCalcError,
                     EvaluationError, FitError, InputError, NumericalError,
                     QuadratureError, ResourceError, ShiftNotFoundError,
                     SingularityError)
from .symbols import (DNSystem, SampleGrid, ScalarSymbol, SeminormEstimate,
                      bracket, bracket_power_symbol, constant_symbol,
                      diagonal_system, estimate_seminorm, eval_matrix,
                      leibniz_compose_truncated, matrix_system,
                      radial_power_symbol, random_constant_system,
                      shift_system, smoothstep_excision, symbol_from_descriptor,
                      symbol_product, symbol_shift, trig_bracket_symbol,
                      zero_symbol)
from .ellipticity import (EllipticityReport, EllipticityWitness, Sector,
                          ShiftResult, char_poly, check_det_ellipticity,
                          check_minor_ellipticity, equivalence_disagreement,
                          find_shift, minor_pencil_value)
from .parametrix import (DecayProbe, ExcisionConfig, ParametrixTerm,
                         TruncatedParametrix, build_truncated_parametrix,
                         decay_probe, g0_eval, gnu_eval, gnu_term,
                         remainder_sum_eval)
from .diagonalize import (Conjugator, DiagonalPart, LeadingColumn,
                          ReducedSystem, back_conjugation, build_conjugator,
                          diag_lambda_ellipticity_check, leading_diagonalization,
                          offdiag_decay_probe, reduce_orders)
from .discretize import (DiscreteOperator, MultiplierOperator, Perturbation,
                         SweepResult, TorusGrid, apply_pdo, assemble_dense,
                         make_smoothing_perturbation, multiplier_operator,
                         parametrix_vs_resolvent, ray_slope, resolvent_sweep)
from .funcalc import (CalculusResult, HFunction, PacmanContour, SectorContour,
                      dunford_eval, dunford_eval_family, dunford_on_contour,
                      estimate_sup_norm,
                      hfun_product, hinfty_bound_probe, make_pacman_contour,
                      make_sector_contour, matrix_holo_calc,
                      pacman_symbol_calc, random_conjugator,
                      rational_test_family)
from .thermoplate import (PlateParams, PlateSystem, PlateTrajectory,
                          atil_matrix, build_plate_system, evolve_plate,
                          first_order_matrix, max_spectral_angle,
                          plate_minor_dets, plate_orders, suggest_sector_angle,
                          trajectory_energy)
from .descriptors import plate_params_from_descriptor, system_from_descriptor

__version__ = "0.1.0"
