"""multihom: cell-problem solvers for multiscale periodic homogenization and a
verification lab for the convergence facts behind them."""

from .cell_solver import (CellSolution, IntegrandSlice, SolverOptions, cell_energy,
                          cell_energy_gradient, solve_cell, solve_cell_batch)
from .eps import (CounterexampleReport, DomainSpec, EpsSolution, GammaReport,
                  ScaleFamily, assemble_eps_energy, counterexample_run,
                  gamma_convergence_run, homogenized_reference, solve_eps,
                  solve_eps_batch)
from .grid import (Field, GradField, PeriodicGrid, adjoint_gradient, cell_average,
                   discrete_gradient, kahan_sum, project_mean_zero)
from .hom import (CorrectorStack, HomTable, JointResult, TableBoxError, ZGrid,
                  hom_iterate, hom_joint, hom_query, hom_step, load_table,
                  save_table)
from .integrand import (AuditReport, BorelDiagonal, Composite, GrowthBounds,
                        Integrand, NonAdmissibleError, PowerIso, QuadAniso,
                        SamplingSpec, Simple, build_composite, check_convexity,
                        check_growth, check_lipschitz, integrand_from_json,
                        integrand_to_json)
from .measures import (EmpiricalMeasure, TrajectorySampler, center_of_mass,
                       empirical_young, indicator_weak_limit_check,
                       riemann_lebesgue_check)

__version__ = "0.1.0"
