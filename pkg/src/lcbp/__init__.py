"""Loop-corrected belief propagation on discrete factor graphs."""

from .bench import BenchmarkRecord, SuiteConfig, max_linf_error, run_method, run_suite, summarize
from .bp import ConvergenceReport, bethe_free_energy, bp_beliefs, run_bp, run_mean_field
from .cavity import CavitySet, cavity_network, init_cavities, init_clamped, init_uniform
from .core import (CapacityError, DegenerateError, DomainError, FactorGraph, FactorTable, LCBPError,
                   Variable, clamp, load_factor_graph, parse_factor_graph, save_factor_graph)
from .cumulant import (CumulantState, PairwiseBinaryModel, run_lcbp_cum, run_lcbp_cum_lin,
                       spin_to_factor_graph)
from .exact import brute_force, exact_marginals, log_partition, variable_elimination
from .kernels import backend_name, set_backend
from .loopcorrect import LoopCorrectedResult, lc_beliefs, run_lc

__version__ = "0.1.0"
