"""Multi-fidelity hyperparameter optimization engine.

Combines three mechanisms on top of successive-halving schedules: surrogate
ensembles over fine-grained fidelity levels, elimination with a global
archive that can revive previously stopped configurations, and adaptive
substitution of exploiting brackets when adjacent fidelity levels rank
configurations consistently.
"""

from .bench import (TabularBenchmark, ToyBenchmark, ToySpec, build_benchmark,
                    generate_tabular, load_tabular, tabular_eval, toy_bias, toy_eval)
from .engine import Engine, EngineOptions, seed_streams
from .ensemble import (MultiFidelityEnsemble, combined_predict, compute_weights,
                       consistency, cv_ranking_loss, expected_improvement,
                       ranking_loss, simulated_top_consistency, weight_vector)
from .executor import (EvaluationOutcome, EvaluationRequest, InprocEvaluator,
                       SubprocessEvaluator, VirtualClock)
from .harness import (ExperimentConfig, RunResult, compare, export_trajectory,
                      load_run_dir, report_weights, run, time_to_target,
                      write_run_dir)
from .records import EliminationArchive, FidelityView, Measurement, RunStore
from .sched import (BracketPlan, BracketSpec, LambdaSchedule, fgf_schedule,
                    flexband_adjust, glosh_select, hb_brackets, kendall_tau,
                    sh_rounds, uniform_plan)
from .space import ConfigSpace, Configuration, ParamSpec
from .surrogate import ForestModel, loo_matrix, loo_means

__version__ = "0.1.0"
