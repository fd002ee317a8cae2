"""Interpretable dynamic treatment regimes as per-stage decision lists.

Q-functions are estimated by kernel ridge regression, and each stage's list
is grown greedily with an exact clause search over one- and two-variable
threshold regions.
"""
from .builder import (ListConfig, QModelSet, build_decision_list, compute_weights, pi_q,
                      tune_zeta_eta)
from .clause_search import (ClauseResult, PrefixTree, WeightPanel, best_clause,
                            brute_force_best_clause, objective_eval)
from .errors import (ClauseSearchError, ConfigError, DatasetError, KrrSolveError, ListDTRError,
                     PositivityError, RegimeFormatError, RegionIndexError, ScenarioError)
from .krr import (KernelParams, KrrModel, KrrSearchConfig, fit_krr, gram_matrix, kernel_eval,
                  loocv_mse, predict, tune_krr)
from .model import (Clause, DecisionList, Region, Regime, TrajectoryDataset, apply_list,
                    deserialize_regime, empirical_rho, region_contains, render_list,
                    serialize_regime)
from .pipeline import FitConfig, RegimeFit, StageFit, fit_regime, fit_stage, pseudo_outcomes
from .sim import ScenarioSpec, ValueReport, generate, monte_carlo_value, run_benchmark

__all__ = [
    "Clause", "ClauseResult", "ClauseSearchError", "ConfigError", "DatasetError", "DecisionList",
    "FitConfig", "KernelParams", "KrrModel", "KrrSearchConfig", "KrrSolveError", "ListConfig",
    "ListDTRError", "PositivityError", "PrefixTree", "QModelSet", "Region", "RegimeFit",
    "RegimeFormatError", "Regime", "RegionIndexError", "ScenarioError", "ScenarioSpec",
    "StageFit", "TrajectoryDataset", "ValueReport", "WeightPanel", "apply_list", "best_clause",
    "brute_force_best_clause", "build_decision_list", "compute_weights", "deserialize_regime",
    "empirical_rho", "fit_krr", "fit_regime", "fit_stage", "generate", "gram_matrix",
    "kernel_eval", "loocv_mse", "monte_carlo_value", "objective_eval", "pi_q", "predict",
    "pseudo_outcomes", "run_benchmark", "serialize_regime", "tune_krr", "render_list",
    "region_contains",
]
__version__ = "0.1.0"
