"""Closed-loop recommender simulation: user discovery, blind spots and the
Azuma-Hoeffding discovery bound."""

__version__ = "0.1.0"

from .completion import GroundTruth, PercentileRescaler, build_semisynthetic, percentile_rescale
from .dataset import GroupMapping, RatingDataset, parse_item_groups, parse_ratings, seen_groups
from .factorization import FactorModel, Hyperparams, MatrixFactorization
from .metrics import BoundParams, azuma_bound
from .policies import PolicyConfig
from .simulation import FeedbackModel, SimulationConfig, run_simulation
from .stats import ranking_assumption_test, validate_ranking, welch_t_test
from .synthetic import make_planted_problem

__all__ = [
    "BoundParams", "FactorModel", "FeedbackModel", "GroundTruth", "GroupMapping", "Hyperparams",
    "MatrixFactorization", "PercentileRescaler", "PolicyConfig", "RatingDataset", "SimulationConfig",
    "azuma_bound", "build_semisynthetic", "make_planted_problem", "parse_item_groups", "parse_ratings", "percentile_rescale",
    "ranking_assumption_test", "run_simulation", "seen_groups", "validate_ranking", "welch_t_test",
]
