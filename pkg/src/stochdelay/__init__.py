"""Simulation and verification of stochastic delay evolution equations."""

__version__ = "0.1.0"

from .config import ConfigError, HypothesisError, ScenarioConfig, SchemaError, default_config, parse_config  # noqa: E402
from .problem import DelayProblem, LipschitzMap, drift_phi, lipschitz_constant  # noqa: E402
from .semigroups import (  # noqa: E402
    ContractionError, DelaySemigroup, FiniteDimSemigroup, McKendrickSemigroup, TransportSemigroup,
)
from .solver import (  # noqa: E402
    NonContractionError, PicardConfig, SolverError, march_solve, markov_lift_solve, picard_solve, run_ensemble,
)
from .spaces import C0, L1, RN, SpatialGrid, Trajectory, norm_values  # noqa: E402
from .verify import covariance_oracle_check, equivalence_report, lift_agreement  # noqa: E402

__all__ = [
    "C0", "L1", "RN", "ConfigError", "ContractionError", "DelayProblem", "DelaySemigroup", "FiniteDimSemigroup",
    "HypothesisError", "LipschitzMap", "McKendrickSemigroup", "NonContractionError", "PicardConfig",
    "ScenarioConfig", "SchemaError", "SolverError", "SpatialGrid", "Trajectory", "TransportSemigroup",
    "covariance_oracle_check", "default_config", "drift_phi", "equivalence_report", "lift_agreement",
    "lipschitz_constant", "march_solve", "markov_lift_solve", "norm_values", "parse_config", "picard_solve",
    "run_ensemble",
]
