"""Adaptive composition of third-party ML services.

Assess each member's contribution, shortlist compatible replacements, and
pick replacements with a contextual bandit over rule-based confidence.
"""

from .assessment import (
    ContributionReport,
    loo_contribution,
    ncs_contribution,
    qos_score,
    service_contribution_scores,
    shapley_contribution,
)
from .bandit import brute_force_best, epsilon_greedy, genetic_search, run_cmab
from .catalog import (
    CatalogConfig,
    Composition,
    DriftSpec,
    MLaaSService,
    apply_drift,
    composition_qos,
    generate_catalog,
    load_catalog,
    make_composition,
    save_catalog,
)
from .errors import AmbiguityError, ConfigError, DegenerateInputError, MembershipError, SizeLimitError
from .harness import ScenarioConfig, export_metrics, run_scenario
from .rules import RuleThresholds, confidence_score
from .selection import CandidateSet, select_candidates

__version__ = "0.1.0"

__all__ = [
    "AmbiguityError",
    "CandidateSet",
    "CatalogConfig",
    "Composition",
    "ConfigError",
    "ContributionReport",
    "DegenerateInputError",
    "DriftSpec",
    "MLaaSService",
    "MembershipError",
    "RuleThresholds",
    "ScenarioConfig",
    "SizeLimitError",
    "apply_drift",
    "brute_force_best",
    "composition_qos",
    "confidence_score",
    "epsilon_greedy",
    "export_metrics",
    "generate_catalog",
    "genetic_search",
    "load_catalog",
    "loo_contribution",
    "make_composition",
    "ncs_contribution",
    "qos_score",
    "run_cmab",
    "run_scenario",
    "save_catalog",
    "select_candidates",
    "service_contribution_scores",
    "shapley_contribution",
]
