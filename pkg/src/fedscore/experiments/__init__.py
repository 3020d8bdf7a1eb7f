"""Scenario-driven experiments: parsing, execution, result bundles."""

from .scenario import (
    ABLATION_AXES,
    AblationBlock,
    InfluenceBlock,
    ManipulationBlock,
    MisbehaviorBlock,
    REFERENCE_KINDS,
    REFERENCE_ROUNDS,
    SCORER_LABELS,
    Scenario,
    ScenarioError,
    WEIGHT_MODES,
    WeightedBlock,
    parse_scenario,
    parse_scenario_text,
    scenario_with,
)
from .runs import (
    AblationResult,
    ExperimentError,
    FidelityResult,
    InfluenceResult,
    ManipulationResult,
    MisbehaviorResult,
    METRIC_NAMES,
    RepeatContext,
    TRUE_SV_MAX_CLIENTS,
    WeightedResult,
    ablation,
    audited_round_utilities,
    derive_seeds,
    influence_summary,
    manipulation_summary,
    misbehavior,
    rank_fidelity,
    run_repeats,
    weighted_aggregation,
    weights_from_scores,
)
from .bundle import run_scenario, verify_bundle, write_table

__all__ = [
    "ABLATION_AXES",
    "AblationBlock",
    "AblationResult",
    "ExperimentError",
    "FidelityResult",
    "InfluenceBlock",
    "InfluenceResult",
    "METRIC_NAMES",
    "ManipulationBlock",
    "ManipulationResult",
    "MisbehaviorBlock",
    "MisbehaviorResult",
    "REFERENCE_KINDS",
    "REFERENCE_ROUNDS",
    "RepeatContext",
    "SCORER_LABELS",
    "Scenario",
    "ScenarioError",
    "TRUE_SV_MAX_CLIENTS",
    "WEIGHT_MODES",
    "WeightedBlock",
    "WeightedResult",
    "ablation",
    "audited_round_utilities",
    "derive_seeds",
    "influence_summary",
    "manipulation_summary",
    "misbehavior",
    "parse_scenario",
    "parse_scenario_text",
    "rank_fidelity",
    "run_repeats",
    "run_scenario",
    "scenario_with",
    "verify_bundle",
    "weighted_aggregation",
    "weights_from_scores",
    "write_table",
]
