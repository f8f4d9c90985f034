"""Grammar extraction and anomaly detection for unknown text formats.

The pipeline: train a bottom-up merge policy on nominal sentences,
extract production rules and precedence constraints from its parse
trees, then classify new sentences by whether their rules stay inside
that model.  High-entropy formats get a second pass after collapsing
uncovered regions to '&'.
"""

from .anomaly import Verdict, detect, localization_metrics, localize
from .corpus import AnomalyKind, AnomalySpec, DatasetSplit, SplitSizes, inject_anomaly
from .evalkit import build_dataset, get_format, run_trial, run_two_pass_trial
from .grammar import GrammarModel, PrecedenceConstraint, Rule, build_model, extract_from_tree
from .parse import MergeKind, ParseTree, parse, simple_json_reference_policy
from .policy import TabularPolicy, TrainConfig, train
from .simplify import CoverageMode, TwoPassConfig, simplify_sentence, two_pass_pipeline

__version__ = "0.1.0"

__all__ = [
    "AnomalyKind",
    "AnomalySpec",
    "CoverageMode",
    "DatasetSplit",
    "GrammarModel",
    "MergeKind",
    "ParseTree",
    "PrecedenceConstraint",
    "Rule",
    "SplitSizes",
    "TabularPolicy",
    "TrainConfig",
    "TwoPassConfig",
    "Verdict",
    "build_dataset",
    "build_model",
    "detect",
    "extract_from_tree",
    "get_format",
    "inject_anomaly",
    "localization_metrics",
    "localize",
    "parse",
    "run_trial",
    "run_two_pass_trial",
    "simple_json_reference_policy",
    "simplify_sentence",
    "train",
    "two_pass_pipeline",
]
