"""Anomaly detection and localization against a grammar model.

A sentence is nominal iff every rule extracted from its parse tree (and,
optionally, every precedence constraint) already occurs in the model.
Localization flags the leaf children of nodes carrying unexpected rules
or violated constraints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import AnomalyKind, AnomalySpec
from .grammar import (
    GrammarModel,
    PrecedenceConstraint,
    Rule,
    extract_from_tree,
    rule_notation,
)
from .parse import Leaf, ParseTree, Policy, parse


class LengthMismatch(ValueError):
    """Verdict and anomaly-spec lists differ in length."""


@dataclass
class Verdict:
    sentence: str
    anomalous: bool
    unexpected_rules: list[Rule] = field(default_factory=list)
    violated_constraints: list[PrecedenceConstraint] = field(default_factory=list)
    flagged: set[int] = field(default_factory=set)

    @property
    def label(self) -> str:
        return "anomalous" if self.anomalous else "nominal"

    def to_dict(self, verbose: bool = False) -> dict:
        doc = {
            "sentence": self.sentence,
            "label": self.label,
            "unexpected_rule_count": len(self.unexpected_rules),
            "violated_constraint_count": len(self.violated_constraints),
            "flagged_indices": sorted(self.flagged),
        }
        if verbose:
            doc["unexpected_rules"] = [rule_notation(r) for r in self.unexpected_rules]
            doc["violated_constraints"] = [str(c) for c in self.violated_constraints]
        return doc

    def to_json(self, verbose: bool = False) -> str:
        return json.dumps(self.to_dict(verbose))


def localize(
    tree: ParseTree,
    unexpected_rules: Iterable[Rule],
    violated_constraints: Iterable[PrecedenceConstraint] = (),
    descendants: bool = False,
) -> set[int]:
    """Token indices covered by the offending nodes.

    A node offends when its rule is unexpected or its own constraint is
    violated.  By default only the node's direct leaf children are
    flagged; descendants=True flags every leaf under it instead (kept
    for comparison, known to localize worse).
    """
    unexpected = set(unexpected_rules)
    violated = set(violated_constraints)
    if not unexpected and not violated:
        return set()
    rules, constraints = extract_from_tree(tree)
    flagged: set[int] = set()
    for node, rule, constraint in zip(tree.internal_nodes(), rules, constraints):
        if rule not in unexpected and constraint not in violated:
            continue
        if descendants:
            stack = [node.left, node.right]
            while stack:
                child = stack.pop()
                if isinstance(child, Leaf):
                    flagged.add(child.index)
                else:
                    stack.append(child.left)
                    stack.append(child.right)
        else:
            for child in (node.left, node.right):
                if isinstance(child, Leaf):
                    flagged.add(child.index)
    return flagged


def detect(
    sentence: str,
    policy: Policy,
    model: GrammarModel,
    use_constraints: bool = False,
    descendants: bool = False,
    pair_cache: dict | None = None,
) -> Verdict:
    """Greedy-parse a sentence and compare its rules against the model."""
    tree = parse(sentence, policy, pair_cache=pair_cache)
    rules, constraints = extract_from_tree(tree)
    unexpected = list(dict.fromkeys(r for r in rules if not model.has_rule(r)))
    violated: list[PrecedenceConstraint] = []
    if use_constraints:
        violated = list(
            dict.fromkeys(c for c in constraints if not model.has_constraint(c))
        )
    anomalous = bool(unexpected or violated)
    flagged = localize(tree, unexpected, violated, descendants) if anomalous else set()
    return Verdict(sentence, anomalous, unexpected, violated, flagged)


def _target_indices(spec: AnomalySpec, corrupted_length: int) -> set[int]:
    # Insertions must hit the inserted token itself; deletions may hit
    # either neighbour of the gap, clipped at the sentence edges.
    if spec.kind is AnomalyKind.INSERT_LETTER:
        return {spec.position}
    targets = {spec.position - 1, spec.position}
    return {i for i in targets if 0 <= i < corrupted_length}


def localization_metrics(
    verdicts: Sequence[Verdict], specs: Sequence[AnomalySpec]
) -> tuple[float, float]:
    """(localization rate, localization ratio) over corrupted sentences.

    Rate counts sentences whose flags intersect the true anomaly
    position; ratio averages |flags| / N over those sentences only.
    """
    if len(verdicts) != len(specs):
        raise LengthMismatch(f"{len(verdicts)} verdicts vs {len(specs)} specs")
    if not verdicts:
        return 0.0, 0.0
    hits = 0
    ratio_sum = 0.0
    for verdict, spec in zip(verdicts, specs):
        targets = _target_indices(spec, len(verdict.sentence))
        if verdict.flagged & targets:
            hits += 1
            ratio_sum += len(verdict.flagged) / len(verdict.sentence)
    rate = hits / len(verdicts)
    ratio = ratio_sum / hits if hits else 0.0
    return rate, ratio


def detect_batch(
    sentences: Iterable[str],
    policy: Policy,
    model: GrammarModel,
    use_constraints: bool = False,
    descendants: bool = False,
) -> list[Verdict]:
    pair_cache: dict = {}
    return [
        detect(sentence, policy, model, use_constraints, descendants, pair_cache)
        for sentence in sentences
    ]


def false_positive_rate(verdicts: Sequence[Verdict]) -> float:
    """Fraction of verdicts labeled anomalous; FPR when all inputs are
    nominal, TPR when all are corrupted."""
    if not verdicts:
        return 0.0
    return sum(v.anomalous for v in verdicts) / len(verdicts)
