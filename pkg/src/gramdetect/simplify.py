"""High-entropy region collapsing and the two-pass pipeline.

Pass 1 trains a policy on the raw corpus, extracts a model, filters out
infrequent rules, and uses the remainder to decide which tokens are
covered (low-entropy).  Maximal runs of uncovered tokens collapse to a
single '&'.  Pass 2 reruns train/extract/detect on the simplified
sentences, which a compact rule set can describe.

Two notions of coverage exist.  Topological: a token's direct parent
node carries a retained rule.  Symbolic: the token's character occurs
inside the right side of some retained rule, wherever the token sits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .anomaly import Verdict, detect_batch
from .corpus import DatasetSplit
from .grammar import GrammarModel, build_model, extract_from_tree, filter_by_frequency
from .parse import HIGH_ENTROPY_TOKEN, Leaf, ParseTree, Policy, parse
from .policy import TabularPolicy, TrainConfig, train


class CoverageMode(Enum):
    TOPOLOGICAL = "topological"
    SYMBOLIC = "symbolic"


def symbolic_covered_symbols(model: GrammarModel) -> set[str]:
    """Characters appearing inside the rhs labels of retained rules."""
    symbols: set[str] = set()
    for rule in model.rules:
        symbols.update(rule.rhs_left)
        symbols.update(rule.rhs_right)
    return symbols


def covered_tokens(
    tree: ParseTree, model: GrammarModel, mode: CoverageMode
) -> set[int]:
    """Indices of low-entropy tokens under an already-filtered model."""
    if mode is CoverageMode.SYMBOLIC:
        symbols = symbolic_covered_symbols(model)
        return {i for i, tok in enumerate(tree.sentence) if tok in symbols}
    covered: set[int] = set()
    rules, _ = extract_from_tree(tree)
    for node, rule in zip(tree.internal_nodes(), rules):
        if model.has_rule(rule):
            for child in (node.left, node.right):
                if isinstance(child, Leaf):
                    covered.add(child.index)
    return covered


@dataclass(frozen=True)
class AmpSpan:
    """One '&' in the simplified text and the original range it replaced."""

    amp_index: int
    start: int
    end: int


@dataclass
class SimplifiedSentence:
    text: str
    spans: list[AmpSpan]

    def expand_with(self, original: str) -> str:
        """Re-substitute the collapsed ranges; inverse of simplification."""
        out = []
        spans = {span.amp_index: span for span in self.spans}
        for i, tok in enumerate(self.text):
            if i in spans:
                out.append(original[spans[i].start : spans[i].end])
            else:
                out.append(tok)
        return "".join(out)


def simplify_sentence(sentence: str, covered: set[int]) -> SimplifiedSentence:
    """Collapse each maximal uncovered run to one '&' token."""
    out: list[str] = []
    spans: list[AmpSpan] = []
    run_start: int | None = None
    for i, tok in enumerate(sentence):
        if i in covered:
            if run_start is not None:
                spans.append(AmpSpan(len(out), run_start, i))
                out.append(HIGH_ENTROPY_TOKEN)
                run_start = None
            out.append(tok)
        elif run_start is None:
            run_start = i
    if run_start is not None:
        spans.append(AmpSpan(len(out), run_start, len(sentence)))
        out.append(HIGH_ENTROPY_TOKEN)
    return SimplifiedSentence("".join(out), spans)


def simplify_batch(
    sentences: Iterable[str],
    policy: Policy,
    model: GrammarModel,
    mode: CoverageMode,
) -> list[SimplifiedSentence]:
    """Parse each sentence with the pass-1 policy and simplify it."""
    out = []
    pair_cache: dict = {}
    for sentence in sentences:
        tree = parse(sentence, policy, pair_cache=pair_cache)
        out.append(simplify_sentence(sentence, covered_tokens(tree, model, mode)))
    return out


def write_span_map(path: str | Path, per_line: Sequence[Sequence[AmpSpan]]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for line_no, spans in enumerate(per_line):
            for span in spans:
                doc = {
                    "line_no": line_no,
                    "amp_index": span.amp_index,
                    "start": span.start,
                    "end": span.end,
                }
                handle.write(json.dumps(doc) + "\n")


def read_span_map(path: str | Path, n_lines: int) -> list[list[AmpSpan]]:
    per_line: list[list[AmpSpan]] = [[] for _ in range(n_lines)]
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            doc = json.loads(line)
            per_line[doc["line_no"]].append(
                AmpSpan(doc["amp_index"], doc["start"], doc["end"])
            )
    return per_line


@dataclass(frozen=True)
class TwoPassConfig:
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    threshold: int = 100
    coverage: CoverageMode = CoverageMode.SYMBOLIC
    use_constraints: bool = False


@dataclass
class TwoPassResult:
    first_policy: TabularPolicy
    first_model: GrammarModel
    filtered_model: GrammarModel
    simplified: DatasetSplit
    span_maps: dict[str, list[list[AmpSpan]]]
    second_policy: TabularPolicy
    second_model: GrammarModel
    validate_verdicts: list[Verdict]
    nominal_verdicts: list[Verdict]
    anomalous_verdicts: list[Verdict]


def two_pass_pipeline(splits: DatasetSplit, cfg: TwoPassConfig) -> TwoPassResult:
    """Run train/extract/filter/simplify, then train/extract/detect.

    The evaluate_anomalous split must already hold the corrupted
    sentences: corruption happens in raw token space, simplification
    afterwards, exactly as a deployed pipeline would see them.
    """
    first_policy = train(splits.train, cfg.train_cfg)
    cache: dict = {}
    first_model = build_model(parse(s, first_policy, pair_cache=cache) for s in splits.extract)
    filtered = filter_by_frequency(first_model, cfg.threshold)

    simplified_lists: dict[str, list[str]] = {}
    span_maps: dict[str, list[list[AmpSpan]]] = {}
    for name, sentences in splits.named():
        records = simplify_batch(sentences, first_policy, filtered, cfg.coverage)
        simplified_lists[name] = [rec.text for rec in records]
        span_maps[name] = [rec.spans for rec in records]
    simplified = DatasetSplit(**simplified_lists)

    second_policy = train(simplified.train, cfg.train_cfg)
    cache = {}
    second_model = build_model(
        parse(s, second_policy, pair_cache=cache) for s in simplified.extract
    )
    validate_verdicts = detect_batch(
        simplified.validate, second_policy, second_model, cfg.use_constraints
    )
    nominal_verdicts = detect_batch(
        simplified.evaluate_nominal, second_policy, second_model, cfg.use_constraints
    )
    anomalous_verdicts = detect_batch(
        simplified.evaluate_anomalous, second_policy, second_model, cfg.use_constraints
    )
    return TwoPassResult(
        first_policy,
        first_model,
        filtered,
        simplified,
        span_maps,
        second_policy,
        second_model,
        validate_verdicts,
        nominal_verdicts,
        anomalous_verdicts,
    )
