"""Multi-trial experiment harness: datasets, trials, gating, summaries.

A trial trains one policy on one seed, builds a model from the extract
split, and measures validation FPR, evaluation FPR, and per-anomaly-kind
TPR plus localization.  A trial is gated when its validation FPR is
exactly zero; summary tables report means over all trials with gated
means in parentheses.
"""

from __future__ import annotations

import json
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .anomaly import detect_batch, false_positive_rate, localization_metrics
from .corpus import (
    AnomalyKind,
    AnomalySpec,
    DatasetSplit,
    InsufficientUniqueSentences,
    SplitSizes,
    generate_key_list,
    generate_simple_json,
    generate_simple_json_stream,
    inject_anomaly,
    key_list_oracle,
    make_splits,
    simple_json_oracle,
)
from .grammar import build_model, filter_by_frequency
from .parse import parse
from .policy import TrainConfig, train
from .simplify import TwoPassConfig, TwoPassResult, simplify_batch, two_pass_pipeline


class NoGatedTrials(ValueError):
    """Aggregation over gated trials requested, but none gated."""


@dataclass(frozen=True)
class FormatSpec:
    name: str
    generate: Callable[[int, int], list[str]]
    oracle: Callable[[str], bool]
    anomaly_kinds: tuple[AnomalyKind, ...]
    train_defaults: TrainConfig


def _stream_oracle(sentence: str) -> bool:
    # Noise bytes are unconstrained, so any sentence embedding at least
    # one bracketed body is plausible; only used for sanity reporting.
    return "{" in sentence and "}" in sentence


FORMATS: dict[str, FormatSpec] = {
    "simple-json": FormatSpec(
        "simple-json",
        generate_simple_json,
        simple_json_oracle,
        (AnomalyKind.DELETE_BRACKET, AnomalyKind.DELETE_LETTER, AnomalyKind.INSERT_LETTER),
        TrainConfig(alpha_anchor=0.4),
    ),
    "key-list": FormatSpec(
        "key-list",
        generate_key_list,
        key_list_oracle,
        (AnomalyKind.DELETE_SEPARATOR,),
        TrainConfig(alpha_anchor=0.8),
    ),
    "simple-json-stream": FormatSpec(
        "simple-json-stream",
        generate_simple_json_stream,
        _stream_oracle,
        (AnomalyKind.DELETE_BRACKET, AnomalyKind.DELETE_LETTER, AnomalyKind.INSERT_LETTER),
        # noise-wrapped sentences run long; the shorter budget keeps
        # two-pass runs affordable and simplification does not need more
        TrainConfig(epochs=40, alpha_anchor=0.4),
    ),
}


def get_format(name: str) -> FormatSpec:
    try:
        return FORMATS[name]
    except KeyError:
        known = ", ".join(sorted(FORMATS))
        raise ValueError(f"unknown format {name!r} (known: {known})") from None


def build_dataset(
    format_name: str, seed: int, sizes: SplitSizes | None = None
) -> DatasetSplit:
    """Generate a pool and split it; the pool grows on uniqueness misses."""
    spec = get_format(format_name)
    sizes = sizes or SplitSizes()
    last_error: InsufficientUniqueSentences | None = None
    for factor in (4, 8, 16, 32, 64):
        pool = spec.generate(seed, sizes.train + factor * max(1, sizes.unique_needed))
        try:
            return make_splits(pool, sizes, rng_seed=seed)
        except InsufficientUniqueSentences as exc:
            last_error = exc
    raise last_error if last_error else InsufficientUniqueSentences("empty sizes")


@dataclass(frozen=True)
class DetectConfig:
    use_constraints: bool = False
    frequency_threshold: int = 0
    descendants: bool = False


@dataclass(frozen=True)
class KindMetrics:
    tpr: float
    localization_rate: float
    localization_ratio: float


@dataclass
class TrialResult:
    seed: int
    validation_fpr: float
    nominal_fpr: float
    per_kind: dict[AnomalyKind, KindMetrics]
    gated: bool

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "validation_fpr": self.validation_fpr,
            "nominal_fpr": self.nominal_fpr,
            "gated": self.gated,
            "kinds": {
                kind.value: {
                    "tpr": m.tpr,
                    "localization_rate": m.localization_rate,
                    "localization_ratio": m.localization_ratio,
                }
                for kind, m in self.per_kind.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrialResult":
        per_kind = {
            AnomalyKind(name): KindMetrics(
                body["tpr"], body["localization_rate"], body["localization_ratio"]
            )
            for name, body in doc["kinds"].items()
        }
        return cls(
            doc["seed"], doc["validation_fpr"], doc["nominal_fpr"], per_kind, doc["gated"]
        )


def corrupt_batch(
    sentences: Sequence[str], kind: AnomalyKind, seed: int
) -> tuple[list[str], list[AnomalySpec]]:
    """Corrupt every sentence with one shared stream of random choices.

    The stream is keyed on (seed, kind) so different kinds applied to
    the same split draw independent edits.
    """
    rng = random.Random(f"{seed}:{kind.value}")
    corrupted, specs = [], []
    for sentence in sentences:
        bad, spec = inject_anomaly(sentence, kind, rng)
        corrupted.append(bad)
        specs.append(spec)
    return corrupted, specs


def run_trial(
    seed: int,
    splits: DatasetSplit,
    train_cfg: TrainConfig,
    detect_cfg: DetectConfig | None = None,
    kinds: Sequence[AnomalyKind] = (),
) -> TrialResult:
    """One seeded train/extract/validate/evaluate pass."""
    detect_cfg = detect_cfg or DetectConfig()
    policy = train(splits.train, replace(train_cfg, rng_seed=seed))
    pair_cache: dict = {}
    model = build_model(parse(s, policy, pair_cache=pair_cache) for s in splits.extract)
    if detect_cfg.frequency_threshold > 0:
        model = filter_by_frequency(model, detect_cfg.frequency_threshold)
    validation_fpr = false_positive_rate(
        detect_batch(splits.validate, policy, model, detect_cfg.use_constraints)
    )
    nominal_fpr = false_positive_rate(
        detect_batch(splits.evaluate_nominal, policy, model, detect_cfg.use_constraints)
    )
    per_kind: dict[AnomalyKind, KindMetrics] = {}
    for kind in kinds:
        corrupted, specs = corrupt_batch(splits.evaluate_anomalous, kind, seed)
        verdicts = detect_batch(
            corrupted, policy, model, detect_cfg.use_constraints, detect_cfg.descendants
        )
        rate, ratio = localization_metrics(verdicts, specs)
        per_kind[kind] = KindMetrics(false_positive_rate(verdicts), rate, ratio)
    return TrialResult(seed, validation_fpr, nominal_fpr, per_kind, validation_fpr == 0.0)


def run_two_pass_trial(
    seed: int,
    splits: DatasetSplit,
    cfg: TwoPassConfig,
    kinds: Sequence[AnomalyKind],
) -> tuple[TrialResult, TwoPassResult]:
    """Two-pass variant for high-entropy formats.

    Corruption happens before simplification, so the pipeline sees each
    anomaly exactly as raw input.  The pipeline (both trainings and both
    models) runs once, on the first kind's corrupted split; further
    kinds reuse its policies and models.  Localization metrics are
    reported as zero: flags live in simplified coordinates and are not
    mapped back to raw positions.
    """
    kinds = tuple(kinds)
    if not kinds:
        raise ValueError("at least one anomaly kind required")
    first_corrupted, _ = corrupt_batch(splits.evaluate_anomalous, kinds[0], seed)
    work = DatasetSplit(
        splits.train,
        splits.extract,
        splits.validate,
        splits.evaluate_nominal,
        first_corrupted,
    )
    seeded = replace(cfg, train_cfg=replace(cfg.train_cfg, rng_seed=seed))
    result = two_pass_pipeline(work, seeded)
    per_kind = {
        kinds[0]: KindMetrics(false_positive_rate(result.anomalous_verdicts), 0.0, 0.0)
    }
    for kind in kinds[1:]:
        corrupted, _ = corrupt_batch(splits.evaluate_anomalous, kind, seed)
        records = simplify_batch(
            corrupted, result.first_policy, result.filtered_model, cfg.coverage
        )
        verdicts = detect_batch(
            [rec.text for rec in records],
            result.second_policy,
            result.second_model,
            cfg.use_constraints,
        )
        per_kind[kind] = KindMetrics(false_positive_rate(verdicts), 0.0, 0.0)
    validation_fpr = false_positive_rate(result.validate_verdicts)
    trial = TrialResult(
        seed,
        validation_fpr,
        false_positive_rate(result.nominal_verdicts),
        per_kind,
        validation_fpr == 0.0,
    )
    return trial, result


def _trial_task(args: tuple) -> TrialResult:
    seed, splits, train_cfg, detect_cfg, kinds = args
    return run_trial(seed, splits, train_cfg, detect_cfg, kinds)


def run_trials(
    seeds: Sequence[int],
    splits: DatasetSplit,
    train_cfg: TrainConfig,
    detect_cfg: DetectConfig | None = None,
    kinds: Sequence[AnomalyKind] = (),
    jobs: int = 1,
) -> list[TrialResult]:
    """Independent trials over many seeds, optionally across processes."""
    tasks = [(seed, splits, train_cfg, detect_cfg, tuple(kinds)) for seed in seeds]
    if jobs <= 1 or len(tasks) <= 1:
        return [_trial_task(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_trial_task, tasks))


@dataclass
class Aggregate:
    n_trials: int
    n_gated: int
    nominal_fpr: float
    validation_fpr: float
    per_kind: dict[AnomalyKind, KindMetrics]


def aggregate(trials: Sequence[TrialResult], gated_only: bool = False) -> Aggregate:
    """Plain means over trials (or over gated trials only)."""
    if not trials:
        raise ValueError("no trials to aggregate")
    n_gated = sum(t.gated for t in trials)
    chosen = [t for t in trials if t.gated] if gated_only else list(trials)
    if not chosen:
        raise NoGatedTrials(f"none of the {len(trials)} trials reached validation FPR 0")

    def mean(values: Iterable[float]) -> float:
        values = list(values)
        return sum(values) / len(values)

    kinds: list[AnomalyKind] = []
    for trial in chosen:
        for kind in trial.per_kind:
            if kind not in kinds:
                kinds.append(kind)
    per_kind = {
        kind: KindMetrics(
            mean(t.per_kind[kind].tpr for t in chosen if kind in t.per_kind),
            mean(t.per_kind[kind].localization_rate for t in chosen if kind in t.per_kind),
            mean(t.per_kind[kind].localization_ratio for t in chosen if kind in t.per_kind),
        )
        for kind in kinds
    }
    return Aggregate(
        len(trials),
        n_gated,
        mean(t.nominal_fpr for t in chosen),
        mean(t.validation_fpr for t in chosen),
        per_kind,
    )


KIND_LABELS = {
    AnomalyKind.DELETE_BRACKET: "Deleted Bracket",
    AnomalyKind.DELETE_LETTER: "Deleted Letter",
    AnomalyKind.INSERT_LETTER: "Inserted Letter",
    AnomalyKind.DELETE_SEPARATOR: "Deleted Separator",
}


def _pct(value: float) -> str:
    return f"{100.0 * value:.1f}%"


def render_table(trials: Sequence[TrialResult]) -> str:
    """Plain-text summary: ungated means with gated means in parens."""
    overall = aggregate(trials)
    try:
        gated: Aggregate | None = aggregate(trials, gated_only=True)
    except NoGatedTrials:
        gated = None

    def cell(ungated_value: float, gated_value: float | None) -> str:
        shown = _pct(gated_value) if gated_value is not None else "n/a"
        return f"{_pct(ungated_value)} ({shown})"

    headers = ["Anomaly", "True Positive Rate", "Localization Rate", "Localization Ratio"]
    rows = [headers]
    for kind, metrics in overall.per_kind.items():
        gated_metrics = gated.per_kind.get(kind) if gated else None
        rows.append(
            [
                KIND_LABELS[kind],
                cell(metrics.tpr, gated_metrics.tpr if gated_metrics else None),
                cell(
                    metrics.localization_rate,
                    gated_metrics.localization_rate if gated_metrics else None,
                ),
                cell(
                    metrics.localization_ratio,
                    gated_metrics.localization_ratio if gated_metrics else None,
                ),
            ]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
    lines = [
        "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
        for row in rows
    ]
    lines.append("")
    lines.append(
        f"Nominal FPR: {cell(overall.nominal_fpr, gated.nominal_fpr if gated else None)}"
    )
    lines.append(
        f"Trials: {overall.n_trials} total, {overall.n_gated} gated "
        "(validation FPR = 0)"
    )
    return "\n".join(lines) + "\n"


def write_trials(path: str | Path, trials: Iterable[TrialResult]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for trial in trials:
            handle.write(json.dumps(trial.to_dict()) + "\n")


def read_trials(path: str | Path) -> list[TrialResult]:
    out = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                out.append(TrialResult.from_dict(json.loads(line)))
    return out
