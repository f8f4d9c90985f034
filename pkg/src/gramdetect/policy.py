"""Trainable tabular merge policy and its reward-driven training loop.

The policy is a weight table keyed on (truncated left label, truncated
right label, merge kind) with a finite default for unseen keys, so it is
total over any alphabet.  Training samples parses of the corpus with the
current policy, scores each tree by how much it reuses frequent atoms,
and nudges weights by a softmax policy gradient toward sampled trees
that beat the same sentence's greedy parse.  Everything is driven by one
seeded random.Random, so a training run is reproducible bit for bit.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .parse import (
    ANCHORED_KINDS,
    MergeKind,
    ParseTree,
    TraceStep,
    kind_from_tag,
    kind_tag,
    parse,
)

POLICY_FILE_VERSION = 1

_N_KINDS = len(MergeKind)


class PolicyFileError(ValueError):
    """Malformed or incompatible policy file."""


class TabularPolicy:
    """Weight table over truncated label pairs; 0 for unseen pairs."""

    def __init__(
        self,
        truncation: int = 8,
        temperature: float = 1.0,
        default: float = 0.0,
        weights: dict[tuple[str, str, MergeKind], float] | None = None,
    ):
        if truncation < 1:
            raise ValueError("truncation must be >= 1")
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        self.truncation = truncation
        self.temperature = temperature
        self.default = default
        self.weights: dict[tuple[str, str, MergeKind], float] = dict(weights or {})

    def feature(self, left: str, right: str, kind: MergeKind) -> tuple[str, str, MergeKind]:
        length = self.truncation
        return (left[:length], right[:length], kind)

    def score(self, left: str, right: str, kind: MergeKind) -> float:
        return self.weights.get(self.feature(left, right, kind), self.default)

    def bump(self, feature: tuple[str, str, MergeKind], delta: float) -> None:
        self.weights[feature] = self.weights.get(feature, self.default) + delta


@dataclass(frozen=True)
class TrainConfig:
    # Heavy smoothing keeps early log-count gaps small, so the anchored
    # discount steers kind choice before count mass has accumulated.
    epochs: int = 120
    rng_seed: int = 0
    learning_rate: float = 1.0
    temperature: float = 1.0
    alpha_anchor: float = 0.4
    smoothing: float = 10.0
    truncation: int = 8

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.alpha_anchor <= 0:
            raise ValueError("alpha_anchor must be > 0")
        if self.smoothing <= 0:
            raise ValueError("smoothing must be > 0")


def atom_frequency_table(trees: Iterable[ParseTree]) -> Counter:
    """Counts of every internal-node atom label across the trees."""
    freq: Counter = Counter()
    for tree in trees:
        for node in tree.internal_nodes():
            freq[node.label] += 1
    return freq


def episode_reward(tree: ParseTree, freq: Counter, cfg: TrainConfig) -> float:
    """Sum of log(count + smoothing) per internal node, with anchored
    merges weighted by alpha_anchor."""
    total = 0.0
    for node in tree.internal_nodes():
        weight = cfg.alpha_anchor if node.kind in ANCHORED_KINDS else 1.0
        total += weight * math.log(freq[node.label] + cfg.smoothing)
    return total


_KIND_SEQ = tuple(MergeKind)


def _apply_gradient(
    policy: TabularPolicy,
    trace: Sequence[TraceStep],
    advantage: float,
    learning_rate: float,
) -> None:
    # d log softmax / d w: (1 - p) on the chosen candidate, -p elsewhere.
    # Contributions are summed per feature first because one feature can
    # back several candidates within a step.  This loop dominates
    # training time, hence the inlined truncation and flat indexing.
    scale = advantage * learning_rate
    length = policy.truncation
    grad: dict[tuple[str, str, MergeKind], float] = {}
    grad_get = grad.get
    for step in trace:
        probs = step.probs
        chosen = step.chosen
        base = 0
        for left, right in step.pairs:
            left_cut = left[:length]
            right_cut = right[:length]
            for k in range(_N_KINDS):
                delta = -probs[base + k]
                if base + k == chosen:
                    delta += 1.0
                if delta == 0.0:
                    continue
                key = (left_cut, right_cut, _KIND_SEQ[k])
                grad[key] = grad_get(key, 0.0) + delta
            base += _N_KINDS
    for feature, value in grad.items():
        policy.bump(feature, scale * value)


def train(corpus: Sequence[str], cfg: TrainConfig | None = None) -> TabularPolicy:
    """Train a policy on nominal sentences by sampled self-play.

    Each epoch parses the whole corpus in sampled mode, rebuilds the
    atom frequency table from those parses, and updates weights with a
    self-critical advantage: each sampled parse is scored against a
    greedy parse of the same sentence under the same weights, so only
    sampled deviations that beat the current greedy behavior are
    reinforced.  Per-sentence baselines avoid the high variance of an
    epoch-mean baseline across sentences of very different lengths.
    """
    cfg = cfg or TrainConfig()
    if not corpus:
        raise ValueError("corpus must contain at least one sentence")
    rng = random.Random(cfg.rng_seed)
    policy = TabularPolicy(truncation=cfg.truncation, temperature=cfg.temperature)
    for epoch in range(cfg.epochs):
        # Linear step-size decay: full exploration-driven movement early,
        # near-frozen weights by the last epoch so sampling noise stops
        # perturbing an already-consistent greedy policy.
        step = cfg.learning_rate * (1.0 - epoch / cfg.epochs)
        # Weights are frozen within an epoch, so pair scores can be shared.
        pair_cache: dict[tuple[str, str], tuple[float, ...]] = {}
        trees: list[ParseTree] = []
        traces: list[list[TraceStep]] = []
        for sentence in corpus:
            trace: list[TraceStep] = []
            trees.append(
                parse(
                    sentence,
                    policy,
                    rng=rng,
                    temperature=cfg.temperature,
                    trace=trace,
                    pair_cache=pair_cache,
                )
            )
            traces.append(trace)
        freq = atom_frequency_table(trees)
        # Baselines are all computed before any update so the shared
        # pair cache stays valid for the whole epoch.
        advantages = []
        for sentence, tree in zip(corpus, trees):
            greedy = parse(sentence, policy, pair_cache=pair_cache)
            baseline = episode_reward(greedy, freq, cfg)
            advantages.append(
                (episode_reward(tree, freq, cfg) - baseline) / max(1, tree.n_internal)
            )
        for trace, advantage in zip(traces, advantages):
            if advantage != 0.0:
                _apply_gradient(policy, trace, advantage, step)
    return policy


def save_policy(path, policy: TabularPolicy) -> None:
    """Line-delimited: one header record, then one record per weight."""
    with open(path, "w", encoding="utf-8") as handle:
        header = {
            "version": POLICY_FILE_VERSION,
            "L": policy.truncation,
            "temperature": policy.temperature,
        }
        handle.write(json.dumps(header) + "\n")
        for left, right, kind in sorted(
            policy.weights, key=lambda key: (key[0], key[1], int(key[2]))
        ):
            record = {
                "left": left,
                "right": right,
                "kind": kind_tag(kind),
                "weight": policy.weights[(left, right, kind)],
            }
            handle.write(json.dumps(record) + "\n")


def load_policy(path) -> TabularPolicy:
    with open(path, encoding="utf-8") as handle:
        lines = [line for line in handle if line.strip()]
    if not lines:
        raise PolicyFileError("empty policy file")
    try:
        header = json.loads(lines[0])
        version = header["version"]
        if version != POLICY_FILE_VERSION:
            raise PolicyFileError(f"unsupported policy file version {version!r}")
        policy = TabularPolicy(
            truncation=header["L"], temperature=header["temperature"]
        )
        for line in lines[1:]:
            record = json.loads(line)
            feature = (record["left"], record["right"], kind_from_tag(record["kind"]))
            policy.weights[feature] = float(record["weight"])
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, PolicyFileError):
            raise
        raise PolicyFileError(f"malformed policy file: {exc}") from None
    return policy
