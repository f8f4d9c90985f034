"""Bottom-up merge parser: atoms, merge actions, parse trees, policies.

A sentence starts out as a sequence of single-character atoms.  Each step
merges two adjacent atoms into one, so an N-token sentence always reduces
to a single root after exactly N-1 merges.  A policy scores every
candidate (position, merge kind) pair; the greedy parser applies the best
scoring merge at each step, and the sampled parser draws merges from a
softmax over candidate scores.  Policies are total, so every sentence
parses, whatever its format.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator, Protocol, Union

# Reserved symbols: never produced by any sentence generator.
SUBGRAMMAR_TOKEN = "G"
HIGH_ENTROPY_TOKEN = "&"


class MergeKind(IntEnum):
    """The five merge actions.  Enum order doubles as the tie-break order."""

    REGULAR = 0
    ANCHOR_LEFT = 1
    ANCHOR_RIGHT = 2
    SUBGRAMMAR_LEFT = 3
    SUBGRAMMAR_RIGHT = 4


ANCHORED_KINDS = (MergeKind.ANCHOR_LEFT, MergeKind.ANCHOR_RIGHT)

_KIND_TAGS = {
    MergeKind.REGULAR: "REG",
    MergeKind.ANCHOR_LEFT: "AL",
    MergeKind.ANCHOR_RIGHT: "AR",
    MergeKind.SUBGRAMMAR_LEFT: "SL",
    MergeKind.SUBGRAMMAR_RIGHT: "SR",
}
_TAG_KINDS = {tag: kind for kind, tag in _KIND_TAGS.items()}


def kind_tag(kind: MergeKind) -> str:
    return _KIND_TAGS[kind]


def kind_from_tag(tag: str) -> MergeKind:
    try:
        return _TAG_KINDS[tag]
    except KeyError:
        raise ValueError(f"unknown merge kind tag {tag!r}") from None


def merge_label(kind: MergeKind, left: str, right: str) -> str:
    """Label of the atom produced by merging two adjacent atoms."""
    if kind is MergeKind.REGULAR:
        return left + right
    if kind is MergeKind.ANCHOR_LEFT:
        return left
    if kind is MergeKind.ANCHOR_RIGHT:
        return right
    if kind is MergeKind.SUBGRAMMAR_LEFT:
        return left + SUBGRAMMAR_TOKEN
    return SUBGRAMMAR_TOKEN + right


@dataclass
class Leaf:
    """A single input token at its original sentence position."""

    token: str
    index: int

    @property
    def label(self) -> str:
        return self.token


@dataclass
class Internal:
    """An atom produced by merging the two child atoms."""

    label: str
    kind: MergeKind
    left: "Node"
    right: "Node"


Node = Union[Leaf, Internal]


@dataclass
class ParseTree:
    """Binary tree of N-1 merges over an N-token sentence."""

    sentence: str
    root: Node

    @property
    def n_internal(self) -> int:
        return len(self.sentence) - 1

    def internal_nodes(self) -> Iterator[Internal]:
        """Postorder iteration over internal nodes (children first)."""
        stack: list[tuple[Node, bool]] = [(self.root, False)]
        while stack:
            node, expanded = stack.pop()
            if isinstance(node, Leaf):
                continue
            if expanded:
                yield node
            else:
                stack.append((node, True))
                stack.append((node.right, False))
                stack.append((node.left, False))

    def leaves(self) -> Iterator[Leaf]:
        stack: list[Node] = [self.root]
        out: list[Leaf] = []
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                out.append(node)
            else:
                stack.append(node.left)
                stack.append(node.right)
        return iter(sorted(out, key=lambda leaf: leaf.index))


class Policy(Protocol):
    """Scoring interface consumed by the parser.

    Implementations must return a finite score for every candidate, so
    that parsing never abstains.
    """

    def score(self, left: str, right: str, kind: MergeKind) -> float:
        ...


class TablePolicy:
    """Fixed score table over (left label, right label, kind); 0 elsewhere.

    Used for hand-scripted reference policies in tests and goldens.
    """

    def __init__(self, table: dict[tuple[str, str, MergeKind], float]):
        self._table = dict(table)

    def score(self, left: str, right: str, kind: MergeKind) -> float:
        return self._table.get((left, right, kind), 0.0)


def simple_json_reference_policy() -> TablePolicy:
    """Hand-scripted policy for the nested-bracket letter format.

    Score order encodes the intended structure: close letter bodies
    first, then close finished objects, then absorb sibling objects via
    anchored merges.  The low-priority '{'+'{' wildcard merge only fires
    on malformed input, where no better action exists.
    """
    k = MergeKind
    table: dict[tuple[str, str, MergeKind], float] = {
        ("{", "a", k.SUBGRAMMAR_LEFT): 100.0,
        ("{", "b", k.SUBGRAMMAR_LEFT): 100.0,
        ("{", "c", k.SUBGRAMMAR_LEFT): 100.0,
        ("{G", "}", k.REGULAR): 90.0,
        ("{", "{G}", k.SUBGRAMMAR_LEFT): 85.0,
        ("{G", "{G}", k.ANCHOR_LEFT): 80.0,
        ("{", "{", k.SUBGRAMMAR_LEFT): 75.0,
    }
    return TablePolicy(table)


@dataclass
class TraceStep:
    """One sampled decision: candidate pairs, softmax probs, chosen index.

    Candidates are indexed flat as position * len(MergeKind) + kind.
    """

    pairs: list[tuple[str, str]]
    probs: list[float]
    chosen: int


_N_KINDS = len(MergeKind)


_KINDS = tuple(MergeKind)

# Cache entry per (left, right) label pair: the five kind scores, the
# lowest-index argmax kind, and its score.
_CacheEntry = tuple[tuple[float, ...], int, float]


def _pair_entry(
    pair_cache: dict[tuple[str, str], _CacheEntry],
    pair: tuple[str, str],
    policy: Policy,
) -> _CacheEntry:
    entry = pair_cache.get(pair)
    if entry is None:
        left, right = pair
        scores = tuple(policy.score(left, right, kind) for kind in _KINDS)
        best_kind = 0
        best = scores[0]
        for k in range(1, _N_KINDS):
            if scores[k] > best:
                best_kind, best = k, scores[k]
        entry = (scores, best_kind, best)
        pair_cache[pair] = entry
    return entry


def parse(
    sentence: str,
    policy: Policy,
    rng: random.Random | None = None,
    temperature: float = 1.0,
    trace: list[TraceStep] | None = None,
    pair_cache: dict[tuple[str, str], _CacheEntry] | None = None,
) -> ParseTree:
    """Parse a sentence into a complete binary merge tree.

    Greedy mode (rng is None) picks the argmax-scoring action with
    deterministic tie-breaking: lowest position first, then merge kind in
    enum order.  Sampled mode draws actions softmax-proportionally at the
    given temperature and can record a per-step trace for training.

    pair_cache memoizes per-pair scores.  Callers that parse batches
    against one fixed policy share it across calls; it must be dropped
    whenever the policy's weights change.
    """
    if not sentence:
        raise ValueError("cannot parse an empty sentence")
    if pair_cache is None:
        pair_cache = {}
    nodes: list[Node] = [Leaf(tok, i) for i, tok in enumerate(sentence)]
    while len(nodes) > 1:
        if rng is None:
            pos = 0
            kind_index = 0
            best = None
            for i in range(len(nodes) - 1):
                entry = _pair_entry(pair_cache, (nodes[i].label, nodes[i + 1].label), policy)
                if best is None or entry[2] > best:
                    pos, kind_index, best = i, entry[1], entry[2]
        else:
            pairs = []
            scores: list[float] = []
            for i in range(len(nodes) - 1):
                pair = (nodes[i].label, nodes[i + 1].label)
                pairs.append(pair)
                scores.extend(_pair_entry(pair_cache, pair, policy)[0])
            peak = max(scores)
            # Candidates 40 temperature units below the peak carry ~e-18
            # probability; treating them as 0 skips most exp calls once
            # the policy sharpens.
            floor = peak - 40.0 * temperature
            weights = [
                math.exp((s - peak) / temperature) if s > floor else 0.0
                for s in scores
            ]
            total = sum(weights)
            probs = [w / total for w in weights]
            draw = rng.random()
            cum = 0.0
            flat = len(probs) - 1
            for i, p in enumerate(probs):
                cum += p
                if draw < cum:
                    flat = i
                    break
            if trace is not None:
                trace.append(TraceStep(pairs, probs, flat))
            pos, kind_index = divmod(flat, _N_KINDS)
        kind = _KINDS[kind_index]
        left, right = nodes[pos], nodes[pos + 1]
        merged = Internal(merge_label(kind, left.label, right.label), kind, left, right)
        nodes[pos : pos + 2] = [merged]
    return ParseTree(sentence, nodes[0])


def check_tree(tree: ParseTree) -> None:
    """Raise AssertionError unless the tree satisfies its invariants.

    Checks: N-1 internal nodes, leaf indices 0..N-1 left to right, and
    every internal label consistent with its merge kind and children.
    """
    internals = list(tree.internal_nodes())
    assert len(internals) == len(tree.sentence) - 1, "wrong internal node count"
    leaves = list(tree.leaves())
    assert [leaf.index for leaf in leaves] == list(range(len(tree.sentence)))
    assert [leaf.token for leaf in leaves] == list(tree.sentence)
    for node in internals:
        expect = merge_label(node.kind, node.left.label, node.right.label)
        assert node.label == expect, f"{node.label!r} != {expect!r}"


def tree_to_text(tree: ParseTree) -> str:
    """Single-line text form: internal nodes ('<atom>' KIND left right),
    leaves ['<token>'@index].  Labels are quoted since they may contain
    spaces; no format alphabet contains a quote character."""
    out: list[str] = []

    def emit(node: Node) -> None:
        if isinstance(node, Leaf):
            out.append(f"['{node.token}'@{node.index}]")
        else:
            out.append(f"('{node.label}' {kind_tag(node.kind)} ")
            emit(node.left)
            out.append(" ")
            emit(node.right)
            out.append(")")

    emit(tree.root)
    return "".join(out)


_TREE_TOKEN_RE = re.compile(
    r"""\('(?P<label>[^']*)'\ (?P<tag>REG|AL|AR|SL|SR)
      | \['(?P<token>[^'])'@(?P<index>\d+)\]
      | (?P<close>\))""",
    re.VERBOSE,
)


def tree_from_text(text: str) -> ParseTree:
    """Inverse of tree_to_text."""
    stack: list[list] = [[]]
    pending: list[tuple[str, MergeKind]] = []
    pos = 0
    while pos < len(text):
        if text[pos] == " ":
            pos += 1
            continue
        m = _TREE_TOKEN_RE.match(text, pos)
        if not m:
            raise ValueError(f"malformed tree text at offset {pos}: {text[pos:pos+20]!r}")
        pos = m.end()
        if m.group("close"):
            if not pending:
                raise ValueError("unbalanced tree text")
            children = stack.pop()
            label, kind = pending.pop()
            if len(children) != 2:
                raise ValueError("internal node must have exactly two children")
            node = Internal(label, kind, children[0], children[1])
            if node.label != merge_label(kind, children[0].label, children[1].label):
                raise ValueError(f"inconsistent internal label {label!r}")
            stack[-1].append(node)
        elif m.group("token") is not None:
            stack[-1].append(Leaf(m.group("token"), int(m.group("index"))))
        else:
            pending.append((m.group("label"), kind_from_tag(m.group("tag"))))
            stack.append([])
    if len(stack) != 1 or len(stack[0]) != 1 or pending:
        raise ValueError("unbalanced tree text")
    root = stack[0][0]
    leaves = []
    walk: list[Node] = [root]
    while walk:
        node = walk.pop()
        if isinstance(node, Leaf):
            leaves.append(node)
        else:
            walk.append(node.left)
            walk.append(node.right)
    leaves.sort(key=lambda leaf: leaf.index)
    sentence = "".join(leaf.token for leaf in leaves)
    tree = ParseTree(sentence, root)
    check_tree(tree)
    return tree
