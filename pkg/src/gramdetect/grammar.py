"""Production rules, precedence constraints, and grammar models.

Every internal node of a parse tree yields one production rule
(lhs -> rhs_left rhs_right, tagged with its merge kind) and one
precedence constraint recording which producers fed the node's children.
A rule observed at the root of a tree is a start rule; start and
non-start variants of the same production are distinct rules.

A GrammarModel is the multiset of rules and constraints over a set of
trees.  Detection uses set membership; counts exist for frequency
filtering.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Union

from .parse import (
    Internal,
    MergeKind,
    ParseTree,
    kind_from_tag,
    kind_tag,
    merge_label,
)


class ParseError(ValueError):
    """Malformed grammar model text."""


@dataclass(frozen=True)
class Rule:
    lhs: str
    rhs_left: str
    rhs_right: str
    kind: MergeKind
    is_start: bool = False

    def __post_init__(self) -> None:
        expect = merge_label(self.kind, self.rhs_left, self.rhs_right)
        if self.lhs != expect:
            raise ValueError(
                f"lhs {self.lhs!r} inconsistent with {self.kind.name} merge of "
                f"{self.rhs_left!r} and {self.rhs_right!r}"
            )

    def __str__(self) -> str:
        return rule_notation(self, with_kind=False)


# A producer is whatever built one side of a rule's rhs: the child
# node's rule, or the bare token at a leaf.
Producer = Union[Rule, str]


def produced_label(producer: Producer) -> str:
    return producer.lhs if isinstance(producer, Rule) else producer


@dataclass(frozen=True)
class PrecedenceConstraint:
    parent: Rule
    left: Producer
    right: Producer

    def __post_init__(self) -> None:
        if produced_label(self.left) != self.parent.rhs_left:
            raise ValueError(
                f"left producer yields {produced_label(self.left)!r}, "
                f"parent consumes {self.parent.rhs_left!r}"
            )
        if produced_label(self.right) != self.parent.rhs_right:
            raise ValueError(
                f"right producer yields {produced_label(self.right)!r}, "
                f"parent consumes {self.parent.rhs_right!r}"
            )

    def __str__(self) -> str:
        return constraint_notation(self, with_kind=False)


def rule_notation(rule: Rule, with_kind: bool = True) -> str:
    """`'lhs' -> 'r1' 'r2'`, hyphens around the lhs of start rules."""
    lhs = f"-'{rule.lhs}'-" if rule.is_start else f"'{rule.lhs}'"
    text = f"{lhs} -> '{rule.rhs_left}' '{rule.rhs_right}'"
    if with_kind:
        text += f" [{kind_tag(rule.kind)}]"
    return text


def producer_notation(producer: Producer, with_kind: bool = True) -> str:
    if isinstance(producer, Rule):
        return rule_notation(producer, with_kind)
    return f"'{producer}'"


def constraint_notation(constraint: PrecedenceConstraint, with_kind: bool = True) -> str:
    return (
        f"( {rule_notation(constraint.parent, with_kind)}"
        f" > {producer_notation(constraint.left, with_kind)}"
        f" ^ {producer_notation(constraint.right, with_kind)} )"
    )


def extract_from_tree(
    tree: ParseTree,
) -> tuple[list[Rule], list[PrecedenceConstraint]]:
    """One rule and one constraint per internal node, children first.

    Returned lists are per-occurrence: a production applied at three
    nodes appears three times.
    """
    rules: list[Rule] = []
    constraints: list[PrecedenceConstraint] = []
    node_rule: dict[int, Rule] = {}
    for node in tree.internal_nodes():
        rule = Rule(
            node.label,
            node.left.label,
            node.right.label,
            node.kind,
            is_start=node is tree.root,
        )
        rules.append(rule)
        node_rule[id(node)] = rule
        left = node_rule[id(node.left)] if isinstance(node.left, Internal) else node.left.token
        right = node_rule[id(node.right)] if isinstance(node.right, Internal) else node.right.token
        constraints.append(PrecedenceConstraint(rule, left, right))
    return rules, constraints


@dataclass
class GrammarModel:
    rules: Counter
    constraints: Counter

    def has_rule(self, rule: Rule) -> bool:
        return rule in self.rules

    def has_constraint(self, constraint: PrecedenceConstraint) -> bool:
        return constraint in self.constraints

    def total_rule_count(self) -> int:
        return sum(self.rules.values())


def build_model(trees: Iterable[ParseTree]) -> GrammarModel:
    rules: Counter = Counter()
    constraints: Counter = Counter()
    for tree in trees:
        tree_rules, tree_constraints = extract_from_tree(tree)
        rules.update(tree_rules)
        constraints.update(tree_constraints)
    return GrammarModel(rules, constraints)


def filter_by_frequency(model: GrammarModel, threshold: int) -> GrammarModel:
    """Drop rules seen fewer than threshold times, plus any constraint
    touching a dropped rule (as parent or producer)."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    kept = Counter(
        {rule: count for rule, count in model.rules.items() if count >= threshold}
    )

    def intact(constraint: PrecedenceConstraint) -> bool:
        for part in (constraint.parent, constraint.left, constraint.right):
            if isinstance(part, Rule) and part not in kept:
                return False
        return True

    constraints = Counter(
        {c: count for c, count in model.constraints.items() if intact(c)}
    )
    return GrammarModel(kept, constraints)


# ----- text serialization ---------------------------------------------------

_MODEL_TOKEN_RE = re.compile(
    r"""-'(?P<slabel>[^']*)'-
      | '(?P<label>[^']*)'
      | (?P<arrow>->)
      | \[(?P<tag>REG|AL|AR|SL|SR)\]
      | (?P<open>\()
      | (?P<close>\))
      | (?P<feeds>>)
      | (?P<conj>\^)
      | (?P<space>\s+)""",
    re.VERBOSE,
)


class _Tokens:
    def __init__(self, text: str, line_no: int):
        self.items: list[tuple[str, str]] = []
        self.line_no = line_no
        pos = 0
        while pos < len(text):
            m = _MODEL_TOKEN_RE.match(text, pos)
            if not m:
                raise ParseError(f"line {line_no}: bad token at {text[pos:pos+15]!r}")
            pos = m.end()
            kind = m.lastgroup
            if kind != "space":
                self.items.append((kind, m.group(kind)))
        self.pos = 0

    def peek(self, ahead: int = 0) -> str | None:
        if self.pos + ahead < len(self.items):
            return self.items[self.pos + ahead][0]
        return None

    def take(self, kind: str) -> str:
        if self.peek() != kind:
            found = self.peek() or "end of line"
            raise ParseError(f"line {self.line_no}: expected {kind}, found {found}")
        value = self.items[self.pos][1]
        self.pos += 1
        return value

    def done(self) -> bool:
        return self.pos == len(self.items)


def _read_rule(tokens: _Tokens) -> Rule:
    if tokens.peek() == "slabel":
        lhs, is_start = tokens.take("slabel"), True
    else:
        lhs, is_start = tokens.take("label"), False
    tokens.take("arrow")
    rhs_left = tokens.take("label")
    rhs_right = tokens.take("label")
    kind = kind_from_tag(tokens.take("tag"))
    try:
        return Rule(lhs, rhs_left, rhs_right, kind, is_start)
    except ValueError as exc:
        raise ParseError(f"line {tokens.line_no}: {exc}") from None


def _read_producer(tokens: _Tokens) -> Producer:
    # A rule producer continues with '->'; a token producer is one label.
    if tokens.peek() in ("slabel",) or tokens.peek(1) == "arrow":
        return _read_rule(tokens)
    return tokens.take("label")


def model_to_text(model: GrammarModel) -> str:
    """One `count<TAB>notation` line per rule, then per constraint,
    both sorted by notation for byte-stable output."""
    lines = []
    for rule in sorted(model.rules, key=rule_notation):
        lines.append(f"{model.rules[rule]}\t{rule_notation(rule)}")
    for constraint in sorted(model.constraints, key=constraint_notation):
        lines.append(f"{model.constraints[constraint]}\t{constraint_notation(constraint)}")
    return "".join(line + "\n" for line in lines)


def text_to_model(text: str) -> GrammarModel:
    rules: Counter = Counter()
    constraints: Counter = Counter()
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        count_text, sep, body = line.partition("\t")
        if not sep:
            raise ParseError(f"line {line_no}: missing count field")
        try:
            count = int(count_text)
        except ValueError:
            raise ParseError(f"line {line_no}: bad count {count_text!r}") from None
        if count < 1:
            raise ParseError(f"line {line_no}: count must be positive")
        tokens = _Tokens(body, line_no)
        if tokens.peek() == "open":
            tokens.take("open")
            parent = _read_rule(tokens)
            tokens.take("feeds")
            left = _read_producer(tokens)
            tokens.take("conj")
            right = _read_producer(tokens)
            tokens.take("close")
            try:
                constraints[PrecedenceConstraint(parent, left, right)] += count
            except ValueError as exc:
                raise ParseError(f"line {line_no}: {exc}") from None
        else:
            rules[_read_rule(tokens)] += count
        if not tokens.done():
            raise ParseError(f"line {line_no}: trailing tokens")
    for constraint in constraints:
        for part in (constraint.parent, constraint.left, constraint.right):
            if isinstance(part, Rule) and part not in rules:
                raise ParseError(
                    f"constraint references a rule outside the model: {part}"
                )
    return GrammarModel(rules, constraints)


def save_model(path, model: GrammarModel) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(model_to_text(model))


def load_model(path) -> GrammarModel:
    with open(path, encoding="utf-8") as handle:
        return text_to_model(handle.read())


# ----- graph export ---------------------------------------------------------

def model_to_graph(model: GrammarModel) -> str:
    """Node/edge list of the constraint graph.

    Nodes are rules with the start distinction collapsed (display only;
    the model itself keeps it).  An edge u -> w with side left/right
    means rule u produced that side of w's rhs in some constraint.
    Token producers carry no edges.
    """
    def display_key(rule: Rule):
        return (rule.lhs, rule.rhs_left, rule.rhs_right, int(rule.kind))

    nodes: dict[tuple, int] = {}
    for rule in sorted(model.rules, key=rule_notation):
        nodes.setdefault(display_key(rule), len(nodes))
    edges = set()
    for constraint in model.constraints:
        parent_id = nodes[display_key(constraint.parent)]
        for side, producer in (("left", constraint.left), ("right", constraint.right)):
            if isinstance(producer, Rule):
                edges.add((side, nodes[display_key(producer)], parent_id))
    lines = []
    for key, node_id in nodes.items():
        lhs, rhs_left, rhs_right, kind = key
        shown = Rule(lhs, rhs_left, rhs_right, MergeKind(kind))
        lines.append(f"node\t{node_id}\t{rule_notation(shown, with_kind=False)}")
    for side, src, dst in sorted(edges):
        lines.append(f"edge\t{side}\t{src}\t{dst}")
    return "".join(line + "\n" for line in lines)
