"""Sentence generators, format oracles, anomaly injection, and dataset splits.

Three artificial formats are supported:

* simple-json: nested bracket objects, `S -> '{' ('a'|'b'|'c'|S+) '}'`.
* key-list: one to five keys, each a slash plus 1-3 lowercase letters,
  separated by single spaces.
* simple-json-stream: a simple-json body wrapped in 5-20 random noise
  tokens on each side.

All generators are deterministic per seed and never emit the reserved
symbols 'G' and '&'.
"""

from __future__ import annotations

import json
import random
import re
import string
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from .parse import HIGH_ENTROPY_TOKEN, SUBGRAMMAR_TOKEN

SIMPLE_JSON_LETTERS = "abc"
SIMPLE_JSON_ALPHABET = "{}" + SIMPLE_JSON_LETTERS
KEY_LIST_ALPHABET = "/ " + string.ascii_lowercase
STREAM_NOISE_ALPHABET = string.ascii_lowercase + "{}"

assert SUBGRAMMAR_TOKEN not in SIMPLE_JSON_ALPHABET + KEY_LIST_ALPHABET
assert HIGH_ENTROPY_TOKEN not in SIMPLE_JSON_ALPHABET + KEY_LIST_ALPHABET


class NoEligibleToken(ValueError):
    """The sentence has no token of the class an anomaly kind needs."""


class InsufficientUniqueSentences(ValueError):
    """The sentence pool cannot fill the duplicate-free splits."""


@dataclass(frozen=True)
class SimpleJsonParams:
    """Branching knobs for the nested-object generator.

    A body is a single letter with probability p_leaf, otherwise 1 to
    max_children sub-objects (uniform).  At max_depth the body is forced
    to a letter so expansion always terminates.
    """

    p_leaf: float = 0.5
    max_children: int = 4
    max_depth: int = 6

    def __post_init__(self) -> None:
        if not 0.0 < self.p_leaf <= 1.0:
            raise ValueError("p_leaf must be in (0, 1]")
        if self.max_children < 1 or self.max_depth < 0:
            raise ValueError("max_children >= 1 and max_depth >= 0 required")


def _gen_object(rng: random.Random, params: SimpleJsonParams, depth: int) -> str:
    if depth >= params.max_depth or rng.random() < params.p_leaf:
        body = rng.choice(SIMPLE_JSON_LETTERS)
    else:
        k = rng.randint(1, params.max_children)
        body = "".join(_gen_object(rng, params, depth + 1) for _ in range(k))
    return "{" + body + "}"


def generate_simple_json(
    rng_seed: int, count: int, params: SimpleJsonParams | None = None
) -> list[str]:
    if count < 1:
        raise ValueError("count must be >= 1")
    params = params or SimpleJsonParams()
    rng = random.Random(rng_seed)
    return [_gen_object(rng, params, 0) for _ in range(count)]


def simple_json_oracle(sentence: str) -> bool:
    """Recursive-descent acceptance check, independent of any parser.

    The grammar is LL(1): after '{', a letter means a letter body,
    another '{' means one or more sub-objects.
    """

    def obj(i: int) -> int:
        # Returns the index just past the object at i, or -1 on failure.
        if i >= len(sentence) or sentence[i] != "{":
            return -1
        i += 1
        if i < len(sentence) and sentence[i] in SIMPLE_JSON_LETTERS:
            i += 1
        else:
            i = obj(i)
            if i < 0:
                return -1
            while True:
                j = obj(i)
                if j < 0:
                    break
                i = j
        if i < len(sentence) and sentence[i] == "}":
            return i + 1
        return -1

    return bool(sentence) and obj(0) == len(sentence)


def generate_key_list(rng_seed: int, count: int) -> list[str]:
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = random.Random(rng_seed)
    out = []
    for _ in range(count):
        keys = [
            "/" + "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(1, 3)))
            for _ in range(rng.randint(1, 5))
        ]
        out.append(" ".join(keys))
    return out


_KEY_LIST_RE = re.compile(r"/[a-z]{1,3}( /[a-z]{1,3}){0,4}")


def key_list_oracle(sentence: str) -> bool:
    return _KEY_LIST_RE.fullmatch(sentence) is not None


@dataclass(frozen=True)
class StreamSentence:
    """A noise-wrapped sentence plus the span of its embedded body."""

    text: str
    body_start: int
    body_end: int

    @property
    def body(self) -> str:
        return self.text[self.body_start : self.body_end]


def generate_stream_records(
    rng_seed: int, count: int, params: SimpleJsonParams | None = None
) -> list[StreamSentence]:
    if count < 1:
        raise ValueError("count must be >= 1")
    params = params or SimpleJsonParams()
    rng = random.Random(rng_seed)
    out = []
    for _ in range(count):
        prefix = "".join(
            rng.choice(STREAM_NOISE_ALPHABET) for _ in range(rng.randint(5, 20))
        )
        body = _gen_object(rng, params, 0)
        suffix = "".join(
            rng.choice(STREAM_NOISE_ALPHABET) for _ in range(rng.randint(5, 20))
        )
        out.append(
            StreamSentence(prefix + body + suffix, len(prefix), len(prefix) + len(body))
        )
    return out


def generate_simple_json_stream(
    rng_seed: int, count: int, params: SimpleJsonParams | None = None
) -> list[str]:
    return [rec.text for rec in generate_stream_records(rng_seed, count, params)]


class AnomalyKind(Enum):
    DELETE_BRACKET = "delete_bracket"
    DELETE_LETTER = "delete_letter"
    INSERT_LETTER = "insert_letter"
    DELETE_SEPARATOR = "delete_separator"


# Token classes eligible for each deletion kind.
_DELETE_TARGETS = {
    AnomalyKind.DELETE_BRACKET: "{}",
    AnomalyKind.DELETE_LETTER: SIMPLE_JSON_LETTERS,
    AnomalyKind.DELETE_SEPARATOR: "/ ",
}


@dataclass(frozen=True)
class AnomalySpec:
    """Ground truth for one injected anomaly.

    For deletions, position indexes the removed token in the original
    sentence and token is the removed character.  For insertions,
    position indexes the inserted token in the corrupted sentence.
    """

    kind: AnomalyKind
    position: int
    token: str

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "position": self.position, "token": self.token}

    @classmethod
    def from_dict(cls, record: dict) -> "AnomalySpec":
        return cls(AnomalyKind(record["kind"]), record["position"], record["token"])


def inject_anomaly(
    sentence: str, kind: AnomalyKind, rng_seed: int | random.Random
) -> tuple[str, AnomalySpec]:
    """Corrupt a sentence with one random edit of the given kind."""
    rng = rng_seed if isinstance(rng_seed, random.Random) else random.Random(rng_seed)
    if kind is AnomalyKind.INSERT_LETTER:
        position = rng.randrange(len(sentence) + 1)
        letter = rng.choice(SIMPLE_JSON_LETTERS)
        corrupted = sentence[:position] + letter + sentence[position:]
        return corrupted, AnomalySpec(kind, position, letter)
    targets = _DELETE_TARGETS[kind]
    eligible = [i for i, tok in enumerate(sentence) if tok in targets]
    if not eligible:
        raise NoEligibleToken(f"no {kind.value} target in {sentence!r}")
    position = rng.choice(eligible)
    corrupted = sentence[:position] + sentence[position + 1 :]
    return corrupted, AnomalySpec(kind, position, sentence[position])


@dataclass(frozen=True)
class SplitSizes:
    train: int = 120
    extract: int = 100
    validate: int = 100
    evaluate_nominal: int = 100
    evaluate_anomalous: int = 100

    @property
    def unique_needed(self) -> int:
        return self.extract + self.validate + self.evaluate_nominal + self.evaluate_anomalous


@dataclass
class DatasetSplit:
    train: list[str]
    extract: list[str]
    validate: list[str]
    evaluate_nominal: list[str]
    evaluate_anomalous: list[str]

    def named(self) -> list[tuple[str, list[str]]]:
        return [
            ("train", self.train),
            ("extract", self.extract),
            ("validate", self.validate),
            ("evaluate_nominal", self.evaluate_nominal),
            ("evaluate_anomalous", self.evaluate_anomalous),
        ]


def make_splits(
    sentences: Iterable[str],
    sizes: SplitSizes | None = None,
    rng_seed: int = 0,
) -> DatasetSplit:
    """Split a generated pool into train + four duplicate-free sets.

    The training set takes the pool head as-is, duplicates included.
    The remainder is deduplicated, shuffled, and sliced, so the four
    later sets share no sentence with each other.
    """
    sizes = sizes or SplitSizes()
    pool = list(sentences)
    if len(pool) < sizes.train:
        raise InsufficientUniqueSentences(
            f"pool has {len(pool)} sentences, need {sizes.train} for training"
        )
    train = pool[: sizes.train]
    unique = list(dict.fromkeys(pool[sizes.train :]))
    if len(unique) < sizes.unique_needed:
        raise InsufficientUniqueSentences(
            f"need {sizes.unique_needed} unique sentences after training, "
            f"pool remainder has {len(unique)}"
        )
    rng = random.Random(rng_seed)
    rng.shuffle(unique)
    cuts = [sizes.extract, sizes.validate, sizes.evaluate_nominal, sizes.evaluate_anomalous]
    parts = []
    start = 0
    for size in cuts:
        parts.append(unique[start : start + size])
        start += size
    return DatasetSplit(train, *parts)


def save_sentences(path: str | Path, sentences: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for sentence in sentences:
            handle.write(sentence + "\n")


def load_sentences(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as handle:
        return [line.rstrip("\n") for line in handle if line.rstrip("\n")]


@dataclass(frozen=True)
class ManifestRecord:
    split: str
    sentence: str
    anomaly: AnomalySpec | None = None


def write_manifest(path: str | Path, records: Iterable[ManifestRecord]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for rec in records:
            doc: dict = {"split": rec.split, "sentence": rec.sentence}
            if rec.anomaly is not None:
                doc["anomaly_spec"] = rec.anomaly.to_dict()
            handle.write(json.dumps(doc) + "\n")


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            doc = json.loads(line)
            anomaly = None
            if "anomaly_spec" in doc:
                anomaly = AnomalySpec.from_dict(doc["anomaly_spec"])
            records.append(ManifestRecord(doc["split"], doc["sentence"], anomaly))
    return records
