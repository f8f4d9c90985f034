import random

import pytest

from gramdetect.corpus import (
    AnomalyKind,
    AnomalySpec,
    InsufficientUniqueSentences,
    ManifestRecord,
    NoEligibleToken,
    SimpleJsonParams,
    SplitSizes,
    generate_key_list,
    generate_simple_json,
    generate_simple_json_stream,
    generate_stream_records,
    inject_anomaly,
    key_list_oracle,
    load_sentences,
    make_splits,
    read_manifest,
    save_sentences,
    simple_json_oracle,
    write_manifest,
)


def test_simple_json_oracle_known_sentences():
    assert simple_json_oracle("{a}")
    assert simple_json_oracle("{{a}{b}{c}}")
    assert simple_json_oracle("{{{a}}}")
    assert not simple_json_oracle("{{}{b}{c}}")
    assert not simple_json_oracle("{a{b}}")
    assert not simple_json_oracle("")
    assert not simple_json_oracle("{}")
    assert not simple_json_oracle("a")
    assert not simple_json_oracle("{a}{b}")
    assert not simple_json_oracle("{ab}")


def test_generate_simple_json_all_pass_oracle():
    sentences = generate_simple_json(0, 1000)
    assert len(sentences) == 1000
    assert all(simple_json_oracle(s) for s in sentences)


def test_generate_simple_json_deterministic_and_seed_sensitive():
    assert generate_simple_json(5, 50) == generate_simple_json(5, 50)
    assert generate_simple_json(5, 50) != generate_simple_json(6, 50)


def test_generate_simple_json_never_emits_reserved_tokens():
    for sentence in generate_simple_json(1, 500):
        assert "G" not in sentence
        assert "&" not in sentence


def test_simple_json_params_validated():
    with pytest.raises(ValueError):
        SimpleJsonParams(p_leaf=1.5)
    with pytest.raises(ValueError):
        SimpleJsonParams(max_children=0)
    with pytest.raises(ValueError):
        SimpleJsonParams(max_depth=-1)
    # depth 0 is legal: every body degenerates to a single letter
    shallow = generate_simple_json(0, 20, SimpleJsonParams(max_depth=0))
    assert all(len(s) == 3 for s in shallow)


def test_generate_key_list_matches_oracle():
    sentences = generate_key_list(0, 1000)
    assert len(sentences) == 1000
    assert all(key_list_oracle(s) for s in sentences)
    keys = [s.count("/") for s in sentences]
    assert min(keys) == 1 and max(keys) == 5


def test_key_list_oracle_rejects_corrupt_forms():
    assert key_list_oracle("/cjc /i /sp")
    assert key_list_oracle("/a")
    assert not key_list_oracle("/cjc i /sp")
    assert not key_list_oracle("cjc /i")
    assert not key_list_oracle("/abcd")
    assert not key_list_oracle("/a /b /c /d /e /f")
    assert not key_list_oracle("")


def test_stream_records_have_valid_bodies_and_bounds():
    records = generate_stream_records(0, 200)
    for record in records:
        assert 5 <= record.body_start <= 20
        assert 5 <= len(record.text) - record.body_end <= 20
        assert simple_json_oracle(record.body)
        assert record.text[record.body_start : record.body_end] == record.body


def test_generate_simple_json_stream_texts_match_records():
    texts = generate_simple_json_stream(4, 50)
    records = generate_stream_records(4, 50)
    assert texts == [record.text for record in records]


def test_inject_delete_letter_golden():
    # force deletion of the 'a': seed chosen so rng.choice picks index 2
    sentence = "{{a}{b}{c}}"
    for seed in range(50):
        corrupted, spec = inject_anomaly(sentence, AnomalyKind.DELETE_LETTER, seed)
        if spec.position == 2:
            assert corrupted == "{{}{b}{c}}"
            assert spec.token == "a"
            break
    else:
        pytest.fail("no seed deleted the first letter")


def test_inject_delete_bracket_always_breaks_oracle():
    sentences = generate_simple_json(2, 300)
    rng = random.Random(9)
    for sentence in sentences:
        corrupted, spec = inject_anomaly(sentence, AnomalyKind.DELETE_BRACKET, rng)
        assert len(corrupted) == len(sentence) - 1
        assert sentence[spec.position] in "{}"
        assert not simple_json_oracle(corrupted)


def test_inject_insert_letter_positions_and_token():
    rng = random.Random(3)
    for sentence in generate_simple_json(3, 200):
        corrupted, spec = inject_anomaly(sentence, AnomalyKind.INSERT_LETTER, rng)
        assert len(corrupted) == len(sentence) + 1
        assert corrupted[spec.position] == spec.token
        assert spec.token in "abc"
        # removing the inserted token restores the original
        assert corrupted[: spec.position] + corrupted[spec.position + 1 :] == sentence


def test_inject_delete_separator_on_key_list():
    rng = random.Random(11)
    for sentence in generate_key_list(7, 200):
        corrupted, spec = inject_anomaly(sentence, AnomalyKind.DELETE_SEPARATOR, rng)
        assert sentence[spec.position] in "/ "
        assert not key_list_oracle(corrupted)


def test_inject_requires_eligible_token():
    with pytest.raises(NoEligibleToken):
        inject_anomaly("abc", AnomalyKind.DELETE_BRACKET, 0)
    with pytest.raises(NoEligibleToken):
        inject_anomaly("{}", AnomalyKind.DELETE_LETTER, 0)


def test_anomaly_spec_dict_round_trip():
    spec = AnomalySpec(AnomalyKind.INSERT_LETTER, 4, "b")
    assert AnomalySpec.from_dict(spec.to_dict()) == spec


def test_make_splits_sizes_and_disjointness():
    pool = generate_simple_json(7, 1720)
    splits = make_splits(pool, SplitSizes(), rng_seed=7)
    assert len(splits.train) == 120
    later = [splits.extract, splits.validate, splits.evaluate_nominal, splits.evaluate_anomalous]
    assert [len(part) for part in later] == [100, 100, 100, 100]
    for part in later:
        assert len(set(part)) == len(part)
    seen = set()
    for part in later:
        assert seen.isdisjoint(part)
        seen.update(part)
    # train keeps the pool head verbatim, duplicates included
    assert splits.train == pool[:120]


def test_make_splits_insufficient_pool():
    pool = generate_simple_json(7, 200)
    with pytest.raises(InsufficientUniqueSentences):
        make_splits(pool, SplitSizes())
    with pytest.raises(InsufficientUniqueSentences):
        make_splits(pool[:50], SplitSizes())


def test_sentence_file_round_trip(tmp_path):
    sentences = generate_simple_json(1, 30)
    path = tmp_path / "sentences.txt"
    save_sentences(path, sentences)
    assert load_sentences(path) == sentences


def test_manifest_round_trip(tmp_path):
    records = [
        ManifestRecord("train", "{a}", None),
        ManifestRecord(
            "evaluate_anomalous",
            "{{}{b}{c}}",
            AnomalySpec(AnomalyKind.DELETE_LETTER, 2, "a"),
        ),
    ]
    path = tmp_path / "manifest.jsonl"
    write_manifest(path, records)
    assert read_manifest(path) == records
