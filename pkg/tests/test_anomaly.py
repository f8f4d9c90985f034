import pytest

from gramdetect.anomaly import (
    LengthMismatch,
    Verdict,
    detect,
    detect_batch,
    false_positive_rate,
    localization_metrics,
    localize,
)
from gramdetect.corpus import AnomalyKind, AnomalySpec
from gramdetect.grammar import build_model, constraint_notation, rule_notation
from gramdetect.parse import parse, simple_json_reference_policy

NOMINAL_CORPUS = ["{a}", "{b}", "{c}", "{{a}{b}{c}}", "{{a}}", "{{b}{c}}"]


def reference_setup():
    policy = simple_json_reference_policy()
    model = build_model(parse(s, policy) for s in NOMINAL_CORPUS)
    return policy, model


def test_deleted_letter_detection_golden():
    policy, model = reference_setup()
    verdict = detect("{{}{b}{c}}", policy, model)
    assert verdict.anomalous
    assert [rule_notation(r) for r in verdict.unexpected_rules] == [
        "'{G' -> '{' '{' [SL]",
        "'{G}{G}' -> '{G}' '{G}' [REG]",
        "'{G}{G}{G}' -> '{G}{G}' '{G}' [REG]",
        "-'{G}{G}{G}}'- -> '{G}{G}{G}' '}' [REG]",
    ]
    assert verdict.flagged == {0, 1, 9}
    assert verdict.violated_constraints == []


def test_deleted_letter_with_constraints_golden():
    policy, model = reference_setup()
    verdict = detect("{{}{b}{c}}", policy, model, use_constraints=True)
    assert verdict.anomalous
    assert verdict.flagged == {0, 1, 2, 9}
    assert len(verdict.violated_constraints) == 5
    assert constraint_notation(verdict.violated_constraints[0], with_kind=False) == (
        "( '{G' -> '{' '{' > '{' ^ '{' )"
    )


def test_truncated_sentence_flags_start_rule():
    policy, model = reference_setup()
    verdict = detect("{a", policy, model)
    assert verdict.anomalous
    assert len(verdict.unexpected_rules) == 1
    rule = verdict.unexpected_rules[0]
    assert rule.is_start
    assert rule_notation(rule) == "-'{G'- -> '{' 'a' [SL]"
    assert verdict.flagged == {0, 1}


def test_extra_letter_caught_only_by_constraints():
    policy, model = reference_setup()
    plain = detect("{a{b}}", policy, model)
    assert not plain.anomalous
    assert plain.flagged == set()
    strict = detect("{a{b}}", policy, model, use_constraints=True)
    assert strict.anomalous
    assert len(strict.violated_constraints) == 1
    assert strict.unexpected_rules == []


def test_nominal_and_recombined_sentences_pass():
    policy, model = reference_setup()
    for sentence in NOMINAL_CORPUS + ["{{c}}", "{{b}{a}}"]:
        verdict = detect(sentence, policy, model)
        assert not verdict.anomalous, sentence
        assert verdict.label == "nominal"


def test_localize_descendants_mode_flags_whole_subtree():
    policy, model = reference_setup()
    tree = parse("{{}{b}{c}}", policy)
    verdict = detect("{{}{b}{c}}", policy, model)
    wide = localize(tree, verdict.unexpected_rules, descendants=True)
    # the unexpected start rule covers the whole sentence
    assert wide == set(range(10))
    narrow = localize(tree, verdict.unexpected_rules)
    assert narrow == {0, 1, 9}
    assert localize(tree, []) == set()


def test_verdict_serialization():
    policy, model = reference_setup()
    verdict = detect("{{}{b}{c}}", policy, model, use_constraints=True)
    doc = verdict.to_dict()
    assert doc["label"] == "anomalous"
    assert doc["flagged_indices"] == [0, 1, 2, 9]
    assert doc["unexpected_rule_count"] == 4
    assert doc["violated_constraint_count"] == 5
    assert "unexpected_rules" not in doc
    verbose = verdict.to_dict(verbose=True)
    assert verbose["unexpected_rules"][0] == "'{G' -> '{' '{' [SL]"
    assert len(verbose["violated_constraints"]) == 5
    assert '"label": "anomalous"' in verdict.to_json()


def make_verdict(sentence, flagged):
    return Verdict(sentence, bool(flagged), flagged=set(flagged))


def test_localization_metrics_insertions():
    verdicts = [
        make_verdict("{aa}", {1}),  # hit at the inserted index
        make_verdict("{ab}", {3}),  # miss
        make_verdict("{ba}", set()),  # undetected
    ]
    specs = [
        AnomalySpec(AnomalyKind.INSERT_LETTER, 1, "a"),
        AnomalySpec(AnomalyKind.INSERT_LETTER, 2, "b"),
        AnomalySpec(AnomalyKind.INSERT_LETTER, 2, "a"),
    ]
    rate, ratio = localization_metrics(verdicts, specs)
    assert rate == pytest.approx(1 / 3)
    assert ratio == pytest.approx(1 / 4)  # one flag over four tokens


def test_localization_metrics_deletions_hit_either_gap_neighbour():
    # deletion at original position 2: flags at 1 or 2 both count
    spec = AnomalySpec(AnomalyKind.DELETE_LETTER, 2, "a")
    for flags, expect in (({1}, 1.0), ({2}, 1.0), ({0}, 0.0)):
        rate, _ = localization_metrics([make_verdict("{b}c", flags)], [spec])
        assert rate == expect


def test_localization_metrics_deletion_clipped_at_edges():
    # deleting the first token targets only index 0 of the corrupted text
    head = AnomalySpec(AnomalyKind.DELETE_BRACKET, 0, "{")
    rate, _ = localization_metrics([make_verdict("a}", {0})], [head])
    assert rate == 1.0
    # deleting the last token targets only the final corrupted index
    tail = AnomalySpec(AnomalyKind.DELETE_BRACKET, 4, "}")
    rate, _ = localization_metrics([make_verdict("{ab}", {3})], [tail])
    assert rate == 1.0
    rate, _ = localization_metrics([make_verdict("{ab}", {1})], [tail])
    assert rate == 0.0


def test_localization_metrics_ratio_over_hits_only():
    verdicts = [make_verdict("abcd", {0, 1}), make_verdict("abcdefgh", {5})]
    specs = [
        AnomalySpec(AnomalyKind.INSERT_LETTER, 0, "a"),
        AnomalySpec(AnomalyKind.INSERT_LETTER, 0, "a"),  # miss
    ]
    rate, ratio = localization_metrics(verdicts, specs)
    assert rate == 0.5
    assert ratio == pytest.approx(0.5)  # 2 flags / 4 tokens, hits only
    assert localization_metrics([], []) == (0.0, 0.0)
    # all-miss batch reports ratio 0.0
    rate, ratio = localization_metrics(
        [make_verdict("abcd", set())], [AnomalySpec(AnomalyKind.INSERT_LETTER, 1, "b")]
    )
    assert rate == 0.0 and ratio == 0.0


def test_localization_metrics_length_mismatch():
    with pytest.raises(LengthMismatch):
        localization_metrics([make_verdict("ab", set())], [])


def test_detect_batch_matches_single_detect():
    policy, model = reference_setup()
    sentences = ["{a}", "{{}{b}{c}}", "{a", "{{b}{a}}"]
    batch = detect_batch(sentences, policy, model)
    singles = [detect(s, policy, model) for s in sentences]
    assert [v.anomalous for v in batch] == [v.anomalous for v in singles]
    assert [v.flagged for v in batch] == [v.flagged for v in singles]


def test_false_positive_rate():
    policy, model = reference_setup()
    verdicts = detect_batch(["{a}", "{b}", "{a"], policy, model)
    assert false_positive_rate(verdicts) == pytest.approx(1 / 3)
    assert false_positive_rate([]) == 0.0
