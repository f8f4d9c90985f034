import math
import random
from collections import Counter

import pytest

from gramdetect.parse import (
    Internal,
    Leaf,
    MergeKind,
    TablePolicy,
    parse,
    simple_json_reference_policy,
)
from gramdetect.policy import (
    PolicyFileError,
    TabularPolicy,
    TrainConfig,
    _apply_gradient,
    atom_frequency_table,
    episode_reward,
    load_policy,
    save_policy,
    train,
)


def test_tabular_policy_truncates_features():
    policy = TabularPolicy(truncation=4)
    policy.bump(policy.feature("abcdefgh", "xy", MergeKind.REGULAR), 2.5)
    assert policy.score("abcdXXXX", "xy", MergeKind.REGULAR) == 2.5
    assert policy.score("abcd", "xy", MergeKind.REGULAR) == 2.5
    assert policy.score("abc", "xy", MergeKind.REGULAR) == 0.0


def test_tabular_policy_default_score():
    policy = TabularPolicy(default=-1.5)
    assert policy.score("anything", "else", MergeKind.ANCHOR_LEFT) == -1.5
    policy.bump(("a", "b", MergeKind.REGULAR), 1.0)
    assert policy.score("a", "b", MergeKind.REGULAR) == -0.5


def test_tabular_policy_validation():
    with pytest.raises(ValueError):
        TabularPolicy(truncation=0)
    with pytest.raises(ValueError):
        TabularPolicy(temperature=0.0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(alpha_anchor=0.0)
    with pytest.raises(ValueError):
        TrainConfig(smoothing=0.0)


def test_atom_frequency_table_counts():
    policy = simple_json_reference_policy()
    tree = parse("{{a}{b}}", policy)
    freq = atom_frequency_table([tree])
    assert freq == Counter({"{G": 4, "{G}": 3})
    # two copies double every count
    double = atom_frequency_table([tree, tree])
    assert double == Counter({"{G": 8, "{G}": 6})
    assert atom_frequency_table([]) == Counter()


def test_atom_frequency_totals_match_tree_sizes():
    policy = TablePolicy({})
    rng = random.Random(2)
    trees = [
        parse("".join(rng.choice("ab{}") for _ in range(rng.randint(1, 20))), policy, rng=rng)
        for _ in range(10)
    ]
    freq = atom_frequency_table(trees)
    assert sum(freq.values()) == sum(tree.n_internal for tree in trees)


def test_episode_reward_closed_form():
    # uniform policy greedy parse of "abcd" is all-regular with three
    # distinct labels, each of count 1
    tree = parse("abcd", TablePolicy({}))
    freq = atom_frequency_table([tree])
    cfg = TrainConfig(smoothing=1.0)
    assert abs(episode_reward(tree, freq, cfg) - 3 * math.log(2)) < 1e-9


def test_episode_reward_alpha_scales_anchored_nodes_only():
    tree = parse("{{a}{b}}", simple_json_reference_policy())
    freq = atom_frequency_table([tree])
    low = episode_reward(tree, freq, TrainConfig(alpha_anchor=0.4, smoothing=1.0))
    high = episode_reward(tree, freq, TrainConfig(alpha_anchor=0.8, smoothing=1.0))
    # the tree has exactly one anchored node, labeled '{G' (count 4)
    assert abs((high - low) - 0.4 * math.log(4 + 1.0)) < 1e-9


def test_episode_reward_monotone_in_frequency():
    tree = parse("{{a}{b}}", simple_json_reference_policy())
    cfg = TrainConfig()
    freq = atom_frequency_table([tree])
    bumped = Counter(freq)
    bumped["{G}"] += 5
    assert episode_reward(tree, bumped, cfg) >= episode_reward(tree, freq, cfg)


def test_gradient_matches_finite_differences():
    # regression guard for the hand-inlined gradient loop
    policy = TabularPolicy()
    wrng = random.Random(11)
    for left in "{ab}":
        for right in "{ab}":
            for kind in MergeKind:
                policy.bump((left, right, kind), wrng.uniform(-1, 1))
    trace = []
    parse("{ab}", policy, rng=random.Random(5), trace=trace)

    def log_prob(pol):
        total = 0.0
        for step in trace:
            scores = [
                pol.score(left, right, kind)
                for left, right in step.pairs
                for kind in MergeKind
            ]
            peak = max(scores)
            weights = [math.exp(s - peak) for s in scores]
            total += math.log(weights[step.chosen] / sum(weights))
        return total

    before = dict(policy.weights)
    _apply_gradient(policy, trace, 1.0, 1.0)
    analytic = {
        key: policy.weights.get(key, 0.0) - before.get(key, 0.0)
        for key in set(policy.weights) | set(before)
    }
    eps = 1e-6
    for key in analytic:
        policy.weights = dict(before)
        policy.bump(key, eps)
        up = log_prob(policy)
        policy.weights = dict(before)
        policy.bump(key, -eps)
        down = log_prob(policy)
        numeric = (up - down) / (2 * eps)
        assert abs(numeric - analytic[key]) < 1e-5


def test_train_requires_corpus():
    with pytest.raises(ValueError):
        train([], TrainConfig(epochs=1))


def test_train_deterministic_per_seed():
    corpus = ["{a}", "{b}", "{a}", "{{a}{b}}"] * 3
    cfg = TrainConfig(epochs=4, rng_seed=9)
    first = train(corpus, cfg)
    second = train(corpus, cfg)
    assert first.weights == second.weights
    other = train(corpus, TrainConfig(epochs=4, rng_seed=10))
    assert other.weights != first.weights


def test_train_two_token_corpus_learns_single_merge():
    # only one merge position exists; the discounted anchored kinds
    # should never win it
    policy = train(["ab"] * 12, TrainConfig(epochs=8, rng_seed=0, learning_rate=1.0))
    tree = parse("ab", policy)
    assert isinstance(tree.root, Internal)
    assert isinstance(tree.root.left, Leaf) and isinstance(tree.root.right, Leaf)
    assert tree.root.kind not in (MergeKind.ANCHOR_LEFT, MergeKind.ANCHOR_RIGHT)


def test_trained_policy_is_total():
    policy = train(["{a}"] * 6, TrainConfig(epochs=2, rng_seed=0))
    # unseen alphabet parses fine through the default score
    tree = parse("xyz!?", policy)
    assert tree.n_internal == 4


def test_policy_file_round_trip(tmp_path):
    policy = train(["{a}", "{b}"] * 4, TrainConfig(epochs=3, rng_seed=1))
    path = tmp_path / "policy.jsonl"
    save_policy(path, policy)
    loaded = load_policy(path)
    assert loaded.truncation == policy.truncation
    assert loaded.temperature == policy.temperature
    assert loaded.weights == policy.weights


def test_policy_file_rejects_bad_input(tmp_path):
    path = tmp_path / "policy.jsonl"
    path.write_text("")
    with pytest.raises(PolicyFileError):
        load_policy(path)
    path.write_text('{"version": 99, "L": 8, "temperature": 1.0}\n')
    with pytest.raises(PolicyFileError):
        load_policy(path)
    path.write_text("not json\n")
    with pytest.raises(PolicyFileError):
        load_policy(path)
    path.write_text('{"version": 1, "L": 8, "temperature": 1.0}\n{"left": "a"}\n')
    with pytest.raises(PolicyFileError):
        load_policy(path)
