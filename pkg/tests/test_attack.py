import numpy as np
import pytest

import src.core.attack as attack_mod
from src.core.attack import (
    AttackConfig, attack_representations, attribute_accuracies, evaluate_accuracy, load_attacker,
    majority_predictions, privacy_demographic, privacy_for_schema, privacy_ner, save_attacker,
    select_worst_privacy_epoch, train_attacker, trained_upper_bound,
)
from src.core.data import BOS, UNK, AttributeSchema, Corpus, Example, SynthConfig, Vocabulary, synth_generate
from src.core.errors import ConfigError, InvalidInputError, InvalidShapeError
from src.core.nn import MainModel
from src.core.training import MainCheckpoint, RepresentationSet, TrainConfig, export_representations, train_main

DEMO = AttributeSchema(("gender", "age"), ("demographic", "demographic"))


def _balanced_z(n, k=2):
    return np.array([[(i >> j) & 1 for j in range(k)] for i in range(n)])


def _separable(n, seed, d=4):
    rng = np.random.default_rng(seed)
    z = _balanced_z(n)
    r = np.zeros((n, d))
    r[:, :2] = 3.0 * (2 * z - 1)
    r += rng.normal(scale=0.3, size=(n, d))
    return RepresentationSet(DEMO.names, r, z)


def _noise(n, seed, d=4):
    return RepresentationSet(DEMO.names, np.random.default_rng(seed).normal(size=(n, d)), _balanced_z(n))


# ---------------- metrics ---------------- #
@pytest.mark.parametrize("accs,expected", [
    ((61.6, 58.4), 40.0),
    ((75.2, 50.9), 36.95),
    ((61.0, 50.1), 44.45),
    ((58.8, 56.7), 42.25),
    ((63.5, 63.7), 36.4),
])
def test_demographic_privacy_in_percent(accs, expected):
    assert privacy_demographic(accs, percent=True) == pytest.approx(expected, abs=1e-9)


def test_demographic_privacy_bounds():
    assert privacy_demographic([1.0, 1.0]) == 0.0
    assert privacy_demographic([0.5]) == 0.5
    with pytest.raises(InvalidInputError):
        privacy_demographic([])
    with pytest.raises(InvalidInputError):
        privacy_demographic([1.2])


def test_entity_privacy_from_cell_counts():
    gold = [[1, 1], [0, 1], [0, 0]]
    pred = [[1, 1], [1, 0], [0, 0]]  # tp=2 fp=1 fn=1
    assert privacy_ner(pred, gold) == pytest.approx(1 / 3)
    assert privacy_ner(gold, gold) == 0.0
    assert privacy_ner(np.zeros((3, 2)), gold) == 1.0
    assert privacy_ner(np.zeros((3, 2)), np.zeros((3, 2))) == 1.0
    with pytest.raises(InvalidShapeError):
        privacy_ner([[1, 0]], gold)
    with pytest.raises(ConfigError):
        privacy_ner(pred, gold, average="weighted")


def test_mixed_schema_cannot_be_scored():
    mixed = AttributeSchema(("gender", "person"), ("demographic", "entity"))
    with pytest.raises(ConfigError):
        privacy_for_schema(mixed, [[0, 1]], [[0, 1]])


def test_attribute_accuracies_mix_float_and_int_labels():
    assert attribute_accuracies(np.array([[1, 0], [0, 0]]), np.array([[1.0, 1.0], [0.0, 0.0]])) == [1.0, 0.5]


def test_worst_privacy_epoch_is_one_based_and_earliest_on_ties():
    assert select_worst_privacy_epoch([0.45, 0.40, 0.42]) == 2
    assert select_worst_privacy_epoch([0.3, 0.3]) == 1
    with pytest.raises(InvalidInputError):
        select_worst_privacy_epoch([])


def test_majority_predictions():
    np.testing.assert_array_equal(majority_predictions(np.array([[1, 0], [1, 1], [0, 0]]), 2), [[1, 0], [1, 0]])
    np.testing.assert_array_equal(majority_predictions(np.array([[0], [1]]), 1), [[0]])


# ---------------- attacker ---------------- #
def test_attacker_recovers_separable_attributes(tmp_path):
    cfg = AttackConfig(epochs=20, lr=0.01, seed=1)
    outcome = attack_representations(_separable(400, 0), _separable(100, 1), _separable(400, 2), DEMO, cfg)
    assert all(a > 0.95 for a in outcome.accuracies.values())
    assert outcome.privacy < 0.05
    assert outcome.baseline_privacy == pytest.approx(0.5)
    assert outcome.f_score is None

    path = str(tmp_path / "attacker.zip")
    save_attacker(outcome.attacker, path)
    back = load_attacker(path)
    assert back.epoch == outcome.attacker.epoch
    for name, arr in outcome.attacker.head.state_dict().items():
        np.testing.assert_array_equal(back.head.state_dict()[name], arr)


def test_attacker_on_noise_stays_at_chance():
    outcome = attack_representations(_noise(400, 0), _noise(100, 1), _noise(4000, 2), DEMO,
                                     AttackConfig(epochs=4, seed=0))
    for acc in outcome.accuracies.values():
        assert abs(acc - 0.5) < 0.05


def test_shuffled_representations_destroy_the_signal():
    cfg = AttackConfig(epochs=8, lr=0.01, seed=2, shuffle_reprs=True)
    outcome = attack_representations(_separable(400, 3), _separable(100, 4), _separable(2000, 5), DEMO, cfg)
    for acc in outcome.accuracies.values():
        assert abs(acc - 0.5) < 0.06


def test_attacker_input_checks():
    with pytest.raises(InvalidShapeError):
        train_attacker(_separable(20, 0, d=4), _separable(10, 1, d=3), AttackConfig(epochs=1), DEMO)
    empty = RepresentationSet((), np.zeros((5, 3)), np.zeros((5, 0)))
    with pytest.raises(ConfigError):
        train_attacker(empty, empty, AttackConfig(epochs=1), AttributeSchema((), ()))


def test_attack_config_from_strings():
    cfg = AttackConfig.from_mapping({"epochs": "3", "f_average": "MACRO", "shuffle_reprs": "yes"})
    assert (cfg.epochs, cfg.f_average, cfg.shuffle_reprs) == (3, "macro", True)
    with pytest.raises(ConfigError):
        AttackConfig.from_mapping({"f_average": "weighted"})
    with pytest.raises(ConfigError):
        AttackConfig.from_mapping({"rounds": "2"})


# ---------------- main-task accuracy ---------------- #
def _constant_checkpoint():
    vocab = Vocabulary([UNK, "x"], [UNK, BOS, "x"])
    model = MainModel(len(vocab), 2, 3, embed_dim=2, hidden=2, init="zeros")
    model.head.b2.data = np.array([1.0, 0.0])
    return MainCheckpoint(config=TrainConfig(d=3, embed_dim=2, hidden=2), vocab=vocab, schema=DEMO,
                          labels=["a", "b"], model=model, epoch=1, dev_accuracy=0.0)


def test_constant_model_accuracy_matches_label_share():
    exs = [Example(text="x", y=y, z=(0, 0), split="test") for y in (0, 0, 1)]
    assert evaluate_accuracy(_constant_checkpoint(), Corpus(exs, ["a", "b"], DEMO), "test") == pytest.approx(2 / 3)


def test_only_the_requested_split_is_scored(monkeypatch):
    seen = []
    real = attack_mod.predict_labels

    def counting(model, seqs):
        seen.append(len(seqs))
        return real(model, seqs)

    monkeypatch.setattr(attack_mod, "predict_labels", counting)
    exs = [Example(text="x", y=0, z=(0, 0), split="test") for _ in range(10)]
    exs += [Example(text="x", y=1, z=(0, 0), split="dev") for _ in range(5)]
    assert evaluate_accuracy(_constant_checkpoint(), Corpus(exs, ["a", "b"], DEMO), "test") == 1.0
    assert seen == [10]


def test_upper_bound_needs_attributes():
    corpus = synth_generate(SynthConfig(n_examples=40, k=0, min_len=3, max_len=4))
    with pytest.raises(ConfigError):
        trained_upper_bound(corpus, TrainConfig(d=4, epochs=1))


# ---------------- end to end ---------------- #
@pytest.mark.slow
def test_trained_upper_bound_reads_explicit_markers():
    corpus = synth_generate(SynthConfig(n_examples=1000, seed=0, private_signal=1.0, markers_per_value=1,
                                        min_len=3, max_len=5))
    accs = trained_upper_bound(corpus, TrainConfig(d=16, epochs=4, lr=0.01, dropout=0.0, min_freq=1))
    assert all(a >= 0.9 for a in accs.values())


SEEDS = (0, 1, 2)


def _planted_corpus(seed):
    # 5000 train examples at the default 80/10/10 split
    return synth_generate(SynthConfig(n_examples=6250, seed=seed, private_signal=0.6, rho=0.3))


def _attack_means(ckpt, corpus, seed, **attack_kw):
    reprs = {s: export_representations(ckpt, corpus, s) for s in ("train", "dev", "test")}
    outcome = attack_representations(reprs["train"], reprs["dev"], reprs["test"], corpus.schema,
                                     AttackConfig(seed=seed, **attack_kw))
    return (float(np.mean(list(outcome.accuracies.values()))),
            float(np.mean(list(outcome.baseline_accuracies.values()))))


@pytest.fixture(scope="module")
def planted_runs():
    runs = []
    for seed in SEEDS:
        corpus = _planted_corpus(seed)
        row = {}
        for regime in ("standard", "multidetask"):
            ckpt = train_main(corpus, TrainConfig(regime=regime, d=32, seed=seed))
            attacker, baseline = _attack_means(ckpt, corpus, seed)
            row[regime] = {"attacker": attacker, "baseline": baseline,
                           "main": evaluate_accuracy(ckpt, corpus, "test")}
            if regime == "standard":
                row["shuffled"] = _attack_means(ckpt, corpus, seed, shuffle_reprs=True)
        runs.append(row)
    return runs


def _advantage(runs, regime):
    return float(np.mean([r[regime]["attacker"] - r[regime]["baseline"] for r in runs]))


@pytest.mark.slow
def test_standard_representations_leak_above_the_majority_baseline(planted_runs):
    assert _advantage(planted_runs, "standard") >= 0.10


@pytest.mark.slow
def test_multidetask_shrinks_the_leak_at_small_accuracy_cost(planted_runs):
    standard, defended = _advantage(planted_runs, "standard"), _advantage(planted_runs, "multidetask")
    assert defended <= 0.7 * standard
    drop = np.mean([r["standard"]["main"] - r["multidetask"]["main"] for r in planted_runs])
    assert drop <= 0.05


@pytest.mark.slow
def test_multidetask_attacker_is_weaker_on_every_seed(planted_runs):
    for row in planted_runs:
        assert row["multidetask"]["attacker"] < row["standard"]["attacker"]


@pytest.mark.slow
def test_shuffled_representations_attack_at_the_baseline(planted_runs):
    shuffled = np.mean([r["shuffled"][0] for r in planted_runs])
    baseline = np.mean([r["shuffled"][1] for r in planted_runs])
    assert abs(shuffled - baseline) <= 0.03


@pytest.mark.slow
@pytest.mark.parametrize("d", [16, 64])
def test_upper_bound_attacker_and_baseline_are_ordered(d):
    upper, attacker, baseline = [], [], []
    for seed in SEEDS:
        corpus = _planted_corpus(seed)
        config = TrainConfig(d=d, seed=seed)
        acc, base = _attack_means(train_main(corpus, config), corpus, seed)
        attacker.append(acc)
        baseline.append(base)
        upper.append(float(np.mean(list(trained_upper_bound(corpus, config).values()))))
    assert np.mean(upper) >= np.mean(attacker) - 0.02
    assert np.mean(attacker) >= np.mean(baseline) - 0.02


@pytest.mark.slow
def test_attack_without_private_signal_stays_at_the_baseline():
    attacker, baseline = [], []
    for seed in SEEDS:
        corpus = synth_generate(SynthConfig(n_examples=6250, seed=seed, private_signal=0.0, rho=0.0),
                                ratios=(0.5, 0.1, 0.4))
        acc, base = _attack_means(train_main(corpus, TrainConfig(d=32, seed=seed)), corpus, seed)
        attacker.append(acc)
        baseline.append(base)
    assert abs(np.mean(attacker) - np.mean(baseline)) <= 0.03


@pytest.mark.slow
def test_upper_bound_without_signal_stays_near_the_baseline():
    corpus = synth_generate(SynthConfig(n_examples=4000, seed=5, private_signal=0.0, rho=0.0,
                                        min_len=3, max_len=6))
    accs = trained_upper_bound(corpus, TrainConfig(d=8, epochs=2, min_freq=1))
    assert all(abs(a - 0.5) < 0.08 for a in accs.values())
