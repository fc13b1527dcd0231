# attack.py: Phase-3 attacker, privacy metrics, baselines, trained upper bound
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
from sklearn.metrics import accuracy_score, f1_score

from .data import AttributeSchema, Corpus, Vocabulary, encode_example, marker_tokens
from .errors import ConfigError, InvalidInputError, InvalidShapeError, SchemaError
from .nn import HEAD_HIDDEN, HeadParams, MainModel, head_forward
from .optim import Adam
from .tensor import Tape, Tensor, backward, nll_multilabel, no_tape, sigmoid
from .training import (
    MainCheckpoint, RepresentationSet, TrainConfig, check_trainable,
    adversary_loss, check_compatible, encode_split, predict_labels, seed_streams,
)
from .utils import as_bool, dtype_from_name, read_array_zip, write_array_zip

log = logging.getLogger("repr_privacy.attack")

THRESHOLD = 0.5
F_AVERAGES = ("micro", "macro")
ATTACKER_FORMAT = "repr-privacy/attacker-checkpoint"


@dataclass
class AttackConfig:
    epochs: int = 16
    batch_size: int = 16
    seed: int = 0
    lr: float = 0.001
    hidden: int = HEAD_HIDDEN
    f_average: str = "micro"
    shuffle_reprs: bool = False
    upper_bound: bool = False

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> "AttackConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown attack config key(s): {', '.join(unknown)}")
        kwargs: Dict[str, Any] = {}
        try:
            for key, value in raw.items():
                if key in ("shuffle_reprs", "upper_bound"):
                    kwargs[key] = as_bool(value)
                elif key == "lr":
                    kwargs[key] = float(value)
                elif key == "f_average":
                    kwargs[key] = str(value).strip().lower()
                else:
                    kwargs[key] = int(value)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad attack config value: {e}") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ConfigError("attack epochs, batch_size and hidden must be >= 1")
        if self.seed < 0 or self.lr <= 0:
            raise ConfigError("attack seed must be >= 0 and lr > 0")
        if self.f_average not in F_AVERAGES:
            raise ConfigError(f"f_average must be one of {F_AVERAGES}")


@dataclass
class AttackerCheckpoint:
    head: HeadParams
    epoch: int
    dev_privacy: float
    history: List[Dict[str, float]] = field(default_factory=list)


@dataclass
class AttackOutcome:
    attacker: AttackerCheckpoint
    mode: str
    accuracies: Dict[str, float]
    privacy: float
    f_score: Optional[float]
    baseline_accuracies: Dict[str, float]
    baseline_privacy: float


# ---------------- metrics ---------------- #
def privacy_demographic(accuracies: Sequence[float], percent: bool = False) -> float:
    """1 - mean attacker accuracy; with percent=True inputs and output are in [0, 100]."""
    accs = np.asarray(list(accuracies), dtype=np.float64)
    if accs.size == 0:
        raise InvalidInputError("privacy needs at least one attribute accuracy")
    top = 100.0 if percent else 1.0
    if np.any(accs < 0) or np.any(accs > top):
        raise InvalidInputError(f"accuracies must lie in [0, {top:g}]")
    return float(top - accs.mean())


def privacy_ner(predictions, gold, average: str = "micro") -> float:
    """1 - F over the binary presence cells; F is 0 when precision + recall is 0."""
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(gold, dtype=np.int64)
    if pred.shape != true.shape:
        raise InvalidShapeError(f"predictions {pred.shape} vs gold {true.shape}")
    if pred.size == 0:
        raise InvalidInputError("privacy needs at least one prediction")
    if average == "micro":
        f = f1_score(true.reshape(-1), pred.reshape(-1), zero_division=0)
    elif average == "macro":
        f = f1_score(np.atleast_2d(true), np.atleast_2d(pred), average="macro", zero_division=0)
    else:
        raise ConfigError(f"f_average must be one of {F_AVERAGES}")
    return float(1.0 - f)


def f_score(predictions, gold, average: str = "micro") -> float:
    return 1.0 - privacy_ner(predictions, gold, average)


def attribute_accuracies(predictions, gold) -> List[float]:
    pred = np.asarray(predictions).astype(np.int64)
    true = np.asarray(gold).astype(np.int64)
    if pred.shape != true.shape or pred.ndim != 2:
        raise InvalidShapeError(f"predictions {pred.shape} vs gold {true.shape}")
    if pred.shape[0] == 0:
        raise InvalidInputError("no examples to score")
    return [float(accuracy_score(true[:, j], pred[:, j])) for j in range(true.shape[1])]


def privacy_for_schema(schema: AttributeSchema, predictions, gold, average: str = "micro") -> float:
    mode = schema.mode
    if mode == "demographic":
        return privacy_demographic(attribute_accuracies(predictions, gold))
    if mode == "entity":
        return privacy_ner(predictions, gold, average)
    raise ConfigError(f"cannot score privacy for a {mode!r} attribute schema; attributes must share one kind")


def select_worst_privacy_epoch(dev_privacies: Sequence[float]) -> int:
    """1-based epoch with the lowest dev privacy (most successful attacker); ties go to the earlier epoch."""
    if len(dev_privacies) == 0:
        raise InvalidInputError("no epochs to select from")
    return int(np.argmin(np.asarray(dev_privacies, dtype=np.float64))) + 1


def majority_predictions(train_z: np.ndarray, n: int) -> np.ndarray:
    """Per attribute, the majority value on the training rows (ties -> 0), repeated n times."""
    train_z = np.asarray(train_z, dtype=np.int64)
    if train_z.ndim != 2 or train_z.shape[0] == 0:
        raise InvalidInputError("majority baseline needs a non-empty training split")
    values = [int(np.argmax(np.bincount(train_z[:, j], minlength=2))) for j in range(train_z.shape[1])]
    return np.tile(np.array(values, dtype=np.int64), (n, 1))


# ---------------- attacker ---------------- #
def predict_attributes(head: HeadParams, r: np.ndarray) -> np.ndarray:
    with no_tape():
        probs = sigmoid(head_forward(Tensor(r), head)).data
    return (probs >= THRESHOLD).astype(np.int64)


def train_attacker(train: RepresentationSet, dev: RepresentationSet, config: AttackConfig,
                   schema: AttributeSchema) -> AttackerCheckpoint:
    """Fresh feedforward attacker on frozen r; keeps the epoch with the worst dev privacy."""
    config.validate()
    if train.d != dev.d:
        raise InvalidShapeError(f"train representations have width {train.d}, dev {dev.d}")
    if train.K != dev.K or train.K != schema.K:
        raise InvalidShapeError("train/dev representations disagree on the number of attributes")
    if train.K == 0:
        raise ConfigError("no private attributes to attack")
    if len(train) == 0 or len(dev) == 0:
        raise InvalidInputError("attacker needs non-empty train and dev representations")

    rng = np.random.default_rng([config.seed, 10])
    head = HeadParams(train.d, train.K, config.hidden, rng=rng, dtype=train.r.dtype, prefix="attacker")
    opt = Adam(head.parameters(), lr=config.lr)
    z_train = train.z.astype(train.r.dtype)
    history: List[Dict[str, float]] = []
    snapshot: Dict[str, np.ndarray] = {}
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(train), config.batch_size):
            idx = order[start:start + config.batch_size]
            with Tape() as tape:
                loss = adversary_loss(head, Tensor(train.r[idx]), z_train[idx])
            backward(tape, loss)
            opt.step()
            total += loss.item()
        priv = privacy_for_schema(schema, predict_attributes(head, dev.r), dev.z, config.f_average)
        history.append({"epoch": epoch, "train_loss": total / len(train), "dev_privacy": priv})
        log.debug("[ATTACK] epoch %d/%d loss=%.5f dev_privacy=%.4f", epoch, config.epochs, total / len(train), priv)
        if select_worst_privacy_epoch([h["dev_privacy"] for h in history]) == epoch:
            snapshot = head.state_dict()

    best = select_worst_privacy_epoch([h["dev_privacy"] for h in history])
    head.load_state_dict(snapshot)
    log.info("[SELECT] attacker epoch %d dev_privacy=%.4f", best, history[best - 1]["dev_privacy"])
    return AttackerCheckpoint(head=head, epoch=best, dev_privacy=history[best - 1]["dev_privacy"], history=history)


def attack_representations(train: RepresentationSet, dev: RepresentationSet, test: RepresentationSet,
                           schema: AttributeSchema, config: AttackConfig) -> AttackOutcome:
    if config.shuffle_reprs:
        train = train.shuffled(config.seed)
        dev = dev.shuffled(config.seed + 1)
        test = test.shuffled(config.seed + 2)
    if len(test) == 0:
        raise InvalidInputError("empty test split")
    attacker = train_attacker(train, dev, config, schema)
    pred = predict_attributes(attacker.head, test.r)
    accs = attribute_accuracies(pred, test.z)
    base_pred = majority_predictions(train.z, len(test))
    base_accs = attribute_accuracies(base_pred, test.z)
    entity = schema.mode == "entity"
    outcome = AttackOutcome(
        attacker=attacker,
        mode=schema.mode,
        accuracies=dict(zip(schema.names, accs)),
        privacy=privacy_for_schema(schema, pred, test.z, config.f_average),
        f_score=f_score(pred, test.z, config.f_average) if entity else None,
        baseline_accuracies=dict(zip(schema.names, base_accs)),
        baseline_privacy=privacy_for_schema(schema, base_pred, test.z, config.f_average),
    )
    log.info("[ATTACK] privacy=%.4f baseline=%.4f", outcome.privacy, outcome.baseline_privacy)
    return outcome


def save_attacker(attacker: AttackerCheckpoint, path: str) -> None:
    meta = {
        "format": ATTACKER_FORMAT,
        "in_dim": attacker.head.in_dim,
        "out_dim": attacker.head.out_dim,
        "hidden": attacker.head.hidden,
        "dtype": str(attacker.head.dtype),
        "epoch": attacker.epoch,
        "dev_privacy": attacker.dev_privacy,
        "history": attacker.history,
    }
    write_array_zip(path, attacker.head.state_dict(), meta)


def load_attacker(path: str) -> AttackerCheckpoint:
    arrays, meta = read_array_zip(path)
    if meta.get("format") != ATTACKER_FORMAT:
        raise SchemaError(f"{path}: not an attacker checkpoint", field="format")
    head = HeadParams(meta["in_dim"], meta["out_dim"], meta["hidden"], rng=None, init="zeros",
                      dtype=dtype_from_name(meta["dtype"]), prefix="attacker")
    head.load_state_dict(arrays)
    return AttackerCheckpoint(head=head, epoch=int(meta["epoch"]), dev_privacy=float(meta["dev_privacy"]),
                              history=list(meta.get("history", [])))


# ---------------- main-task accuracy ---------------- #
def evaluate_accuracy(ckpt: MainCheckpoint, corpus: Corpus, split: str) -> float:
    """Fraction of `split` whose argmax prediction equals y; dropout off."""
    check_compatible(ckpt, corpus)
    examples = corpus.split(split)
    if not examples:
        raise InvalidInputError(f"empty {split} split")
    seqs = [encode_example(e, ckpt.vocab, ckpt.config.setting, ckpt.schema) for e in examples]
    y = np.array([e.y for e in examples], dtype=np.int64)
    return float(accuracy_score(y, predict_labels(ckpt.model, seqs)))


# ---------------- trained upper bound ---------------- #
def _predict_multilabel(model: MainModel, seqs: Sequence[Sequence[int]], chunk: int = 64) -> np.ndarray:
    out: List[np.ndarray] = []
    with no_tape():
        for start in range(0, len(seqs), chunk):
            probs = sigmoid(model.logits(model.represent(seqs[start:start + chunk]))).data
            out.append((probs >= THRESHOLD).astype(np.int64))
    return np.concatenate(out)


def trained_upper_bound(corpus: Corpus, config: TrainConfig) -> Dict[str, float]:
    """
    Encoder + sigmoid head trained end-to-end on z with the main model's protocol.
    Selection keeps the epoch with the best mean dev attribute accuracy.
    Returns test accuracy per attribute.
    """
    if corpus.K == 0:
        raise ConfigError("the trained upper bound needs private attributes")
    train, dev = check_trainable(corpus, config)
    test = corpus.split("test")
    if not test:
        raise InvalidInputError("empty test split")
    dtype = dtype_from_name(config.dtype)
    markers = marker_tokens(corpus.schema) if config.setting == "demo" else []
    vocab = Vocabulary.build(train, config.min_freq, markers)
    rngs = seed_streams(config.seed)
    model = MainModel(len(vocab), corpus.K, config.d, config.embed_dim, config.hidden,
                      rng=rngs["init"], dtype=dtype)
    opt = Adam(model.parameters(), lr=config.lr)
    data = encode_split(train, vocab, config.setting, corpus.schema, dtype=dtype)
    dev_b = encode_split(dev, vocab, config.setting, corpus.schema)
    test_b = encode_split(test, vocab, config.setting, corpus.schema)

    best_score, snapshot = -1.0, {}
    for epoch in range(1, config.epochs + 1):
        order = rngs["shuffle"].permutation(len(data))
        for start in range(0, len(data), config.batch_size):
            batch = data.take(order[start:start + config.batch_size])
            with Tape() as tape:
                r = model.represent(batch.seqs, config.dropout, True, rngs["dropout"])
                loss = nll_multilabel(sigmoid(model.logits(r)), batch.z)
            backward(tape, loss)
            opt.step()
        score = float(np.mean(attribute_accuracies(_predict_multilabel(model, dev_b.seqs), dev_b.z)))
        log.debug("[TRAIN] upper bound epoch %d dev_acc=%.4f", epoch, score)
        if score > best_score:
            best_score, snapshot = score, model.state_dict()
    model.load_state_dict(snapshot)
    accs = attribute_accuracies(_predict_multilabel(model, test_b.seqs), test_b.z)
    log.info("[ATTACK] trained upper bound %s", ", ".join(f"{n}={a:.4f}" for n, a in zip(corpus.schema.names, accs)))
    return dict(zip(corpus.schema.names, accs))
