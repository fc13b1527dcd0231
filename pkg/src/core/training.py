# training.py: main-classifier training under four regimes, selection, checkpoints, representation export
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .data import (
    AttributeSchema, Corpus, Example, Vocabulary,
    encode_example, marker_tokens, normalize_setting,
)
from .errors import (
    ConfigError, CorpusParseError, InvalidInputError, InvalidShapeError,
    SchemaError, VocabularyMismatchError,
)
from .nn import EMBED_DIM, HEAD_HIDDEN, CharLMParams, HeadParams, MainModel, charlm_nll_batch, head_forward
from .optim import Adam
from .tensor import (
    Tape, Tensor, backward, getitem, nll_categorical, nll_multilabel,
    no_tape, sigmoid, sq_distance, tsum,
)
from .utils import dtype_from_name, ensure_dir, read_array_zip, write_array_zip

log = logging.getLogger("repr_privacy.training")

REGIMES = ("standard", "multidetask", "advgen", "decluster")
DECLUSTER_SIGNS = ("as-printed", "negated")
CHECKPOINT_FORMAT = "repr-privacy/main-checkpoint"
CHECKPOINT_VERSION = 1
EVAL_CHUNK = 64
RESUME_PREFIX = "resume."


# ---------------- config ---------------- #
@dataclass
class TrainConfig:
    regime: str = "standard"
    d: int = 32
    epochs: int = 8
    batch_size: int = 16
    seed: int = 0
    alpha: Optional[float] = None     # None -> 0.1 for decluster, 1.0 otherwise
    beta: float = 1.0
    setting: str = "raw"
    dropout: float = 0.2
    lr: float = 0.001
    embed_dim: int = EMBED_DIM
    hidden: int = HEAD_HIDDEN
    min_freq: int = 2
    max_chars: int = 400
    decluster_sign: str = "as-printed"
    dtype: str = "float64"

    @property
    def alpha_value(self) -> float:
        if self.alpha is not None:
            return float(self.alpha)
        return 0.1 if self.regime == "decluster" else 1.0

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ConfigError(f"unknown train config key(s): {', '.join(unknown)}")
        kwargs: Dict[str, Any] = {}
        try:
            for key, value in raw.items():
                if key == "alpha":
                    kwargs[key] = None if value is None or str(value).strip() == "" else float(value)
                elif key in ("beta", "dropout", "lr"):
                    kwargs[key] = float(value)
                elif key == "setting":
                    kwargs[key] = normalize_setting(str(value))
                elif key in ("regime", "decluster_sign", "dtype"):
                    kwargs[key] = str(value).strip()
                else:
                    kwargs[key] = int(value)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad train config value: {e}") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r} (one of {', '.join(REGIMES)})")
        if self.d < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("d, epochs and batch_size must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.alpha_value <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha_value}")
        if self.regime in ("multidetask", "advgen") and self.beta <= 0:
            raise ConfigError(f"beta must be > 0 for the {self.regime} regime, got {self.beta}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.embed_dim < 1 or self.hidden < 1 or self.min_freq < 1 or self.max_chars < 1:
            raise ConfigError("embed_dim, hidden, min_freq and max_chars must be >= 1")
        if self.decluster_sign not in DECLUSTER_SIGNS:
            raise ConfigError(f"decluster_sign must be one of {DECLUSTER_SIGNS}")
        if normalize_setting(self.setting) != self.setting:
            raise ConfigError(f"setting must be one of raw | demo, got {self.setting!r}")
        dtype_from_name(self.dtype)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ---------------- domain types ---------------- #
@dataclass
class MainCheckpoint:
    config: TrainConfig
    vocab: Vocabulary
    schema: AttributeSchema
    labels: List[str]
    model: MainModel
    epoch: int
    dev_accuracy: float
    history: List[Dict[str, float]] = field(default_factory=list)
    # adversary / generator weights at the selected epoch, plus `resume.*` end-of-run arrays
    extra: Dict[str, np.ndarray] = field(default_factory=dict)
    # last finished epoch and its RNG stream states; 0 / {} when the checkpoint cannot be resumed
    resume_epoch: int = 0
    rng_states: Dict[str, Any] = field(default_factory=dict)


@dataclass
class RepresentationRecord:
    r: np.ndarray
    z: Tuple[int, ...]


@dataclass
class RepresentationSet:
    names: Tuple[str, ...]
    r: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.names = tuple(self.names)
        self.r = np.asarray(self.r)
        self.z = np.asarray(self.z, dtype=np.int64).reshape(len(self.r), len(self.names))
        if self.r.ndim != 2:
            raise InvalidShapeError(f"representations must be 2-D, got shape {self.r.shape}")

    def __len__(self) -> int:
        return self.r.shape[0]

    def __getitem__(self, i: int) -> RepresentationRecord:
        return RepresentationRecord(r=self.r[i], z=tuple(int(v) for v in self.z[i]))

    @property
    def d(self) -> int:
        return self.r.shape[1]

    @property
    def K(self) -> int:
        return len(self.names)

    def shuffled(self, seed: int) -> "RepresentationSet":
        """Permute r across examples, keeping z in place; destroys any r/z association."""
        perm = np.random.default_rng(seed).permutation(len(self))
        return RepresentationSet(self.names, self.r[perm], self.z.copy())


@dataclass
class Batch:
    seqs: List[List[int]]
    y: np.ndarray
    z: np.ndarray
    chars: List[List[int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.seqs)

    def take(self, idx: Sequence[int]) -> "Batch":
        idx = list(idx)
        return Batch(seqs=[self.seqs[i] for i in idx], y=self.y[idx], z=self.z[idx],
                     chars=[self.chars[i] for i in idx] if self.chars else [])


def encode_split(examples: Sequence[Example], vocab: Vocabulary, setting: str, schema: AttributeSchema,
                 max_chars: Optional[int] = None, with_chars: bool = False, dtype=np.float64) -> Batch:
    seqs = [encode_example(e, vocab, setting, schema) for e in examples]
    y = np.array([e.y for e in examples], dtype=np.int64)
    z = np.array([e.z for e in examples], dtype=dtype).reshape(len(examples), schema.K)
    chars = [vocab.encode_chars(e.chars, max_chars) for e in examples] if with_chars else []
    return Batch(seqs=seqs, y=y, z=z, chars=chars)


# ---------------- loss builders ---------------- #
def hamming_normalized(z: Sequence[int], z_other: Sequence[int]) -> float:
    a = np.asarray(z).reshape(-1)
    b = np.asarray(z_other).reshape(-1)
    if a.shape != b.shape:
        raise InvalidShapeError(f"hamming distance of vectors with lengths {a.size} and {b.size}")
    if a.size == 0:
        raise InvalidInputError("hamming distance of empty vectors")
    return float(np.count_nonzero(a != b)) / a.size


def adversary_loss(adversary: HeadParams, r: Tensor, z) -> Tensor:
    return nll_multilabel(sigmoid(head_forward(r, adversary)), z)


def multidetask_main_loss(logits: Tensor, y, adversary_probs: Tensor, z, alpha: float, beta: float) -> Tensor:
    """alpha * -log P(y|x) + beta * -log P(not z | r); -log P(not z_j) = -log(1 - p_j)."""
    not_z = 1.0 - np.asarray(z, dtype=adversary_probs.dtype)
    return alpha * nll_categorical(logits, y) + beta * nll_multilabel(adversary_probs, not_z)


def advgen_main_loss(logits: Tensor, y, generator_nll: Tensor, alpha: float, beta: float) -> Tensor:
    return alpha * nll_categorical(logits, y) - beta * generator_nll


def decluster_pair_term(r: Tensor, r_partner: Tensor, z, z_partner, alpha: float,
                        sign: str = "as-printed") -> Tensor:
    """Sum over pairs of alpha * (0.5 - hamming(z, z')) * ||r - r'||^2 (negated if sign='negated')."""
    if sign not in DECLUSTER_SIGNS:
        raise ConfigError(f"decluster_sign must be one of {DECLUSTER_SIGNS}")
    zs = np.atleast_2d(np.asarray(z))
    zp = np.atleast_2d(np.asarray(z_partner))
    if zs.shape != zp.shape:
        raise InvalidShapeError(f"private vectors {zs.shape} vs partners {zp.shape}")
    ham = np.array([hamming_normalized(a, b) for a, b in zip(zs, zp)])
    coeff = alpha * (0.5 - ham) * (1.0 if sign == "as-printed" else -1.0)
    dist = sq_distance(r, r_partner)
    return tsum(dist * Tensor(coeff.reshape(dist.shape).astype(dist.dtype)))


def decluster_loss(logits: Tensor, y, r: Tensor, r_partner: Tensor, z, z_partner,
                   alpha: float, sign: str = "as-printed") -> Tensor:
    return nll_categorical(logits, y) + decluster_pair_term(r, r_partner, z, z_partner, alpha, sign)


# ---------------- single updates ---------------- #
def _detached_repr(model: MainModel, seqs: Sequence[Sequence[int]]) -> Tensor:
    # eval-mode forward outside any tape: no dropout, nothing flows back into the encoder
    with no_tape():
        r = model.represent(seqs)
    return Tensor(r.data)


def standard_step(model: MainModel, opt: Adam, batch: Batch, config: TrainConfig,
                  rng: np.random.Generator) -> float:
    with Tape() as tape:
        r = model.represent(batch.seqs, config.dropout, True, rng)
        loss = nll_categorical(model.logits(r), batch.y)
    backward(tape, loss)
    opt.step()
    return loss.item()


def adversary_step(model: MainModel, adversary: HeadParams, adv_opt: Adam, batch: Batch) -> float:
    r = _detached_repr(model, batch.seqs)
    with Tape() as tape:
        loss = adversary_loss(adversary, r, batch.z)
    backward(tape, loss)
    adv_opt.step()
    return loss.item()


def multidetask_main_step(model: MainModel, opt: Adam, adversary: HeadParams, batch: Batch,
                          config: TrainConfig, rng: np.random.Generator) -> float:
    with Tape() as tape:
        r = model.represent(batch.seqs, config.dropout, True, rng)
        probs = sigmoid(head_forward(r, adversary))
        loss = multidetask_main_loss(model.logits(r), batch.y, probs, batch.z,
                                     config.alpha_value, config.beta)
    backward(tape, loss)
    opt.step()
    adversary.zero_grad()
    return loss.item()


def generator_step(model: MainModel, generator: CharLMParams, gen_opt: Adam, batch: Batch) -> float:
    r = _detached_repr(model, batch.seqs)
    with Tape() as tape:
        loss = charlm_nll_batch(batch.chars, r, generator)
    backward(tape, loss)
    gen_opt.step()
    return loss.item()


def advgen_main_step(model: MainModel, opt: Adam, generator: CharLMParams, batch: Batch,
                     config: TrainConfig, rng: np.random.Generator) -> float:
    with Tape() as tape:
        r = model.represent(batch.seqs, config.dropout, True, rng)
        gen_nll = charlm_nll_batch(batch.chars, r, generator)
        loss = advgen_main_loss(model.logits(r), batch.y, gen_nll, config.alpha_value, config.beta)
    backward(tape, loss)
    opt.step()
    generator.zero_grad()
    return loss.item()


def decluster_step(model: MainModel, opt: Adam, batch: Batch, partners: Batch,
                   config: TrainConfig, rng: np.random.Generator) -> float:
    B = len(batch)
    with Tape() as tape:
        r_all = model.represent(batch.seqs + partners.seqs, config.dropout, True, rng)
        r = getitem(r_all, slice(0, B))
        r_p = getitem(r_all, slice(B, 2 * B))
        loss = decluster_loss(model.logits(r), batch.y, r, r_p, batch.z, partners.z,
                              config.alpha_value, config.decluster_sign)
    backward(tape, loss)
    opt.step()
    return loss.item()


def sample_partners(n: int, rng: np.random.Generator) -> np.ndarray:
    """For each index, a uniformly drawn different index in [0, n)."""
    if n < 2:
        raise ConfigError("declustering needs at least two training examples")
    j = rng.integers(n - 1, size=n)
    return j + (j >= np.arange(n))


# ---------------- selection ---------------- #
def select_best_epoch(dev_accuracies: Sequence[float]) -> int:
    """1-based epoch with the highest dev accuracy; ties go to the earlier epoch."""
    if len(dev_accuracies) == 0:
        raise InvalidInputError("no epochs to select from")
    return int(np.argmax(np.asarray(dev_accuracies, dtype=np.float64))) + 1


def predict_labels(model: MainModel, seqs: Sequence[Sequence[int]]) -> np.ndarray:
    out: List[np.ndarray] = []
    with no_tape():
        for start in range(0, len(seqs), EVAL_CHUNK):
            logits = model.logits(model.represent(seqs[start:start + EVAL_CHUNK]))
            out.append(np.argmax(logits.data, axis=-1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


# ---------------- Phase 1 ---------------- #
def seed_streams(seed: int) -> Dict[str, np.random.Generator]:
    names = ("init", "shuffle", "dropout", "partner", "aux")
    return {name: np.random.default_rng([seed, k]) for k, name in enumerate(names)}


def check_trainable(corpus: Corpus, config: TrainConfig) -> Tuple[List[Example], List[Example]]:
    config.validate()
    train = corpus.split("train")
    dev = corpus.split("dev")
    if not train:
        raise InvalidInputError("empty training split")
    if not dev:
        raise InvalidInputError("empty dev split; model selection needs one")
    if config.regime in ("multidetask", "decluster") and corpus.K == 0:
        raise ConfigError(f"the {config.regime} regime needs private attributes (K=0)")
    if config.regime == "decluster" and len(train) < 2:
        raise ConfigError("declustering cannot sample a distinct partner from a single training example")
    if config.setting == "demo" and not corpus.schema.demographic:
        raise ConfigError("+demo input needs demographic private attributes")
    return train, dev


def check_resumable(ckpt: MainCheckpoint, corpus: Corpus, config: TrainConfig) -> None:
    """A run can continue from `ckpt` when only the epoch budget differs."""
    if not ckpt.rng_states or not any(k.startswith(RESUME_PREFIX) for k in ckpt.extra):
        raise ConfigError("checkpoint carries no resume state")
    check_compatible(ckpt, corpus)
    saved, wanted = ckpt.config.to_dict(), config.to_dict()
    saved.pop("epochs")
    wanted.pop("epochs")
    diff = sorted(k for k in wanted if saved.get(k) != wanted[k])
    if diff:
        raise ConfigError(f"cannot resume: config differs from the checkpoint in {', '.join(diff)}")
    if config.epochs < ckpt.resume_epoch:
        raise ConfigError(f"cannot resume: checkpoint already ran {ckpt.resume_epoch} epoch(s), "
                          f"config asks for {config.epochs}")


def _resume_arrays(model: MainModel, opt: Adam, aux, aux_opt: Optional[Adam]) -> Dict[str, np.ndarray]:
    arrays = dict(model.state_dict())
    arrays.update({k: np.array(v) for k, v in opt.state_dict("optim.").items()})
    if aux is not None:
        arrays.update(aux.state_dict())
        arrays.update({k: np.array(v) for k, v in aux_opt.state_dict("optim_aux.").items()})
    return {RESUME_PREFIX + k: v for k, v in arrays.items()}


def _restore(ckpt: MainCheckpoint, model: MainModel, opt: Adam, aux, aux_opt: Optional[Adam],
             rngs: Dict[str, np.random.Generator]) -> Tuple[List[Dict[str, float]], Dict[str, np.ndarray]]:
    arrays = {k[len(RESUME_PREFIX):]: v for k, v in ckpt.extra.items() if k.startswith(RESUME_PREFIX)}
    model.load_state_dict(arrays)
    opt.load_state_dict(arrays, "optim.")
    if aux is not None:
        aux.load_state_dict(arrays)
        aux_opt.load_state_dict(arrays, "optim_aux.")
    for name, state in ckpt.rng_states.items():
        rngs[name].bit_generator.state = state
    snapshot = ckpt.model.state_dict()
    snapshot.update({k: np.array(v) for k, v in ckpt.extra.items() if not k.startswith(RESUME_PREFIX)})
    return [dict(h) for h in ckpt.history], snapshot


def train_main(corpus: Corpus, config: TrainConfig, resume_from: Optional[MainCheckpoint] = None,
               progress_path: Optional[str] = None) -> MainCheckpoint:
    """
    Phase 1 for any regime; returns the best-dev-accuracy epoch snapshot.

    `resume_from` continues a run from its end-of-run state (weights, optimizer
    moments, RNG streams), so the result matches an uninterrupted run.
    `progress_path` rewrites a resumable checkpoint after every epoch.
    """
    train, dev = check_trainable(corpus, config)
    regime = config.regime
    schema = corpus.schema
    dtype = dtype_from_name(config.dtype)
    if resume_from is not None:
        check_resumable(resume_from, corpus, config)
        vocab = resume_from.vocab
    else:
        markers = marker_tokens(schema) if config.setting == "demo" else []
        vocab = Vocabulary.build(train, config.min_freq, markers)
    rngs = seed_streams(config.seed)

    model = MainModel(len(vocab), corpus.n_classes, config.d, config.embed_dim, config.hidden,
                      rng=rngs["init"], dtype=dtype)
    opt = Adam(model.parameters(), lr=config.lr)
    aux: Optional[Any] = None
    aux_opt: Optional[Adam] = None
    if regime == "multidetask":
        aux = HeadParams(config.d, corpus.K, config.hidden, rng=rngs["aux"], dtype=dtype, prefix="adversary")
        aux_opt = Adam(aux.parameters(), lr=config.lr)
    elif regime == "advgen":
        aux = CharLMParams(vocab.n_chars, config.d, config.embed_dim, rng=rngs["aux"], dtype=dtype,
                           prefix="generator")
        aux_opt = Adam(aux.parameters(), lr=config.lr)

    data = encode_split(train, vocab, config.setting, schema, config.max_chars,
                        with_chars=(regime == "advgen"), dtype=dtype)
    dev_seqs = [encode_example(e, vocab, config.setting, schema) for e in dev]
    dev_y = np.array([e.y for e in dev], dtype=np.int64)
    n = len(data)

    history: List[Dict[str, float]] = []
    snapshot: Dict[str, np.ndarray] = {}
    if resume_from is not None:
        history, snapshot = _restore(resume_from, model, opt, aux, aux_opt, rngs)
        log.info("[TRAIN] resuming after epoch %d", resume_from.resume_epoch)
    log.info("[TRAIN] regime=%s d=%d seed=%d setting=%s train=%d dev=%d vocab=%d",
             regime, config.d, config.seed, config.setting, n, len(dev), len(vocab))

    def package(done: int) -> MainCheckpoint:
        best = select_best_epoch([h["dev_accuracy"] for h in history])
        chosen = MainModel(len(vocab), corpus.n_classes, config.d, config.embed_dim, config.hidden,
                           rng=None, init="zeros", dtype=dtype)
        chosen.load_state_dict(snapshot)
        model_keys = set(chosen.state_dict())
        extra = {k: v for k, v in snapshot.items() if k not in model_keys}
        extra.update(_resume_arrays(model, opt, aux, aux_opt))
        return MainCheckpoint(config=config, vocab=vocab, schema=schema, labels=list(corpus.labels),
                              model=chosen, epoch=best, dev_accuracy=history[best - 1]["dev_accuracy"],
                              history=[dict(h) for h in history], extra=extra, resume_epoch=done,
                              rng_states={name: g.bit_generator.state for name, g in rngs.items()})

    for epoch in range(len(history) + 1, config.epochs + 1):
        order = rngs["shuffle"].permutation(n)
        partners = sample_partners(n, rngs["partner"]) if regime == "decluster" else None
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = data.take(idx)
            if regime == "standard":
                total += standard_step(model, opt, batch, config, rngs["dropout"])
            elif regime == "multidetask":
                adversary_step(model, aux, aux_opt, batch)
                total += multidetask_main_step(model, opt, aux, batch, config, rngs["dropout"])
            elif regime == "advgen":
                generator_step(model, aux, aux_opt, batch)
                total += advgen_main_step(model, opt, aux, batch, config, rngs["dropout"])
            else:
                total += decluster_step(model, opt, batch, data.take(partners[idx]), config, rngs["dropout"])

        dev_acc = float(np.mean(predict_labels(model, dev_seqs) == dev_y))
        history.append({"epoch": epoch, "train_loss": total / n, "dev_accuracy": dev_acc})
        log.info("[EPOCH] %d/%d loss=%.5f dev_acc=%.4f", epoch, config.epochs, total / n, dev_acc)
        if select_best_epoch([h["dev_accuracy"] for h in history]) == epoch:
            snapshot = model.state_dict()
            if aux is not None:
                snapshot.update(aux.state_dict())
        if progress_path:
            save_checkpoint(package(epoch), progress_path)

    ckpt = package(len(history))
    log.info("[SELECT] epoch %d dev_acc=%.4f", ckpt.epoch, ckpt.dev_accuracy)
    return ckpt


def _with_regime(config: TrainConfig, regime: str) -> TrainConfig:
    if config.regime != regime:
        raise ConfigError(f"config regime is {config.regime!r}, expected {regime!r}")
    return config


def train_standard(corpus: Corpus, config: TrainConfig) -> MainCheckpoint:
    return train_main(corpus, _with_regime(config, "standard"))


def train_multidetask(corpus: Corpus, config: TrainConfig) -> MainCheckpoint:
    return train_main(corpus, _with_regime(config, "multidetask"))


def train_advgen(corpus: Corpus, config: TrainConfig) -> MainCheckpoint:
    return train_main(corpus, _with_regime(config, "advgen"))


def train_decluster(corpus: Corpus, config: TrainConfig) -> MainCheckpoint:
    return train_main(corpus, _with_regime(config, "decluster"))


# ---------------- checkpoints ---------------- #
def save_checkpoint(ckpt: MainCheckpoint, path: str) -> None:
    arrays = ckpt.model.state_dict()
    clash = set(arrays) & set(ckpt.extra)
    if clash:
        raise ConfigError(f"checkpoint array names collide: {sorted(clash)}")
    arrays.update(ckpt.extra)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.to_dict(),
        "schema": ckpt.schema.to_dict(),
        "labels": list(ckpt.labels),
        "epoch": int(ckpt.epoch),
        "dev_accuracy": float(ckpt.dev_accuracy),
        "history": ckpt.history,
        "resume": {"epoch": int(ckpt.resume_epoch), "rng": ckpt.rng_states},
        "shapes": {k: list(v.shape) for k, v in sorted(arrays.items())},
    }
    write_array_zip(path, arrays, meta)
    log.info("[EXPORT] checkpoint %s (%d arrays)", path, len(arrays))


def load_checkpoint(path: str) -> MainCheckpoint:
    if not os.path.exists(path):
        raise InvalidInputError(f"checkpoint not found: {path}")
    arrays, meta = read_array_zip(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(f"{path}: not a main-model checkpoint", field="format")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {meta.get('version')}", field="version")
    config = TrainConfig.from_mapping(meta["config"])
    vocab = Vocabulary.from_dict(meta["vocab"])
    labels = list(meta["labels"])
    model = MainModel(len(vocab), len(labels), config.d, config.embed_dim, config.hidden,
                      rng=None, init="zeros", dtype=dtype_from_name(config.dtype))
    model.load_state_dict(arrays)
    model_keys = set(model.state_dict())
    return MainCheckpoint(
        config=config, vocab=vocab, schema=AttributeSchema.from_dict(meta["schema"]), labels=labels,
        model=model, epoch=int(meta["epoch"]), dev_accuracy=float(meta["dev_accuracy"]),
        history=list(meta.get("history", [])),
        extra={k: v for k, v in arrays.items() if k not in model_keys},
        resume_epoch=int(meta.get("resume", {}).get("epoch", 0)),
        rng_states=dict(meta.get("resume", {}).get("rng", {})),
    )


def check_compatible(ckpt: MainCheckpoint, corpus: Corpus) -> None:
    if tuple(corpus.schema.names) != tuple(ckpt.schema.names):
        raise VocabularyMismatchError(
            f"corpus attributes {list(corpus.schema.names)} differ from checkpoint {list(ckpt.schema.names)}")
    if list(corpus.labels) != list(ckpt.labels):
        raise VocabularyMismatchError(f"corpus labels {corpus.labels} differ from checkpoint {ckpt.labels}")
    tokens = [t for e in corpus.examples for t in e.tokens]
    if tokens:
        covered = sum(1 for t in tokens if t in ckpt.vocab.stoi) / len(tokens)
        if covered < 0.01:
            raise VocabularyMismatchError(f"checkpoint vocabulary covers {covered:.1%} of the corpus tokens")


# ---------------- Phase 2 ---------------- #
def export_representations(ckpt: MainCheckpoint, corpus: Corpus, split: str) -> RepresentationSet:
    """Frozen-encoder r(x) for every example of `split`, in corpus order; dropout is always off."""
    check_compatible(ckpt, corpus)
    examples = corpus.split(split)
    seqs = [encode_example(e, ckpt.vocab, ckpt.config.setting, ckpt.schema) for e in examples]
    rows: List[np.ndarray] = []
    with no_tape():
        for start in range(0, len(seqs), EVAL_CHUNK):
            rows.append(ckpt.model.represent(seqs[start:start + EVAL_CHUNK]).data)
    r = np.concatenate(rows) if rows else np.zeros((0, ckpt.config.d), dtype=ckpt.model.encoder.dtype)
    z = np.array([e.z for e in examples], dtype=np.int64).reshape(len(examples), ckpt.schema.K)
    log.info("[EXPORT] %s: %d representations of width %d", split, len(examples), r.shape[1])
    return RepresentationSet(names=ckpt.schema.names, r=r, z=z)


def save_representations(reprs: RepresentationSet, path: str) -> None:
    """JSON header line, then one line per record: d floats (repr precision) then K ints."""
    ensure_dir(os.path.dirname(path) or ".")
    header = {"d": reprs.d, "K": reprs.K, "names": list(reprs.names), "dtype": str(reprs.r.dtype)}
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for row, zs in zip(reprs.r, reprs.z):
            values = [repr(float(x)) for x in row] + [str(int(v)) for v in zs]
            f.write(" ".join(values) + "\n")


def load_representations(path: str) -> RepresentationSet:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise CorpusParseError("missing header", 1)
    try:
        header = json.loads(lines[0])
        d, K, names = int(header["d"]), int(header["K"]), list(header["names"])
        dtype = dtype_from_name(header.get("dtype", "float64"))
    except (ValueError, KeyError, TypeError) as e:
        raise CorpusParseError(f"bad representation header: {e}", 1) from None
    if len(names) != K:
        raise SchemaError("header K does not match the attribute names", field="names")
    r = np.zeros((len(lines) - 1, d), dtype=dtype)
    z = np.zeros((len(lines) - 1, K), dtype=np.int64)
    for i, line in enumerate(lines[1:]):
        parts = line.split()
        if len(parts) != d + K:
            raise CorpusParseError(f"expected {d + K} values, got {len(parts)}", i + 2)
        try:
            r[i] = [float(x) for x in parts[:d]]
            z[i] = [int(x) for x in parts[d:]]
        except ValueError as e:
            raise CorpusParseError(str(e), i + 2) from None
    return RepresentationSet(names=tuple(names), r=r, z=z)
