# data.py: corpus ingestion, vocabulary, +demo encoding, splits, synthetic corpora
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, fields
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, CorpusParseError, InvalidInputError, SchemaError
from .utils import as_list, ensure_dir

log = logging.getLogger("repr_privacy.data")

UNK = "<unk>"
BOS = "<bos>"
UNK_ID = 0
BOS_CHAR_ID = 1
SPLITS = ("train", "dev", "test")
DEFAULT_RATIOS = (0.8, 0.1, 0.1)
ATTRIBUTE_KINDS = ("demographic", "entity")
MARKER_POSITIONS = ("end", "anywhere")
SETTINGS = ("raw", "demo")
AGE_BINS = (35.0, 45.0)


# ---------------- helpers ---------------- #
def tokenize(text: str) -> List[str]:
    return (text or "").lower().split()


def normalize_setting(setting: str) -> str:
    s = (setting or "raw").strip().lower().lstrip("+")
    if s not in SETTINGS:
        raise ConfigError(f"unknown input setting {setting!r} (raw | demo)")
    return s


def marker_token(name: str, value: int) -> str:
    return f"<{name}={int(value)}>"


# ---------------- domain types ---------------- #
@dataclass
class Example:
    text: str
    y: int
    z: Tuple[int, ...]
    split: str = "train"
    tokens: List[str] = field(default_factory=list)
    chars: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.z = tuple(int(v) for v in self.z)
        if not self.tokens:
            self.tokens = tokenize(self.text)
        if not self.chars:
            self.chars = list(self.text)


@dataclass(frozen=True)
class AttributeSchema:
    names: Tuple[str, ...]
    kinds: Tuple[str, ...]

    def __post_init__(self):
        if len(self.names) != len(self.kinds):
            raise SchemaError("attribute names and kinds differ in length")
        for k in self.kinds:
            if k not in ATTRIBUTE_KINDS:
                raise SchemaError(f"unknown attribute kind {k!r}", field="private")

    @property
    def K(self) -> int:
        return len(self.names)

    @property
    def demographic(self) -> List[int]:
        return [j for j, k in enumerate(self.kinds) if k == "demographic"]

    @property
    def mode(self) -> str:
        kinds = set(self.kinds)
        if not kinds:
            return "none"
        return kinds.pop() if len(kinds) == 1 else "mixed"

    def to_dict(self) -> Dict[str, List[str]]:
        return {"names": list(self.names), "kinds": list(self.kinds)}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "AttributeSchema":
        return cls(tuple(raw.get("names", [])), tuple(raw.get("kinds", [])))


@dataclass
class Corpus:
    examples: List[Example]
    labels: List[str]
    schema: AttributeSchema

    @property
    def K(self) -> int:
        return self.schema.K

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def split(self, name: str) -> List[Example]:
        if name not in SPLITS:
            raise InvalidInputError(f"unknown split {name!r}")
        return [e for e in self.examples if e.split == name]

    def split_sizes(self) -> Dict[str, int]:
        counts = Counter(e.split for e in self.examples)
        return {s: counts.get(s, 0) for s in SPLITS}


class Vocabulary:
    """Word and character id maps, built from the training split only."""

    def __init__(self, tokens: Sequence[str], chars: Sequence[str]):
        if not tokens or tokens[0] != UNK:
            raise SchemaError("token vocabulary must start with the UNK symbol")
        if len(chars) < 2 or chars[UNK_ID] != UNK or chars[BOS_CHAR_ID] != BOS:
            raise SchemaError("char vocabulary must start with UNK and BOS")
        self.itos: List[str] = list(tokens)
        self.stoi: Dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        self.char_itos: List[str] = list(chars)
        self.char_stoi: Dict[str, int] = {c: i for i, c in enumerate(self.char_itos)}
        if len(self.stoi) != len(self.itos) or len(self.char_stoi) != len(self.char_itos):
            raise SchemaError("vocabulary entries must be unique")

    @classmethod
    def build(cls, train: Sequence[Example], min_freq: int = 2,
              markers: Sequence[str] = ()) -> "Vocabulary":
        counts = Counter(t for e in train for t in e.tokens)
        words = sorted((w for w, c in counts.items() if c >= min_freq and w not in markers),
                       key=lambda w: (-counts[w], w))
        chars = sorted({c for e in train for c in e.chars})
        return cls([UNK, *markers, *words], [UNK, BOS, *chars])

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def n_chars(self) -> int:
        return len(self.char_itos)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos and self.char_itos == other.char_itos

    def token_id(self, tok: str) -> int:
        return self.stoi.get(tok, UNK_ID)

    def encode_tokens(self, tokens: Iterable[str]) -> List[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def encode_chars(self, chars: Iterable[str], max_chars: Optional[int] = None) -> List[int]:
        ids = [self.char_stoi.get(c, UNK_ID) for c in chars]
        return ids[:max_chars] if max_chars else ids

    def to_dict(self) -> Dict[str, List[str]]:
        return {"tokens": list(self.itos), "chars": list(self.char_itos)}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Vocabulary":
        return cls(raw["tokens"], raw["chars"])


def marker_tokens(schema: AttributeSchema) -> List[str]:
    return [marker_token(schema.names[j], v) for j in schema.demographic for v in (0, 1)]


def encode_example(example: Example, vocab: Vocabulary, setting: str = "raw",
                   schema: Optional[AttributeSchema] = None) -> List[int]:
    """Token ids; `demo` prepends one marker token per demographic attribute."""
    ids = vocab.encode_tokens(example.tokens)
    if normalize_setting(setting) == "raw":
        return ids
    if schema is None or not schema.demographic:
        raise ConfigError("+demo input needs demographic private attributes")
    prefix = []
    for j in schema.demographic:
        tok = marker_token(schema.names[j], example.z[j])
        if tok not in vocab.stoi:
            raise ConfigError(f"vocabulary has no marker {tok!r}; was it built for the raw setting?")
        prefix.append(vocab.stoi[tok])
    return prefix + ids


# ---------------- splits / attributes ---------------- #
def assign_splits(n: int, seed: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> List[str]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n_train = int(round(ratios[0] * n))
    n_dev = min(n - n_train, int(round(ratios[1] * n)))
    order = np.random.default_rng(seed).permutation(n)
    out = ["test"] * n
    for rank, idx in enumerate(order):
        if rank < n_train:
            out[idx] = "train"
        elif rank < n_train + n_dev:
            out[idx] = "dev"
    return out


def bin_attribute(value: Any, thresholds: Tuple[float, float] = AGE_BINS) -> Optional[int]:
    """below low -> 0, above high -> 1, inside the gap -> None (discard)."""
    if isinstance(value, bool):
        raise SchemaError(f"expected a number to bin, got {value!r}", field="private")
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise SchemaError(f"expected a number to bin, got {value!r}", field="private") from None
    if math.isnan(x):
        raise SchemaError("cannot bin NaN", field="private")
    lo, hi = thresholds
    if x < lo:
        return 0
    if x > hi:
        return 1
    return None


def _binary(value: Any, name: str, line_no: int) -> int:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, (int, float)) and value in (0, 1):
        return int(value)
    raise SchemaError(f"line {line_no}: private attribute {name!r} must be 0/1, got {value!r}", field=name)


# ---------------- JSONL corpora ---------------- #
def load_jsonl(path: str, seed: int = 0, attribute_kind: str = "demographic",
               kinds: Optional[Mapping[str, str]] = None,
               bins: Optional[Mapping[str, Tuple[float, float]]] = None,
               ratios: Sequence[float] = DEFAULT_RATIOS) -> Corpus:
    """
    One JSON object per line: text, label, private (name -> 0/1), optional split.
    Attribute names come from the first record; later records must match.
    Records without a split get a seeded split with `ratios`.
    """
    bins = dict(bins or {})
    kinds = dict(kinds or {})
    records: List[Tuple[str, str, Tuple[int, ...], Optional[str]]] = []
    names: Optional[List[str]] = None
    dropped = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusParseError(f"invalid JSON: {e.msg}", line_no) from None
            if not isinstance(obj, dict):
                raise CorpusParseError("expected a JSON object", line_no)
            for key in ("text", "label", "private"):
                if key not in obj:
                    raise SchemaError(f"line {line_no}: missing field {key!r}", field=key)
            text, label, private = obj["text"], obj["label"], obj["private"]
            if not isinstance(text, str) or not tokenize(text):
                raise SchemaError(f"line {line_no}: field 'text' must be a non-empty string", field="text")
            if not isinstance(label, (str, int)) or isinstance(label, bool):
                raise SchemaError(f"line {line_no}: field 'label' must be a string", field="label")
            if not isinstance(private, dict):
                raise SchemaError(f"line {line_no}: field 'private' must be an object", field="private")
            if names is None:
                names = list(private.keys())
            elif set(private.keys()) != set(names):
                raise SchemaError(f"line {line_no}: private keys {sorted(private)} differ from {sorted(names)}",
                                  field="private")
            z: List[int] = []
            keep = True
            for name in names:
                if name in bins:
                    v = bin_attribute(private[name], bins[name])
                    if v is None:
                        keep = False
                        break
                    z.append(v)
                else:
                    z.append(_binary(private[name], name, line_no))
            if not keep:
                dropped += 1
                continue
            split = obj.get("split")
            if split is not None and split not in SPLITS:
                raise SchemaError(f"line {line_no}: split must be one of {SPLITS}, got {split!r}", field="split")
            records.append((text, str(label), tuple(z), split))

    if names is None:
        raise InvalidInputError(f"{path}: corpus is empty")
    if dropped:
        log.info("[DATA] dropped %d example(s) inside a binning gap", dropped)

    missing = [i for i, r in enumerate(records) if r[3] is None]
    if missing:
        fresh = assign_splits(len(missing), seed, ratios)
        fill = dict(zip(missing, fresh))
    else:
        fill = {}

    labels = sorted({r[1] for r in records})
    label_id = {l: i for i, l in enumerate(labels)}
    schema = AttributeSchema(tuple(names), tuple(kinds.get(n, attribute_kind) for n in names))
    examples = [Example(text=t, y=label_id[l], z=z, split=s if s is not None else fill[i])
                for i, (t, l, z, s) in enumerate(records)]
    log.info("[DATA] loaded %s: %d examples, %d classes, K=%d", path, len(examples), len(labels), schema.K)
    return Corpus(examples=examples, labels=labels, schema=schema)


def write_jsonl(corpus: Corpus, path: str) -> None:
    import os
    ensure_dir(os.path.dirname(path) or ".")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for e in corpus.examples:
            rec = {
                "text": e.text,
                "label": corpus.labels[e.y],
                "private": {n: int(v) for n, v in zip(corpus.schema.names, e.z)},
                "split": e.split,
            }
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


# ---------------- corpus transforms ---------------- #
def balance_private(corpus: Corpus, seed: int = 0) -> Corpus:
    """Subsample each split so every private-value combination is equally frequent."""
    rng = np.random.default_rng(seed)
    kept: List[Example] = []
    for split in SPLITS:
        groups: Dict[Tuple[int, ...], List[Example]] = {}
        for e in corpus.split(split):
            groups.setdefault(e.z, []).append(e)
        if not groups:
            continue
        size = min(len(g) for g in groups.values())
        for key in sorted(groups):
            g = groups[key]
            idx = np.sort(rng.choice(len(g), size=size, replace=False))
            kept.extend(g[i] for i in idx)
    order = {id(e): i for i, e in enumerate(corpus.examples)}
    kept.sort(key=lambda e: order[id(e)])
    return Corpus(examples=kept, labels=list(corpus.labels), schema=corpus.schema)


def filter_entity_present(corpus: Corpus) -> Corpus:
    return Corpus(examples=[e for e in corpus.examples if any(e.z)],
                  labels=list(corpus.labels), schema=corpus.schema)


def most_frequent_baseline(train: Sequence[Example], evaluate: Optional[Sequence[Example]] = None,
                           target: Any = "label") -> Tuple[int, float]:
    """
    Majority value of `target` ("label" or attribute index j) on `train`
    and its accuracy on `evaluate` (defaults to `train`). Ties go to the lower id.
    """
    evaluate = train if evaluate is None else evaluate
    if not train or not evaluate:
        raise InvalidInputError("most-frequent baseline needs non-empty splits")

    def value(e: Example) -> int:
        return e.y if target == "label" else e.z[int(target)]

    counts = np.bincount([value(e) for e in train])
    pred = int(np.argmax(counts))
    acc = float(np.mean([value(e) == pred for e in evaluate]))
    return pred, acc


def corpus_summary(corpus: Corpus) -> Dict[str, Any]:
    ys = np.array([e.y for e in corpus.examples])
    zs = np.array([e.z for e in corpus.examples], dtype=np.float64).reshape(len(ys), corpus.K)
    half = (ys >= max(1, corpus.n_classes // 2)).astype(np.float64)
    corr: List[Optional[float]] = []
    for j in range(corpus.K):
        zj = zs[:, j]
        if zj.std() == 0 or half.std() == 0:
            corr.append(None)
        else:
            corr.append(round(float(np.corrcoef(zj, half)[0, 1]), 4))
    balance = np.bincount(ys, minlength=corpus.n_classes) / max(1, len(ys))
    return {
        "examples": len(corpus.examples),
        "splits": corpus.split_sizes(),
        "class_balance": {corpus.labels[c]: round(float(b), 4) for c, b in enumerate(balance)},
        "positive_rate": {n: round(float(zs[:, j].mean()), 4) if len(ys) else 0.0
                          for j, n in enumerate(corpus.schema.names)},
        "corr_z_y": dict(zip(corpus.schema.names, corr)),
    }


# ---------------- synthetic corpora ---------------- #
@dataclass
class SynthConfig:
    vocab_size: int = 200
    n_classes: int = 2
    k: int = 2
    n_examples: int = 1000
    label_signal: float = 0.3
    private_signal: float = 0.5
    rho: float = 0.0
    seed: int = 0
    min_len: int = 8
    max_len: int = 20
    class_tokens: int = 5
    markers_per_value: int = 3
    attribute_kind: str = "demographic"
    attribute_names: List[str] = field(default_factory=list)
    marker_position: str = "end"

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> "SynthConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ConfigError(f"unknown synth config key(s): {', '.join(unknown)}")
        kwargs: Dict[str, Any] = {}
        try:
            for key, value in raw.items():
                if key == "attribute_names":
                    kwargs[key] = as_list(value)
                elif key in ("attribute_kind", "marker_position"):
                    kwargs[key] = str(value).strip()
                elif key in ("label_signal", "private_signal", "rho"):
                    kwargs[key] = float(value)
                else:
                    kwargs[key] = int(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad synth config value: {e}") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def names(self) -> List[str]:
        if self.attribute_names:
            return list(self.attribute_names)
        if self.attribute_kind == "demographic" and self.k == 2:
            return ["gender", "age"]
        return [f"z{j}" for j in range(self.k)]

    def validate(self) -> None:
        if self.vocab_size < 1 or self.n_classes < 1 or self.k < 0 or self.n_examples < 1:
            raise ConfigError("vocab_size, n_classes, n_examples must be >= 1 and k >= 0")
        for name in ("label_signal", "private_signal"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not -1.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [-1, 1], got {self.rho}")
        if self.rho != 0.0 and (self.n_classes < 2 or self.n_classes % 2):
            raise ConfigError(f"rho={self.rho} needs an even number of classes to split labels into two halves")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("need 1 <= min_len <= max_len")
        if self.class_tokens < 1 or self.markers_per_value < 1:
            raise ConfigError("class_tokens and markers_per_value must be >= 1")
        if self.attribute_kind not in ATTRIBUTE_KINDS:
            raise ConfigError(f"attribute_kind must be one of {ATTRIBUTE_KINDS}")
        if self.marker_position not in MARKER_POSITIONS:
            raise ConfigError(f"marker_position must be one of {MARKER_POSITIONS}")
        if len(self.names()) != self.k or len(set(self.names())) != self.k:
            raise ConfigError("attribute_names must list k distinct names")


def synth_generate(cfg: SynthConfig, ratios: Sequence[float] = DEFAULT_RATIOS) -> Corpus:
    """
    Tokens mix class tokens (rate label_signal), noise words, and per-attribute
    marker tokens added with probability private_signal: appended as a
    trailing signature (marker_position="end") or inserted at a random
    position ("anywhere"). z_j copies the
    label half with probability |rho| (flipped for rho < 0), else a fair coin,
    so corr(z_j, label half) = rho.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n, C = cfg.n_examples, cfg.n_classes
    y = rng.integers(C, size=n)
    y_half = (y >= C // 2).astype(np.int64) if C >= 2 else np.zeros(n, dtype=np.int64)
    z = np.zeros((n, cfg.k), dtype=np.int64)
    for j in range(cfg.k):
        copy = rng.random(n) < abs(cfg.rho)
        coin = rng.integers(2, size=n)
        target = y_half if cfg.rho >= 0 else 1 - y_half
        z[:, j] = np.where(copy, target, coin)

    examples: List[Example] = []
    splits = assign_splits(n, cfg.seed, ratios)
    for i in range(n):
        length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        tokens: List[str] = []
        for _ in range(length):
            if rng.random() < cfg.label_signal:
                tokens.append(f"c{y[i]}t{int(rng.integers(cfg.class_tokens))}")
            else:
                tokens.append(f"w{int(rng.integers(cfg.vocab_size))}")
        for j in range(cfg.k):
            if rng.random() < cfg.private_signal:
                if cfg.marker_position == "end":
                    tokens.append(f"z{j}v{z[i, j]}m{int(rng.integers(cfg.markers_per_value))}")
                else:
                    pos = int(rng.integers(len(tokens) + 1))
                    tokens.insert(pos, f"z{j}v{z[i, j]}m{int(rng.integers(cfg.markers_per_value))}")
        examples.append(Example(text=" ".join(tokens), y=int(y[i]), z=tuple(int(v) for v in z[i]),
                                split=splits[i]))

    schema = AttributeSchema(tuple(cfg.names()), tuple([cfg.attribute_kind] * cfg.k))
    labels = [f"class{c}" for c in range(C)]
    return Corpus(examples=examples, labels=labels, schema=schema)
