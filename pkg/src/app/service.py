# src/app/service.py

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from src.core.attack import AttackConfig, attack_representations, evaluate_accuracy, save_attacker, trained_upper_bound
from src.core.data import SPLITS, Corpus, balance_private, filter_entity_present, load_jsonl, most_frequent_baseline
from src.core.errors import ConfigError
from src.core.training import (
    REGIMES, MainCheckpoint, TrainConfig,
    export_representations, save_checkpoint, save_representations, train_main,
)
from src.core.utils import dump_kv, ensure_dir, save_json, write_text

from .schemas import PrivacyReport, SummaryRow

log = logging.getLogger("repr_privacy.service")

CHECKPOINT_FILE = "checkpoint.zip"
ATTACKER_FILE = "attacker.zip"
REPORT_TXT = "report.txt"
REPORT_JSON = "report.json"
REPORT_TABLE = "table.txt"


# ---------------------------------------------------------------------------
# Corpus loading
# ---------------------------------------------------------------------------

def load_corpus(path: str, split_seed: int = 0, attribute_kind: str = "demographic",
                bins: Optional[Mapping[str, Iterable[float]]] = None,
                balance: bool = False, entity_only: bool = False) -> Corpus:
    """
    Load a JSONL corpus and apply the optional rebalancing / entity filters.
    """
    bin_pairs = {name: tuple(float(x) for x in pair) for name, pair in (bins or {}).items()}
    corpus = load_jsonl(path, seed=split_seed, attribute_kind=attribute_kind, bins=bin_pairs)
    if entity_only:
        corpus = filter_entity_present(corpus)
    if balance:
        corpus = balance_private(corpus, seed=split_seed)
    return corpus


def parse_bins(raw: Optional[str]) -> Dict[str, List[float]]:
    """`age:35:45,income:10:20` -> {"age": [35.0, 45.0], ...}"""
    out: Dict[str, List[float]] = {}
    if not raw:
        return out
    for part in str(raw).split(","):
        part = part.strip()
        if not part:
            continue
        bits = part.split(":")
        if len(bits) != 3:
            raise ConfigError(f"bins entry {part!r} must look like name:low:high")
        try:
            out[bits[0]] = [float(bits[1]), float(bits[2])]
        except ValueError:
            raise ConfigError(f"bins entry {part!r} has non-numeric thresholds") from None
    return out


# ---------------------------------------------------------------------------
# Phases 2 + 3
# ---------------------------------------------------------------------------

def run_attack(ckpt: MainCheckpoint, corpus: Corpus, attack_cfg: AttackConfig,
               out_dir: Optional[str] = None) -> PrivacyReport:
    """
    Export r(x) for every split, train a fresh attacker, score the test split,
    and attach the most-frequent baselines.
    """
    reprs = {split: export_representations(ckpt, corpus, split) for split in SPLITS}
    if out_dir:
        ensure_dir(out_dir)
        for split, rs in reprs.items():
            save_representations(rs, os.path.join(out_dir, f"reprs_{split}.txt"))

    outcome = attack_representations(reprs["train"], reprs["dev"], reprs["test"], ckpt.schema, attack_cfg)
    if out_dir:
        save_attacker(outcome.attacker, os.path.join(out_dir, ATTACKER_FILE))

    main_acc = evaluate_accuracy(ckpt, corpus, "test")
    _, main_base = most_frequent_baseline(corpus.split("train"), corpus.split("test"))
    upper = trained_upper_bound(corpus, ckpt.config) if attack_cfg.upper_bound else None

    return PrivacyReport(
        regime=ckpt.config.regime,
        d=ckpt.config.d,
        setting=ckpt.config.setting,
        seed=ckpt.config.seed,
        mode=outcome.mode,
        main_accuracy=main_acc,
        main_baseline_accuracy=main_base,
        main_epoch=ckpt.epoch,
        main_dev_accuracy=ckpt.dev_accuracy,
        attribute_accuracies=outcome.accuracies,
        f_score=outcome.f_score,
        privacy=outcome.privacy,
        attacker_epoch=outcome.attacker.epoch,
        attacker_dev_privacy=outcome.attacker.dev_privacy,
        baseline_accuracies=outcome.baseline_accuracies,
        baseline_privacy=outcome.baseline_privacy,
        upper_bound_accuracies=upper,
        shuffled=attack_cfg.shuffle_reprs,
    )


def write_report(report: PrivacyReport, out_dir: str) -> Tuple[str, str]:
    ensure_dir(out_dir)
    txt_path = os.path.join(out_dir, REPORT_TXT)
    json_path = os.path.join(out_dir, REPORT_JSON)
    write_text(txt_path, dump_kv(report.to_flat()))
    write_text(os.path.join(out_dir, REPORT_TABLE), format_table(summarize([report])))
    save_json(json_path, report.model_dump(), pretty=True)
    log.info("[REPORT] %s", json_path)
    return txt_path, json_path


def run_cell(corpus: Corpus, train_cfg: TrainConfig, attack_cfg: AttackConfig, out_dir: str) -> PrivacyReport:
    """
    One full protocol run: train -> checkpoint -> export -> attack -> report.
    """
    ckpt = train_main(corpus, train_cfg)
    save_checkpoint(ckpt, os.path.join(out_dir, CHECKPOINT_FILE))
    report = run_attack(ckpt, corpus, attack_cfg, out_dir)
    write_report(report, out_dir)
    return report


# ---------------------------------------------------------------------------
# Summary table
# ---------------------------------------------------------------------------

def _mean(values: List[float]) -> float:
    return sum(values) / len(values)


def summarize(reports: Iterable[PrivacyReport]) -> List[SummaryRow]:
    """
    Average over seeds per (regime, d); a leading baseline row; deltas against
    the standard regime at the same d (None when it was not run).
    """
    reports = list(reports)
    if not reports:
        return []
    groups: Dict[Tuple[str, int], List[PrivacyReport]] = {}
    for r in reports:
        groups.setdefault((r.regime, r.d), []).append(r)

    rows = [SummaryRow(
        label="baseline",
        seeds=len({r.seed for r in reports}),
        main=_mean([r.main_baseline_accuracy for r in reports]),
        privacy=_mean([r.baseline_privacy for r in reports]),
    )]
    order = {name: i for i, name in enumerate(REGIMES)}
    for regime, d in sorted(groups, key=lambda k: (k[1], order.get(k[0], len(order)))):
        cell = groups[(regime, d)]
        main = _mean([r.main_accuracy for r in cell])
        priv = _mean([r.privacy for r in cell])
        std = groups.get(("standard", d))
        delta_main = delta_priv = None
        if std is not None:
            delta_main = main - _mean([r.main_accuracy for r in std])
            delta_priv = priv - _mean([r.privacy for r in std])
        rows.append(SummaryRow(label=regime, regime=regime, d=d, seeds=len(cell), main=main, privacy=priv,
                               delta_main=delta_main, delta_privacy=delta_priv))
    return rows


def _pct(x: Optional[float], signed: bool = False) -> str:
    if x is None:
        return "n/a"
    return f"{100.0 * x:+.1f}" if signed else f"{100.0 * x:.1f}"


def format_table(rows: List[SummaryRow]) -> str:
    """Aligned text table: Main / Priv. in percent and signed differences with standard."""
    header = ["regime", "d", "seeds", "Main", "Priv.", "dMain", "dPriv."]
    body = [[
        row.label,
        "-" if row.d is None else str(row.d),
        str(row.seeds),
        _pct(row.main),
        _pct(row.privacy),
        "" if row.regime is None else _pct(row.delta_main, signed=True),
        "" if row.regime is None else _pct(row.delta_privacy, signed=True),
    ] for row in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]

    def line(cells: List[str]) -> str:
        first = cells[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return "  ".join([first] + rest).rstrip()

    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in body]) + "\n"


def write_summary(reports: Iterable[PrivacyReport], out_dir: str) -> str:
    rows = summarize(reports)
    table = format_table(rows)
    write_text(os.path.join(out_dir, "summary.txt"), table)
    save_json(os.path.join(out_dir, "summary.json"), [r.model_dump() for r in rows], pretty=True)
    log.info("[REPORT] summary with %d row(s) in %s", len(rows), out_dir)
    return table


def read_report(path: Path) -> PrivacyReport:
    return PrivacyReport.model_validate_json(path.read_text(encoding="utf-8"))
