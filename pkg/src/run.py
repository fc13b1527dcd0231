# run.py: CLI: synth | train | attack | grid | report
import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from src.app.schemas import ExperimentSpec
from src.app.service import (
    CHECKPOINT_FILE, format_table, load_corpus, parse_bins, run_attack, summarize, write_report, write_summary,
)
from src.app.service_grid import collect_reports, run_grid
from src.core.attack import AttackConfig
from src.core.data import SynthConfig, corpus_summary, synth_generate, write_jsonl
from src.core.errors import ConfigError, ReprPrivacyError
from src.core.training import TrainConfig, load_checkpoint, save_checkpoint, train_main
from src.core.utils import as_bool, as_list, load_json_safe, load_kv_config, save_json

log = logging.getLogger("repr_privacy.cli")

LOAD_KEYS = ("split_seed", "attribute_kind", "bins", "balance", "entity_only")
SPEC_KEYS = set(ExperimentSpec.model_fields)
TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)


# ---------------- config merging ---------------- #
def merged(config_path: Optional[str], flags: Dict[str, Any]) -> Dict[str, Any]:
    """defaults < config file < flags (flags left at None do not override)."""
    raw: Dict[str, Any] = load_kv_config(config_path) if config_path else {}
    raw.update({k: v for k, v in flags.items() if v is not None})
    return raw


def split_load_options(raw: Dict[str, Any]) -> Dict[str, Any]:
    opts = {k: raw.pop(k) for k in LOAD_KEYS if k in raw}
    return {
        "split_seed": int(opts.get("split_seed", 0)),
        "attribute_kind": str(opts.get("attribute_kind", "demographic")),
        "bins": parse_bins(opts["bins"]) if isinstance(opts.get("bins"), str) else dict(opts.get("bins") or {}),
        "balance": as_bool(opts.get("balance", False)),
        "entity_only": as_bool(opts.get("entity_only", False)),
    }


def _load_flags(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "split_seed": args.split_seed,
        "attribute_kind": args.attribute_kind,
        "bins": args.bins,
        "balance": True if args.balance else None,
        "entity_only": True if args.entity_only else None,
    }


# ---------------- subcommands ---------------- #
def cmd_synth(args: argparse.Namespace) -> int:
    raw = merged(args.config, {
        "seed": args.seed, "n_examples": args.n, "n_classes": args.classes, "k": args.k,
        "vocab_size": args.vocab_size, "label_signal": args.label_signal,
        "private_signal": args.private_signal, "rho": args.rho, "attribute_kind": args.attribute_kind,
        "marker_position": args.marker_position,
    })
    cfg = SynthConfig.from_mapping(raw)
    corpus = synth_generate(cfg)
    write_jsonl(corpus, args.out)
    log.info("[SYNTH] %d examples -> %s", len(corpus.examples), args.out)
    print(json.dumps(corpus_summary(corpus), indent=2, sort_keys=True))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    raw = merged(args.config, {
        "regime": args.regime, "d": args.d, "seed": args.seed, "setting": args.setting,
        "alpha": args.alpha, "beta": args.beta, "epochs": args.epochs, "batch_size": args.batch,
        "dropout": args.dropout, "lr": args.lr, "max_chars": args.max_chars,
        "decluster_sign": args.decluster_sign, **_load_flags(args),
    })
    load_opts = split_load_options(raw)
    cfg = TrainConfig.from_mapping(raw)
    corpus = load_corpus(args.corpus, **load_opts)
    out = args.out or os.path.join("runs", f"{cfg.regime}_d{cfg.d}_seed{cfg.seed}", CHECKPOINT_FILE)
    resume_from = load_checkpoint(args.resume) if args.resume else None
    save_json(f"{out}.load.json", load_opts, pretty=True)
    # the checkpoint at `out` is rewritten after every epoch, so an interrupted run can --resume from it
    ckpt = train_main(corpus, cfg, resume_from=resume_from, progress_path=out)
    save_checkpoint(ckpt, out)

    print(f"{'epoch':>5}  {'train_loss':>12}  {'dev_acc':>8}")
    for h in ckpt.history:
        print(f"{int(h['epoch']):>5}  {h['train_loss']:>12.5f}  {h['dev_accuracy']:>8.4f}")
    print(f"selected epoch {ckpt.epoch} (dev accuracy {ckpt.dev_accuracy:.4f}) -> {out}")
    return 0


def cmd_attack(args: argparse.Namespace) -> int:
    raw = merged(args.config, {
        "seed": args.seed, "epochs": args.epochs, "batch_size": args.batch,
        "f_average": args.f_average,
        "shuffle_reprs": True if args.shuffle_reprs else None,
        "upper_bound": True if args.upper_bound else None,
    })
    saved = load_json_safe(Path(f"{args.checkpoint}.load.json"), {})
    flags = {k: v for k, v in _load_flags(args).items() if v is not None}
    load_opts = split_load_options({**saved, **{k: raw.pop(k) for k in LOAD_KEYS if k in raw}, **flags})
    cfg = AttackConfig.from_mapping(raw)
    ckpt = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus, **load_opts)
    out_dir = args.out or os.path.join(os.path.dirname(args.checkpoint) or ".", "attack")
    report = run_attack(ckpt, corpus, cfg, out_dir)
    write_report(report, out_dir)
    print(format_table(summarize([report])), end="")
    return 0


def grid_spec(args: argparse.Namespace) -> ExperimentSpec:
    raw = load_kv_config(args.config) if args.config else {}
    flags = {
        "corpus": args.corpus, "out": args.out, "regimes": args.regimes, "dims": args.dims,
        "seeds": args.seeds, "setting": args.setting, "alpha": args.alpha, "beta": args.beta,
        "workers": args.workers, "epochs": args.epochs, "batch_size": args.batch, **_load_flags(args),
    }
    raw.update({k: v for k, v in flags.items() if v is not None})

    data: Dict[str, Any] = {"train": {}, "attack": {}}
    for key, value in raw.items():
        if key.startswith("attack_"):
            data["attack"][key[len("attack_"):]] = value
        elif key in SPEC_KEYS:
            data[key] = value
        elif key in TRAIN_KEYS:
            data["train"][key] = value
        else:
            raise ConfigError(f"unknown grid config key {key!r}")
    for key, cast in (("regimes", str), ("dims", int), ("seeds", int)):
        if key in data:
            data[key] = as_list(data[key], cast)
    if isinstance(data.get("bins"), str):
        data["bins"] = parse_bins(data["bins"])
    for key in ("balance", "entity_only"):
        if key in data:
            data[key] = as_bool(data[key])
    try:
        return ExperimentSpec.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid grid spec: {e.errors()[0].get('msg', e)}") from None


def cmd_grid(args: argparse.Namespace) -> int:
    spec = grid_spec(args)
    status, table = run_grid(spec, progress=args.progress)
    print(table, end="")
    if status.status != "done":
        for c in status.failed():
            log.error("[ERR] %s: %s", c.cell, c.message)
        return 1
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    reports = collect_reports(args.out)
    if not reports:
        raise ConfigError(f"no completed cell reports under {args.out}")
    print(write_summary(reports, args.out), end="")
    return 0


# ---------------- parser ---------------- #
def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value (or .json) config file; flags win")
    p.add_argument("--seed", type=int)


def _add_load(p: argparse.ArgumentParser) -> None:
    p.add_argument("--split-seed", type=int, dest="split_seed", help="seed of the 80/10/10 split for unsplit corpora")
    p.add_argument("--attribute-kind", dest="attribute_kind", choices=["demographic", "entity"])
    p.add_argument("--bins", help="numeric attributes to binarize, e.g. age:35:45")
    p.add_argument("--balance", action="store_true", help="equalize private-value combinations per split")
    p.add_argument("--entity-only", dest="entity_only", action="store_true",
                   help="keep examples with at least one entity flag")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--setting", choices=["raw", "demo", "+demo"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="repr-privacy",
                                 description="Train text classifiers and measure what their representations leak.")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("-q", "--quiet", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic JSONL corpus")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--vocab-size", type=int, dest="vocab_size")
    p.add_argument("--label-signal", type=float, dest="label_signal")
    p.add_argument("--private-signal", type=float, dest="private_signal")
    p.add_argument("--rho", type=float)
    p.add_argument("--marker-position", dest="marker_position", choices=["end", "anywhere"])
    p.add_argument("--attribute-kind", dest="attribute_kind", choices=["demographic", "entity"])
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="Phase 1: train the main classifier")
    _add_common(p)
    _add_model(p)
    _add_load(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--regime", choices=["standard", "multidetask", "advgen", "decluster"])
    p.add_argument("--d", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-chars", type=int, dest="max_chars")
    p.add_argument("--decluster-sign", dest="decluster_sign", choices=["as-printed", "negated"])
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--resume", help="checkpoint of an earlier run of the same config to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="Phases 2-3: export representations, train the attacker, report")
    _add_common(p)
    _add_load(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--f-average", dest="f_average", choices=["micro", "macro"])
    p.add_argument("--shuffle-reprs", dest="shuffle_reprs", action="store_true")
    p.add_argument("--upper-bound", dest="upper_bound", action="store_true")
    p.add_argument("--out", help="report directory (default: <checkpoint dir>/attack)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("grid", help="train + attack every (regime, d, seed) cell")
    p.add_argument("--config", help="flat key=value grid config; attack_* keys go to the attacker")
    _add_model(p)
    _add_load(p)
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--regimes")
    p.add_argument("--dims")
    p.add_argument("--seeds")
    p.add_argument("--workers", type=int)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("report", help="re-render the summary table of a grid directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ReprPrivacyError, FileNotFoundError) as e:
        log.error("[ERR] %s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
