# src/app/service_grid.py

from __future__ import annotations

import logging
import os
import shutil
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from src.core.attack import AttackConfig
from src.core.training import TrainConfig
from src.core.utils import load_json_safe, save_json, sha256_bytes

from .schemas import CellStatus, ExperimentSpec, GridStatus, PrivacyReport
from .service import REPORT_JSON, load_corpus, read_report, run_cell, write_summary

try:
    from tqdm import tqdm
except ImportError:  # progress bar is optional
    tqdm = None

log = logging.getLogger("repr_privacy.grid")

STATUS_FILENAME = "grid_status.json"
CELL_STATUS_FILENAME = "status.json"


# ---------------------------------------------------------------------------
# Status file helpers
# ---------------------------------------------------------------------------

def _write_status(out: Path, status: GridStatus) -> None:
    save_json(str(out / STATUS_FILENAME), status.model_dump(), pretty=True)


def read_grid_status(out: str) -> Optional[GridStatus]:
    raw = load_json_safe(Path(out) / STATUS_FILENAME, None)
    return GridStatus.model_validate(raw) if raw else None


def _write_cell_status(cell_path: Path, cell: CellStatus) -> None:
    save_json(str(cell_path / CELL_STATUS_FILENAME), cell.model_dump(), pretty=True)


# ---------------------------------------------------------------------------
# Cell planning
# ---------------------------------------------------------------------------

def cell_id(regime: str, d: int, seed: int) -> str:
    return f"{regime}/d{d}/seed{seed}"


def cell_dir(out: str, regime: str, d: int, seed: int) -> Path:
    return Path(out) / regime / f"d{d}" / f"seed{seed}"


def plan_cells(spec: ExperimentSpec) -> List[CellStatus]:
    return [
        CellStatus(cell=cell_id(regime, d, seed), regime=regime, d=d, seed=seed)
        for regime in spec.regimes
        for d in spec.dims
        for seed in spec.seeds
    ]


def job_id(spec: ExperimentSpec) -> str:
    # stable across reruns of the same request, so status files stay byte-identical
    return sha256_bytes(spec.model_dump_json().encode("utf-8"))[:12]


def build_configs(spec: ExperimentSpec, regime: str, d: int, seed: int) -> Tuple[TrainConfig, AttackConfig]:
    """
    Cell configs: spec.train / spec.attack extras, then the cell coordinates,
    then the ExperimentSpec alpha / beta overrides.
    """
    raw: Dict[str, Any] = dict(spec.train)
    raw.update(regime=regime, d=d, seed=seed, setting=spec.setting)
    if spec.alpha is not None:
        raw["alpha"] = spec.alpha
    if spec.beta is not None:
        raw["beta"] = spec.beta
    attack_raw: Dict[str, Any] = {"seed": seed}
    attack_raw.update(spec.attack)
    return TrainConfig.from_mapping(raw), AttackConfig.from_mapping(attack_raw)


# ---------------------------------------------------------------------------
# Worker entry point
# ---------------------------------------------------------------------------

def execute_cell(spec_data: Dict[str, Any], regime: str, d: int, seed: int) -> Dict[str, Any]:
    """
    Run one cell inside `<cell>.tmp`, then rename it into place.
    Failures stay in the tmp directory with a failed status.json.
    """
    cell = CellStatus(cell=cell_id(regime, d, seed), regime=regime, d=d, seed=seed,
                      status="running", message="training")
    tmp: Optional[Path] = None
    try:
        spec = ExperimentSpec.model_validate(spec_data)
        final = cell_dir(spec.out, regime, d, seed)
        tmp = final.with_name(final.name + ".tmp")
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        _write_cell_status(tmp, cell)

        train_cfg, attack_cfg = build_configs(spec, regime, d, seed)
        corpus = load_corpus(spec.corpus, spec.split_seed, spec.attribute_kind, spec.bins,
                             spec.balance, spec.entity_only)
        log.info("[CELL] %s start", cell.cell)
        run_cell(corpus, train_cfg, attack_cfg, str(tmp))
        cell.status = "done"
        cell.message = "completed"
        cell.report_path = str(final / REPORT_JSON)
        _write_cell_status(tmp, cell)
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
        log.info("[CELL] %s done", cell.cell)
    except Exception as e:
        cell.status = "failed"
        cell.message = f"{type(e).__name__}: {e}"
        cell.report_path = None
        if tmp is not None and tmp.is_dir():
            _write_cell_status(tmp, cell)
        log.error("[ERR] cell %s failed: %s", cell.cell, cell.message)
    return cell.model_dump()


# ---------------------------------------------------------------------------
# Grid driver
# ---------------------------------------------------------------------------

def run_grid(spec: ExperimentSpec, progress: bool = False) -> Tuple[GridStatus, str]:
    """
    Run every (regime, d, seed) cell not already completed, in a process pool.
    Returns the final GridStatus and the rendered summary table.
    """
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    # fail fast on an unreadable corpus before any worker starts
    load_corpus(spec.corpus, spec.split_seed, spec.attribute_kind, spec.bins, spec.balance, spec.entity_only)

    cells = plan_cells(spec)
    todo: List[CellStatus] = []
    for c in cells:
        report = cell_dir(spec.out, c.regime, c.d, c.seed) / REPORT_JSON
        if report.exists():
            c.status, c.message, c.report_path = "done", "completed", str(report)
            log.info("[GRID] skip %s (already complete)", c.cell)
        else:
            todo.append(c)

    status = GridStatus(job_id=job_id(spec), status="running",
                        message=f"Running {len(cells)} cell(s)", cells=cells)
    _write_status(out, status)
    log.info("[GRID] %d cell(s), %d to run", len(cells), len(todo))

    index = {c.cell: i for i, c in enumerate(cells)}
    spec_data = spec.model_dump()
    bar = tqdm(total=len(todo), desc="grid", unit="cell") if (tqdm is not None and progress) else None

    def record(result: Dict[str, Any]) -> None:
        status.cells[index[result["cell"]]] = CellStatus.model_validate(result)
        _write_status(out, status)
        if bar is not None:
            bar.update(1)

    workers = spec.workers or os.cpu_count() or 1
    workers = max(1, min(workers, len(todo)))
    if workers == 1:
        for c in todo:
            record(execute_cell(spec_data, c.regime, c.d, c.seed))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(execute_cell, spec_data, c.regime, c.d, c.seed): c for c in todo}
            for fut in as_completed(futures):
                c = futures[fut]
                try:
                    result = fut.result()
                except Exception as e:  # worker process died
                    result = {**c.model_dump(), "status": "failed", "message": f"{type(e).__name__}: {e}"}
                record(result)
    if bar is not None:
        bar.close()

    failed = status.failed()
    status.status = "failed" if failed else "done"
    status.message = f"{len(cells) - len(failed)} of {len(cells)} cell(s) done, {len(failed)} failed"
    _write_status(out, status)

    reports = [read_report(Path(c.report_path)) for c in status.cells if c.status == "done" and c.report_path]
    table = write_summary(reports, str(out))
    return status, table


def collect_reports(out: str) -> List[PrivacyReport]:
    """Completed cell reports under `out`, ignoring unfinished `.tmp` cells."""
    paths = sorted(p for p in Path(out).glob(f"*/d*/seed*/{REPORT_JSON}") if not p.parent.name.endswith(".tmp"))
    return [read_report(p) for p in paths]
