# src/app/schemas.py

from __future__ import annotations

import os
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from src.core.data import ATTRIBUTE_KINDS, normalize_setting
from src.core.nn import GRID_DIMS
from src.core.training import REGIMES

CELL_STATES = ("pending", "running", "done", "failed")


class ExperimentSpec(BaseModel):
    """
    One grid request: every (regime, d, seed) cell is trained and attacked.
    `train` / `attack` carry extra TrainConfig / AttackConfig keys.
    """
    corpus: str = Field(..., description="JSONL corpus path")
    out: str = Field(..., description="Output directory for cells, status and summary")
    regimes: List[str] = Field(default_factory=lambda: ["standard"])
    dims: List[int] = Field(default_factory=lambda: list(GRID_DIMS))
    seeds: List[int] = Field(default_factory=lambda: [0])
    setting: str = "raw"
    alpha: Optional[float] = None
    beta: Optional[float] = None
    split_seed: int = 0
    attribute_kind: str = "demographic"
    bins: Dict[str, List[float]] = Field(default_factory=dict)
    balance: bool = False
    entity_only: bool = False
    workers: int = Field(0, ge=0, description="0 = one worker per available core")
    train: Dict[str, Any] = Field(default_factory=dict)
    attack: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("regimes")
    @classmethod
    def _known_regimes(cls, v: List[str]) -> List[str]:
        if not v:
            raise ValueError("at least one regime is required")
        bad = [r for r in v if r not in REGIMES]
        if bad:
            raise ValueError(f"unknown regime(s) {bad}; expected {list(REGIMES)}")
        return list(dict.fromkeys(v))

    @field_validator("dims", "seeds")
    @classmethod
    def _non_empty_ints(cls, v: List[int]) -> List[int]:
        if not v or any(x < 0 for x in v):
            raise ValueError("need a non-empty list of non-negative integers")
        return list(dict.fromkeys(v))

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, v: List[int]) -> List[int]:
        if any(x < 1 for x in v):
            raise ValueError("state dimensions must be >= 1")
        return v

    @field_validator("setting")
    @classmethod
    def _setting(cls, v: str) -> str:
        return normalize_setting(v)

    @field_validator("attribute_kind")
    @classmethod
    def _kind(cls, v: str) -> str:
        if v not in ATTRIBUTE_KINDS:
            raise ValueError(f"attribute_kind must be one of {list(ATTRIBUTE_KINDS)}")
        return v

    @field_validator("bins")
    @classmethod
    def _bins(cls, v: Dict[str, List[float]]) -> Dict[str, List[float]]:
        for name, pair in v.items():
            if len(pair) != 2 or pair[0] > pair[1]:
                raise ValueError(f"bins for {name!r} must be [low, high] with low <= high")
        return v

    @model_validator(mode="after")
    def _paths_exist(self) -> "ExperimentSpec":
        if not os.path.isfile(self.corpus):
            raise ValueError(f"corpus not found: {self.corpus}")
        return self

    def cell_count(self) -> int:
        return len(self.regimes) * len(self.dims) * len(self.seeds)


class PrivacyReport(BaseModel):
    """
    Phase-3 outcome for one trained main model.
    Accuracies and privacy are fractions in [0, 1].
    """
    regime: str
    d: int
    setting: str
    seed: int
    mode: str  # demographic | entity

    main_accuracy: float = Field(..., ge=0.0, le=1.0)
    main_baseline_accuracy: float = Field(..., ge=0.0, le=1.0)
    main_epoch: int
    main_dev_accuracy: float

    attribute_accuracies: Dict[str, float] = Field(default_factory=dict)
    f_score: Optional[float] = None
    privacy: float = Field(..., ge=0.0, le=1.0)
    attacker_epoch: int
    attacker_dev_privacy: float

    baseline_accuracies: Dict[str, float] = Field(default_factory=dict)
    baseline_privacy: float = Field(..., ge=0.0, le=1.0)
    upper_bound_accuracies: Optional[Dict[str, float]] = None
    shuffled: bool = False

    def to_flat(self) -> Dict[str, Any]:
        """Nested maps become dotted keys, e.g. attribute_accuracies.gender."""
        out: Dict[str, Any] = {}
        for key, value in self.model_dump().items():
            if isinstance(value, dict):
                for sub, v in value.items():
                    out[f"{key}.{sub}"] = v
            else:
                out[key] = value
        return out


class CellStatus(BaseModel):
    cell: str
    regime: str
    d: int
    seed: int
    status: str = "pending"  # pending, running, done, failed
    message: Optional[str] = None
    report_path: Optional[str] = None

    @field_validator("status")
    @classmethod
    def _state(cls, v: str) -> str:
        if v not in CELL_STATES:
            raise ValueError(f"status must be one of {list(CELL_STATES)}")
        return v


class GridStatus(BaseModel):
    """
    Grid-wide status, stored as grid_status.json in the output directory.
    """
    job_id: str
    status: str  # pending, running, done, failed
    message: Optional[str] = None
    cells: List[CellStatus] = Field(default_factory=list)

    def failed(self) -> List[CellStatus]:
        return [c for c in self.cells if c.status == "failed"]


class SummaryRow(BaseModel):
    label: str
    regime: Optional[str] = None
    d: Optional[int] = None
    seeds: int = 0
    main: float
    privacy: float
    delta_main: Optional[float] = None
    delta_privacy: Optional[float] = None
