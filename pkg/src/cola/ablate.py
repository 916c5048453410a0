"""Named ablation matrices over the fusion and fine-tuning components."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .config import RunConfig
from .data import Dataset
from .metrics import EvaluationReport, evaluate
from .trainer import ModelState, StageTwoToggles, train_stage1, train_stage2


@dataclass(frozen=True)
class AblationRow:
    label: str
    lqa: bool = True  # quality-weighted fusion on/off (components matrix)
    second_stage: StageTwoToggles | None = None  # None: keep the stage-one model

    def toggle_columns(self, matrix: str) -> dict[str, bool]:
        t = self.second_stage
        if matrix == "components":
            return {"lqa": self.lqa, "cd": t is not None}
        cols = {
            "copy": bool(t and t.copy),
            "zconv": bool(t and t.zconv),
            "freeze": bool(t and t.freeze),
            "md": bool(t and t.md),
        }
        if matrix == "complete":
            return {"at": t is not None, **cols}
        return cols


def _t(copy: bool, zconv: bool, freeze: bool, md: bool) -> StageTwoToggles:
    return StageTwoToggles(copy=copy, zconv=zconv, freeze=freeze, md=md)


MATRICES: dict[str, list[AblationRow]] = {
    # fusion weighting and the fine-tuning stage, independently
    "components": [
        AblationRow("baseline", lqa=False),
        AblationRow("baseline+lqa", lqa=True),
        AblationRow("baseline+cd", lqa=False, second_stage=_t(True, True, True, True)),
        AblationRow("baseline+lqa+cd", lqa=True, second_stage=_t(True, True, True, True)),
    ],
    # structural pieces of the second stage
    "cd": [
        AblationRow("a", second_stage=None),
        AblationRow("b", second_stage=_t(True, False, False, False)),
        AblationRow("c", second_stage=_t(True, True, False, False)),
        AblationRow("d", second_stage=_t(False, False, False, True)),
        AblationRow("e", second_stage=_t(True, True, False, True)),
        AblationRow("f", second_stage=_t(True, True, True, False)),
        AblationRow("g", second_stage=_t(True, False, True, True)),
        AblationRow("h", second_stage=_t(True, True, True, True)),
    ],
    # does extra training alone explain the gains on complete pairs
    "complete": [
        AblationRow("a", second_stage=None),
        AblationRow("b", second_stage=_t(False, False, False, False)),
        AblationRow("c", second_stage=_t(False, False, False, True)),
        AblationRow("d", second_stage=_t(True, True, False, False)),
        AblationRow("e", second_stage=_t(True, True, True, True)),
    ],
}


def run_matrix(
    matrix: str,
    cfg: RunConfig,
    train_ds: Dataset,
    test_ds: Dataset,
    log_dir: str | Path | None = None,
) -> list[tuple[str, dict[str, bool], EvaluationReport]]:
    """Train and score every row of a matrix; stage-one models are shared.

    Returns (label, toggle columns, report) triples in row order.
    """
    if matrix not in MATRICES:
        raise ValueError(f"unknown matrix {matrix!r}, expected one of {sorted(MATRICES)}")
    log_dir = Path(log_dir) if log_dir is not None else None

    def log_path(tag: str) -> Path | None:
        return log_dir / f"{matrix}_{tag}.csv" if log_dir is not None else None

    stage1_cache: dict[bool, ModelState] = {}

    def stage1(lqa_on: bool) -> ModelState:
        if lqa_on not in stage1_cache:
            row_cfg = replace(cfg, lqa=replace(cfg.lqa, enabled=lqa_on))
            stage1_cache[lqa_on] = train_stage1(row_cfg, train_ds, log_path(f"stage1_lqa{int(lqa_on)}"))
        return stage1_cache[lqa_on]

    rows = []
    for row in MATRICES[matrix]:
        state = stage1(row.lqa)
        if row.second_stage is not None:
            state = train_stage2(state, train_ds, row.second_stage, log_path(row.label))
        rows.append((row.label, row.toggle_columns(matrix), evaluate(state, test_ds)))
    return rows
