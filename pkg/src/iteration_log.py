"""Per-iteration ADMM diagnostics collected through the reconstruct callback."""

from dataclasses import asdict
from pathlib import Path

import pandas as pd

from src.admm_tvds import IterationRecord

LOG_COLUMNS = [
    "stage",
    "iteration",
    "mu",
    "tau",
    "primal_residual",
    "dual_residual",
    "objective",
    "merit",
    "reference_refreshed",
]


class IterationLog:
    """Callable sink for IterationRecord; one CSV row per ADMM iteration."""

    def __init__(self) -> None:
        self.records: list[IterationRecord] = []

    def __call__(self, record: IterationRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records], columns=LOG_COLUMNS)

    def write_csv(self, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path
