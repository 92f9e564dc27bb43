"""Success-rate bookkeeping over trial batches, chance-adjusted agreement and the metrics table."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable

from ..camosim import CHANCE, TrialOutcome

METRIC_COLUMNS = ("task", "variant", "SR", "DSR", "MSR", "kappa", "CSR", "n", "seed")


def cohen_kappa(p_o: float, p_e: float) -> float:
    if not 0.0 <= p_e < 1.0:
        raise ValueError("chance level must lie in [0, 1)")
    return (p_o - p_e) / (1.0 - p_e)


@dataclass(frozen=True)
class MetricsReport:
    """Counts first; rates are derived. DSR and kappa are None without any manipulation success."""
    n: int
    manipulation: int
    both: int
    chance: float
    csr_correct: int | None = None
    csr_total: int | None = None

    def __post_init__(self):
        if not 0 <= self.both <= self.manipulation <= self.n:
            raise ValueError("inconsistent outcome counts")

    @classmethod
    def from_outcomes(cls, outcomes: Iterable[TrialOutcome], chance: float) -> "MetricsReport":
        outcomes = list(outcomes)
        manip = sum(1 for o in outcomes if o.manipulation_success)
        both = sum(1 for o in outcomes if o.manipulation_success and o.decision_success)
        return cls(len(outcomes), manip, both, chance)

    @classmethod
    def for_task(cls, task: str, outcomes: Iterable[TrialOutcome]) -> "MetricsReport":
        return cls.from_outcomes(outcomes, CHANCE[task][0])

    def with_probe(self, correct: int, total: int) -> "MetricsReport":
        return MetricsReport(self.n, self.manipulation, self.both, self.chance, correct, total)

    @property
    def SR(self) -> Fraction:
        return Fraction(self.both, self.n) if self.n else Fraction(0)

    @property
    def MSR(self) -> Fraction:
        return Fraction(self.manipulation, self.n) if self.n else Fraction(0)

    @property
    def DSR(self) -> Fraction | None:
        return Fraction(self.both, self.manipulation) if self.manipulation else None

    @property
    def kappa(self) -> float | None:
        dsr = self.DSR
        return None if dsr is None else cohen_kappa(float(dsr), self.chance)

    @property
    def CSR(self) -> Fraction | None:
        return Fraction(self.csr_correct, self.csr_total) if self.csr_total else None

    def row(self, task: str, variant: str, seed: int) -> dict:
        def fmt(v):
            return "NA" if v is None else f"{float(v):.6f}"
        return {"task": task, "variant": variant, "SR": fmt(self.SR), "DSR": fmt(self.DSR),
                "MSR": fmt(self.MSR), "kappa": fmt(self.kappa), "CSR": fmt(self.CSR),
                "n": self.n, "seed": seed}


def write_metrics(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_metrics(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))
