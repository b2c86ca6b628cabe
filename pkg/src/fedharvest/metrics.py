"""Per-epoch evaluation and energy accounting.

One row per epoch: classification quality of the global model (macro F1 on
the held-out test set), network-mean version age, and the cumulative energy
ledger. The CSV schema is identical across policies so runs can be compared
row by row under paired seeds.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

from .datagen import Dataset
from .learner import MLPParams, forward

CSV_COLUMNS = (
    "run_id",
    "policy",
    "seed",
    "alpha",
    "p_bc",
    "epoch",
    "macro_f1",
    "mean_vaoi",
    "cum_energy",
    "trainings_started",
    "transmissions",
    "participants",
)


def macro_f1(predictions: np.ndarray, truth: np.ndarray, num_classes: int) -> float:
    """Unweighted mean of per-class F1.

    A class absent from both predictions and truth has an empty confusion
    row; it contributes 0 rather than propagating a division by zero.
    """
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape:
        raise ValueError(
            f"prediction/truth length mismatch: {predictions.shape} vs {truth.shape}"
        )
    scores = []
    for c in range(num_classes):
        tp = int(np.sum((predictions == c) & (truth == c)))
        fp = int(np.sum((predictions == c) & (truth != c)))
        fn = int(np.sum((predictions != c) & (truth == c)))
        denom = 2 * tp + fp + fn
        scores.append(0.0 if denom == 0 else 2 * tp / denom)
    return float(np.mean(scores))


def evaluate(params: MLPParams, test: Dataset) -> float:
    """Macro F1 of argmax predictions on a labeled dataset."""
    logits, _ = forward(params, test.inputs)
    return macro_f1(np.argmax(logits, axis=1), test.labels, test.num_classes)


def normalize_energy(values: Iterable[float]) -> np.ndarray:
    """Divide a group of cumulative-energy totals by the group maximum."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot normalize an empty group")
    peak = arr.max()
    if peak <= 0:
        raise ValueError("group maximum must be positive")
    return arr / peak


@dataclass
class EnergyLedger:
    """Network-wide consumption counter, debit-granted events only."""

    kappa: int
    trainings: int = 0
    transmissions: int = 0

    def record_training(self) -> None:
        self.trainings += 1

    def record_transmission(self) -> None:
        self.transmissions += 1

    @property
    def cum_energy(self) -> int:
        return self.kappa * self.trainings + self.transmissions


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    macro_f1: float
    mean_vaoi: float
    cum_energy: int
    trainings_started: int
    transmissions: int
    participants: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.macro_f1 <= 1.0:
            raise ValueError(f"macro_f1 out of [0,1]: {self.macro_f1}")
        if self.mean_vaoi < 0:
            raise ValueError(f"mean_vaoi negative: {self.mean_vaoi}")


@dataclass(frozen=True)
class RunKey:
    """Identity columns shared by every row of one run."""

    run_id: str
    policy: str
    seed: int
    alpha: float
    p_bc: float


def format_row(key: RunKey, m: EpochMetrics) -> list[str]:
    return [
        key.run_id,
        key.policy,
        str(key.seed),
        format(key.alpha, "g"),
        format(key.p_bc, "g"),
        str(m.epoch),
        format(m.macro_f1, ".6f"),
        format(m.mean_vaoi, ".6f"),
        str(m.cum_energy),
        str(m.trainings_started),
        str(m.transmissions),
        str(m.participants),
    ]


def write_rows(fh: IO[str], rows: Iterable[list[str]], header: bool = True) -> None:
    """Emit CSV with a fixed newline so output is byte-stable across platforms."""
    writer = csv.writer(fh, lineterminator="\n")
    if header:
        writer.writerow(CSV_COLUMNS)
    for row in rows:
        if len(row) != len(CSV_COLUMNS):
            raise ValueError(f"row width {len(row)} != schema width {len(CSV_COLUMNS)}")
        writer.writerow(row)


@dataclass
class RunSummary:
    """Final-state digest written next to the per-epoch CSV."""

    key: RunKey
    config: dict
    final: EpochMetrics | None
    diverged: bool = False
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        final = None
        if self.final is not None:
            final = {
                "epoch": self.final.epoch,
                "macro_f1": self.final.macro_f1,
                "mean_vaoi": self.final.mean_vaoi,
                "cum_energy": self.final.cum_energy,
                "trainings_started": self.final.trainings_started,
                "transmissions": self.final.transmissions,
                "participants": self.final.participants,
            }
        payload = {
            "run_id": self.key.run_id,
            "policy": self.key.policy,
            "seed": self.key.seed,
            "alpha": self.key.alpha,
            "p_bc": self.key.p_bc,
            "diverged": self.diverged,
            "config": self.config,
            "final": final,
            **self.extras,
        }
        return json.dumps(payload, indent=2, sort_keys=True)
