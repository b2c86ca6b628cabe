"""Scoring, energy accounting, and the run output schema."""

from __future__ import annotations

import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import f1_score

from fedharvest.metrics import (
    CSV_COLUMNS,
    EnergyLedger,
    EpochMetrics,
    RunKey,
    RunSummary,
    format_row,
    macro_f1,
    normalize_energy,
    write_rows,
)


class TestMacroF1:
    def test_perfect_prediction(self) -> None:
        truth = np.array([0, 1, 2, 3, 0, 1])
        assert macro_f1(truth, truth, 4) == 1.0

    def test_hand_binary_case(self) -> None:
        # class 0: tp=1 fp=1 fn=1 -> 0.5; class 1 symmetric -> 0.5
        pred = np.array([0, 0, 1, 1])
        truth = np.array([0, 1, 0, 1])
        assert macro_f1(pred, truth, 2) == 0.5

    def test_collapsed_predictor_scores_low(self) -> None:
        truth = np.tile(np.arange(4), 25)
        pred = np.zeros_like(truth)
        # class 0: f1 = 2*25/(2*25+75) = 0.4; others 0
        assert macro_f1(pred, truth, 4) == pytest.approx(0.1)

    def test_absent_class_contributes_zero_not_nan(self) -> None:
        pred = np.array([0, 0])
        truth = np.array([0, 0])
        assert macro_f1(pred, truth, 3) == pytest.approx(1.0 / 3.0)

    def test_length_mismatch_rejected(self) -> None:
        with pytest.raises(ValueError):
            macro_f1(np.zeros(3, int), np.zeros(4, int), 2)

    @settings(max_examples=80, deadline=None)
    @given(
        seed=st.integers(min_value=0, max_value=2**32 - 1),
        n=st.integers(min_value=1, max_value=60),
        c=st.integers(min_value=2, max_value=5),
    )
    def test_matches_reference_implementation(self, seed: int, n: int, c: int) -> None:
        rng = np.random.default_rng(seed)
        pred = rng.integers(0, c, size=n)
        truth = rng.integers(0, c, size=n)
        want = f1_score(
            truth, pred, labels=list(range(c)), average="macro", zero_division=0
        )
        assert macro_f1(pred, truth, c) == pytest.approx(want, abs=1e-12)

    def test_label_permutation_invariance(self) -> None:
        rng = np.random.default_rng(4)
        pred = rng.integers(0, 3, size=40)
        truth = rng.integers(0, 3, size=40)
        perm = np.array([2, 0, 1])
        assert macro_f1(perm[pred], perm[truth], 3) == pytest.approx(
            macro_f1(pred, truth, 3)
        )


class TestNormalizeEnergy:
    def test_divides_by_group_maximum(self) -> None:
        got = normalize_energy([50.0, 80.0, 100.0, 40.0])
        assert got.tolist() == [0.5, 0.8, 1.0, 0.4]

    def test_single_value_becomes_one(self) -> None:
        assert normalize_energy([123.0]).tolist() == [1.0]

    def test_idempotent(self) -> None:
        once = normalize_energy([3.0, 6.0, 12.0])
        assert np.array_equal(normalize_energy(once), once)

    def test_degenerate_groups_rejected(self) -> None:
        with pytest.raises(ValueError):
            normalize_energy([])
        with pytest.raises(ValueError):
            normalize_energy([0.0, 0.0])


class TestEnergyLedger:
    def test_unit_costs(self) -> None:
        ledger = EnergyLedger(kappa=20)
        assert ledger.cum_energy == 0
        ledger.record_training()
        ledger.record_transmission()
        assert ledger.cum_energy == 21
        ledger.record_training()
        assert (ledger.trainings, ledger.transmissions) == (2, 1)
        assert ledger.cum_energy == 41


class TestEpochMetrics:
    def test_range_validation(self) -> None:
        with pytest.raises(ValueError):
            EpochMetrics(0, 1.5, 0.0, 0, 0, 0, 0)
        with pytest.raises(ValueError):
            EpochMetrics(0, 0.5, -0.1, 0, 0, 0, 0)

    def test_frozen(self) -> None:
        row = EpochMetrics(0, 0.5, 1.0, 21, 1, 1, 1)
        with pytest.raises(AttributeError):
            row.epoch = 1  # type: ignore[misc]


class TestRowFormat:
    KEY = RunKey("vaoi-a0.1-p0.1-s1", "vaoi", 1, 0.1, 0.1)
    ROW = EpochMetrics(7, 0.8125, 1.75, 201, 10, 1, 1)

    def test_column_order_and_formats(self) -> None:
        got = format_row(self.KEY, self.ROW)
        assert got == [
            "vaoi-a0.1-p0.1-s1", "vaoi", "1", "0.1", "0.1",
            "7", "0.812500", "1.750000", "201", "10", "1", "1",
        ]
        assert len(got) == len(CSV_COLUMNS)

    def test_write_rows_emits_stable_csv(self) -> None:
        buf = io.StringIO()
        write_rows(buf, [format_row(self.KEY, self.ROW)])
        lines = buf.getvalue().split("\n")
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert lines[1].startswith("vaoi-a0.1-p0.1-s1,vaoi,1,0.1,0.1,7,")
        assert buf.getvalue().endswith("\n")
        assert "\r" not in buf.getvalue()

    def test_width_mismatch_rejected(self) -> None:
        with pytest.raises(ValueError):
            write_rows(io.StringIO(), [["too", "short"]])


class TestRunSummary:
    def test_json_digest(self) -> None:
        key = RunKey("greedy-a1-p0.5-s3", "greedy", 3, 1.0, 0.5)
        final = EpochMetrics(199, 0.9, 2.05, 4010, 200, 10, 4)
        digest = json.loads(RunSummary(key, {"clients": 20}, final).to_json())
        assert digest["run_id"] == "greedy-a1-p0.5-s3"
        assert digest["seed"] == 3
        assert digest["diverged"] is False
        assert digest["config"] == {"clients": 20}
        assert digest["final"]["macro_f1"] == 0.9
        assert digest["final"]["epoch"] == 199

    def test_diverged_run_has_no_final_row(self) -> None:
        key = RunKey("r", "greedy", 1, 0.1, 0.1)
        digest = json.loads(RunSummary(key, {}, None, diverged=True).to_json())
        assert digest["final"] is None
        assert digest["diverged"] is True
