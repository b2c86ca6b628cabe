"""Acceptance gate: one test per release criterion.

Each test is self-contained and checks the package against an independent
oracle (pencil-and-paper value, brute-force enumeration, replay from first
principles, or a paired-seed comparison), with the runtime budgets asserted
where the criterion states one.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from fedharvest.cli import main
from fedharvest.config import Config
from fedharvest.energy import Battery, HarvestProcess, harvest, try_start_training, try_transmit
from fedharvest.learner import Minibatch, MLPParams, batch_loss, batch_train, finalize_training
from fedharvest.scheduler import BacysOddPolicy, BacysPolicy, vaoi_select
from fedharvest.semantics import probe_change, update_age
from fedharvest.timeline import run_to_completion


@lru_cache(maxsize=None)
def _desk_rows(policy: str, alpha: float, p_bc: float, seed: int):
    cfg = dataclasses.replace(
        Config(), policy=policy, alpha=alpha, p_bc=p_bc, seed=seed
    )
    return tuple(run_to_completion(cfg).rows)


def test_criterion_1_battery_state_machine_props() -> None:
    started = time.perf_counter()
    rng = np.random.default_rng(1001)
    credit_on = HarvestProcess(1.0, np.random.default_rng(1))
    credit_off = HarvestProcess(0.0, np.random.default_rng(2))

    # randomized trace: machine level must track a pure-arithmetic fold
    steps = 120_000
    costs = rng.choice([0, 0, 1, 1, 2, 5, 20, 25, 26], size=steps)
    credits = rng.integers(0, 2, size=steps)
    flavors = rng.integers(0, 2, size=steps)
    stores = [
        {"battery": Battery(0, 25), "level": 0, "credited": 0, "debited": 0},
        {"battery": Battery(3, 7), "level": 3, "credited": 0, "debited": 0},
    ]
    for i in range(steps):
        box = stores[i % 2]
        battery, cost = box["battery"], int(costs[i])
        if cost == 1 and flavors[i]:
            granted = try_transmit(battery)
        elif cost >= 1:
            granted = try_start_training(battery, cost)
        else:
            granted = False
        harvest(battery, credit_on if credits[i] else credit_off)

        if box["level"] >= cost >= 1:
            assert granted
            box["level"] -= cost
            box["debited"] += cost
        else:
            assert not granted or cost == 0
        headroom = battery.capacity - box["level"]
        gained = min(int(credits[i]), headroom)
        box["level"] += gained
        box["credited"] += gained
        assert 0 <= battery.level <= battery.capacity
        assert battery.level == box["level"]
    for box, e_init in zip(stores, (0, 3)):
        assert box["battery"].level == e_init + box["credited"] - box["debited"]

    # full small domain: debit-then-credit equals the one-line slot update
    checked = 0
    for e, t, c in itertools.product(range(26), range(26), (0, 1)):
        ops = [lambda b: try_start_training(b, t)] if t >= 2 else []
        if t == 1:
            ops = [try_transmit, lambda b: try_start_training(b, 1)]
        if t == 0:
            ops = [lambda b: False]
        for op in ops:
            battery = Battery(e, 25)
            granted = op(battery)
            harvest(battery, credit_on if c else credit_off)
            if e >= t:
                assert granted == (t >= 1)
                assert battery.level == min(max(e - t, 0) + c, 25)
            else:
                assert not granted
                assert battery.level == min(e + c, 25)
            checked += 1
    assert checked == 26 * 26 * 2 + 26 * 2  # t=1 exercises both debit ops

    elapsed = time.perf_counter() - started
    assert steps >= 100_000
    assert elapsed < 10.0, f"criterion 1 took {elapsed:.1f}s"


def test_criterion_2_age_recurrence_matches_replay() -> None:
    started = time.perf_counter()
    rng = np.random.default_rng(2002)
    mu = 0.5
    for _ in range(1000):
        length = 500
        q = (rng.random(length) < 0.12).astype(np.int64)
        m_missing = rng.random(length) < 0.15
        m_values = rng.random(length)

        age = 0
        fold = np.empty(length, dtype=np.int64)
        for j in range(length):
            m = None if m_missing[j] else float(m_values[j])
            age = update_age(age, int(q[j]), m, mu)
            fold[j] = age

        # replay oracle: age after step j counts informative non-reset steps
        # since the most recent reset, from the raw trace alone
        informative = m_missing | (m_values >= mu)
        counted = np.cumsum((q == 0) & informative)
        reset_at = np.maximum.accumulate(
            np.where(q == 1, np.arange(length), -1)
        )
        base = np.where(reset_at >= 0, counted[np.clip(reset_at, 0, None)], 0)
        replay = counted - base
        assert np.array_equal(fold, replay)

    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"criterion 2 took {elapsed:.1f}s"


def test_criterion_3_gradient_vs_central_differences() -> None:
    shapes = [(3, 4, 2), (5, 6, 3), (4, 4, 3, 2), (3, 5, 2), (6, 4, 4)]
    eps = 1e-6
    for trial in range(10):
        rng = np.random.default_rng(3000 + trial)
        sizes = shapes[trial % len(shapes)]
        params = MLPParams.uniform(sizes, rng)
        batch = Minibatch(
            rng.normal(size=(8, sizes[0])), rng.integers(0, sizes[-1], size=8)
        )
        stepped, _, _ = batch_train(params, batch, gamma=1.0)
        analytic = params.flat - stepped.flat
        for coord in rng.choice(params.d_w, size=20, replace=False):
            plus = params.copy()
            plus.flat[coord] += eps
            minus = params.copy()
            minus.flat[coord] -= eps
            numeric = (batch_loss(plus, batch) - batch_loss(minus, batch)) / (2 * eps)
            rel = abs(analytic[coord] - numeric) / max(abs(numeric), 1e-6)
            assert rel < 1e-4, f"coord {coord}: {analytic[coord]} vs {numeric}"


def test_criterion_4_scheduler_vs_brute_force() -> None:
    # exhaustive: every age vector of length <= 6 with entries in [0,3]
    rng_seed = 0
    cases = 0
    for n in range(1, 7):
        no_last = np.full(n, -1, dtype=np.int64)
        for ages in itertools.product(range(4), repeat=n):
            arr = np.array(ages)
            best_cache: dict[int, int] = {}
            for k in range(1, n + 1):
                got = vaoi_select(arr, k, no_last, np.random.default_rng(rng_seed))
                assert len(got) == k and len(set(got.tolist())) == k
                if k not in best_cache:
                    best_cache[k] = max(
                        sum(ages[i] for i in combo)
                        for combo in itertools.combinations(range(n), k)
                    )
                assert sum(ages[i] for i in got) == best_cache[k]
                if arr.max() > 0:
                    oracle = sorted(
                        sorted(range(n), key=lambda i: (-ages[i], i))[:k]
                    )
                    assert got.tolist() == oracle
                cases += 1
    assert cases == sum(n * 4**n for n in range(1, 7))

    # cyclic baseline: never more than one start in any G consecutive epochs
    rng = np.random.default_rng(4004)
    for _ in range(50):
        groups = int(rng.integers(1, 6))
        n = int(rng.integers(1, 9))
        epochs = int(rng.integers(3, 7)) * groups
        policy = BacysPolicy(groups=groups, start_offset=2)
        starts = np.zeros((n, epochs), dtype=int)
        for epoch in range(epochs):
            mask = policy.eligible_mask(epoch, n)
            for cid in range(n):
                able = bool(rng.integers(0, 2))
                if mask[cid] and policy.decide_start(cid, 2, able):
                    starts[cid, epoch] = 1
            assert not policy.decide_start(0, 3, able=True)
        for cid in range(n):
            for lo in range(epochs - groups + 1):
                assert starts[cid, lo : lo + groups].sum() <= 1

    # odd variant: acts on exactly the odd opportunities of any sequence
    for trial in range(200):
        rng_t = np.random.default_rng(5000 + trial)
        offset = int(rng_t.integers(0, 6))
        policy_odd = BacysOddPolicy(groups=1, start_offset=offset)
        seen = 0
        for _ in range(int(rng_t.integers(5, 40))):
            slot = int(rng_t.integers(0, 6))
            able = bool(rng_t.integers(0, 2))
            decided = policy_odd.decide_start(7, slot, able)
            if slot == offset and able:
                seen += 1
                assert decided == (seen % 2 == 1)
            else:
                assert not decided


def test_criterion_5_age_advantage_under_scarce_energy() -> None:
    started = time.perf_counter()
    baselines = ("greedy", "fedbacys", "fedbacys-odd")
    wins = 0
    for seed in range(1, 6):
        tails = {
            policy: float(
                np.mean([r.mean_vaoi for r in _desk_rows(policy, 0.1, 0.1, seed)[-50:]])
            )
            for policy in ("vaoi", *baselines)
        }
        if all(tails["vaoi"] < tails[b] for b in baselines):
            wins += 1
        print(
            f"seed {seed}: vaoi {tails['vaoi']:.3f} | "
            + " ".join(f"{b} {tails[b]:.3f}" for b in baselines)
        )
    elapsed = time.perf_counter() - started
    print(f"age advantage in {wins}/5 seeds ({elapsed:.0f}s)")
    assert wins >= 4
    assert elapsed < 900.0


def test_criterion_6_energy_savings_and_alpha_independence() -> None:
    for seed in range(1, 6):
        final = {
            policy: _desk_rows(policy, 0.1, 1.0, seed)[-1].cum_energy
            for policy in ("vaoi", "greedy", "fedbacys-odd")
        }
        ratio = final["vaoi"] / final["greedy"]
        print(
            f"seed {seed}: vaoi/greedy {ratio:.3f}, "
            f"odd {final['fedbacys-odd']} <= vaoi {final['vaoi']}"
        )
        assert final["vaoi"] <= 0.8 * final["greedy"]
        assert final["fedbacys-odd"] <= final["vaoi"]

    # paired harvest seeds: heterogeneity must not move any energy trace
    for policy in ("vaoi", "greedy", "fedbacys", "fedbacys-odd"):
        traces = [
            [
                (r.cum_energy, r.trainings_started, r.transmissions)
                for r in _desk_rows(policy, alpha, 1.0, 1)
            ]
            for alpha in (0.1, 1.0, 10.0)
        ]
        assert traces[0] == traces[1] == traces[2], policy


def test_criterion_7_accuracy_not_worse_when_energy_is_rare() -> None:
    wins = 0
    for seed in range(1, 6):
        vaoi = _desk_rows("vaoi", 0.1, 0.01, seed)[-1].macro_f1
        greedy = _desk_rows("greedy", 0.1, 0.01, seed)[-1].macro_f1
        wins += vaoi >= greedy
        print(f"seed {seed}: vaoi {vaoi:.4f} vs greedy {greedy:.4f}")
    print(f"final macro-F1 at least matches greedy in {wins}/5 seeds")
    assert wins >= 4


def test_criterion_8_byte_identical_reruns(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        monkeypatch.setenv("FEDHARVEST_OUT", str(out))
        assert main(["run", "--seed", "1", "--epochs", "40"]) == 0
        outputs.append(
            (
                (out / "vaoi-a0.1-p0.1-s1.csv").read_bytes(),
                (out / "vaoi-a0.1-p0.1-s1.json").read_bytes(),
            )
        )
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]
    digest = json.loads(outputs[0][1])
    assert digest["diverged"] is False
    assert len(outputs[0][0].split(b"\n")) == 1 + 40 + 1  # header + rows + EOF


def test_criterion_9_feature_summary_hand_example() -> None:
    # two batches of two samples through an identity 2x2 model: logits equal
    # inputs, so the per-batch feature sums are (2,4) and (4,0) and the
    # per-sample mean is h = (6,4)/4 = (1.5, 1.0)
    local = MLPParams.zeros((2, 2))
    local.weight(0)[:] = np.eye(2)
    batches = [
        Minibatch(np.array([[1.0, 2.0], [1.0, 2.0]]), np.array([0, 1])),
        Minibatch(np.array([[2.0, 0.0], [2.0, 0.0]]), np.array([0, 1])),
    ]
    sums = []
    for batch in batches:
        local, fsum, _ = batch_train(local, batch, gamma=0.0)
        sums.append(fsum)
    assert sums[0].tolist() == [2.0, 4.0]
    assert sums[1].tolist() == [4.0, 0.0]
    h = finalize_training(sums, samples_seen=4, kappa=2)
    assert h.tolist() == [1.5, 1.0]

    # probe rows (1,0) and (0,1) under an identity global model: batch-mean
    # features (0.5, 0.5), distance sqrt(1.0 + 0.25)
    global_model = MLPParams.zeros((2, 2))
    global_model.weight(0)[:] = np.eye(2)
    probe = Minibatch(np.eye(2), np.array([0, 1]))
    m = probe_change(global_model, probe, h)
    assert abs(m - 1.118033988749895) < 1e-12
