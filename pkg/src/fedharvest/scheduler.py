"""Client selection and training-start policies.

The age-based server selects the k stalest clients each round. Baselines
ignore ages: greedy trains whenever energy allows, the cyclic policy gives
each client group one fixed start slot every `groups` rounds, and the odd
variant additionally skips every other usable opportunity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def vaoi_select(
    ages: np.ndarray,
    k: int,
    last_participation: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Pick the k clients with the largest ages.

    Ties break toward the client whose last participation is oldest, then
    toward the smaller id. When every age is zero there is nothing to rank,
    so the pick is uniform at random without replacement.
    """
    ages = np.asarray(ages)
    n = len(ages)
    if not 1 <= k <= n:
        raise ValueError(f"cannot select {k} of {n} clients")
    if ages.min() < 0:
        raise ValueError("ages must be non-negative")
    if len(last_participation) != n:
        raise ValueError("last_participation must align with ages")
    if ages.max() == 0:
        return np.sort(rng.choice(n, size=k, replace=False))
    order = np.lexsort((np.arange(n), np.asarray(last_participation), -ages))
    return np.sort(order[:k])


def proportional_select(
    ages: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Sample k clients without replacement with probability proportional to age.

    Zero-age clients are drawn only to fill the quota when fewer than k ages
    are positive; an all-zero vector degrades to a uniform pick.
    """
    ages = np.asarray(ages, dtype=np.float64)
    n = len(ages)
    if not 1 <= k <= n:
        raise ValueError(f"cannot select {k} of {n} clients")
    positive = np.flatnonzero(ages > 0)
    if len(positive) == 0:
        return np.sort(rng.choice(n, size=k, replace=False))
    if len(positive) <= k:
        chosen = positive
        rest = np.flatnonzero(ages == 0)
        fill = rng.choice(rest, size=k - len(positive), replace=False)
        return np.sort(np.concatenate([chosen, fill]))
    weights = ages[positive] / ages[positive].sum()
    chosen = rng.choice(positive, size=k, replace=False, p=weights)
    return np.sort(chosen)


@dataclass
class GreedyPolicy:
    """Train as soon as idle with enough charge; every client, every round."""

    name: str = field(default="greedy", init=False)
    selection_resets_age: bool = field(default=False, init=False)
    consume_eligibility: bool = field(default=False, init=False)

    def eligible_mask(self, epoch: int, n: int) -> np.ndarray:
        return np.ones(n, dtype=bool)

    def decide_start(self, client_id: int, slot_in_epoch: int, able: bool) -> bool:
        return able


@dataclass
class BacysPolicy:
    """Cyclic grouping: client i belongs to group i mod groups, and the group
    whose index matches epoch mod groups may start, only at start_offset.
    A client that cannot start at its slot forfeits the round."""

    groups: int
    start_offset: int
    name: str = field(default="fedbacys", init=False)
    selection_resets_age: bool = field(default=False, init=False)
    consume_eligibility: bool = field(default=False, init=False)

    def __post_init__(self) -> None:
        if self.groups < 1:
            raise ValueError(f"groups must be positive, got {self.groups}")
        if self.start_offset < 0:
            raise ValueError("start_offset cannot be negative")

    def eligible_mask(self, epoch: int, n: int) -> np.ndarray:
        return np.arange(n) % self.groups == epoch % self.groups

    def decide_start(self, client_id: int, slot_in_epoch: int, able: bool) -> bool:
        return able and slot_in_epoch == self.start_offset


@dataclass
class BacysOddPolicy(BacysPolicy):
    """Cyclic policy that counts usable opportunities and acts on odd counts.

    An opportunity is counted only when the client could actually have
    started (its slot, idle, charged, not transmitting); blocked rounds do
    not advance the count."""

    name: str = field(default="fedbacys-odd", init=False)

    def __post_init__(self) -> None:
        super().__post_init__()
        self._opportunities: dict[int, int] = {}

    def decide_start(self, client_id: int, slot_in_epoch: int, able: bool) -> bool:
        if slot_in_epoch != self.start_offset or not able:
            return False
        count = self._opportunities.get(client_id, 0) + 1
        self._opportunities[client_id] = count
        return count % 2 == 1


@dataclass
class VaoiPolicy:
    """Server-driven: only clients picked by the age ranking train this round."""

    k: int
    proportional: bool = False
    name: str = field(default="vaoi", init=False)
    selection_resets_age: bool = field(default=True, init=False)
    # a selection grants exactly one training start; the grant is spent on use
    consume_eligibility: bool = field(default=True, init=False)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")

    def select(
        self,
        ages: np.ndarray,
        last_participation: np.ndarray,
        rng: np.random.Generator,
    ) -> np.ndarray:
        if self.proportional:
            return proportional_select(ages, self.k, rng)
        return vaoi_select(ages, self.k, last_participation, rng)

    def eligible_mask(self, epoch: int, n: int) -> np.ndarray:
        raise RuntimeError("age-based eligibility comes from select(), per round")

    def decide_start(self, client_id: int, slot_in_epoch: int, able: bool) -> bool:
        return able


Policy = GreedyPolicy | BacysPolicy | BacysOddPolicy | VaoiPolicy

POLICY_NAMES = ("vaoi", "greedy", "fedbacys", "fedbacys-odd")


def make_policy(
    name: str,
    *,
    k: int = 1,
    groups: int = 1,
    start_offset: int = 0,
    proportional: bool = False,
) -> Policy:
    """Construct a policy by name; unused keyword values are ignored."""
    if name == "vaoi":
        return VaoiPolicy(k=k, proportional=proportional)
    if name == "greedy":
        return GreedyPolicy()
    if name == "fedbacys":
        return BacysPolicy(groups=groups, start_offset=start_offset)
    if name == "fedbacys-odd":
        return BacysOddPolicy(groups=groups, start_offset=start_offset)
    raise ValueError(f"unknown policy {name!r}, expected one of {POLICY_NAMES}")
