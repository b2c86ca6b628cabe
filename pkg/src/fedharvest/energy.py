"""Battery state machine with Bernoulli harvesting and strict energy causality.

Actions are all-or-nothing: an action is granted only when the current level
fully covers its cost, otherwise the battery is left untouched and the caller
treats the denial as a normal outcome. Credits are clamped to capacity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TRANSMIT_COST = 1


@dataclass
class Battery:
    """Integer energy store, always within [0, capacity]."""

    level: int
    capacity: int

    def __post_init__(self) -> None:
        if self.capacity <= 0:
            raise ValueError(f"battery capacity must be positive, got {self.capacity}")
        if not 0 <= self.level <= self.capacity:
            raise ValueError(f"battery level {self.level} outside [0, {self.capacity}]")


@dataclass
class HarvestProcess:
    """Bernoulli(p_bc) unit-energy arrivals drawn from a dedicated stream.

    Each client owns one process; exactly one draw is consumed per slot, busy
    or not, so harvest traces do not depend on the actions taken.
    """

    p_bc: float
    stream: np.random.Generator

    def draw(self) -> int:
        return 1 if self.stream.random() < self.p_bc else 0


def harvest(battery: Battery, process: HarvestProcess) -> int:
    """Attempt one slot's harvest; a successful draw credits one unit, clamped.

    Returns the drawn arrival indicator (0 or 1).
    """
    arrived = process.draw()
    if arrived:
        battery.level = min(battery.level + 1, battery.capacity)
    return arrived


def try_transmit(battery: Battery) -> bool:
    """Debit one unit for an uplink; denied (and untouched) below one unit."""
    if battery.level >= TRANSMIT_COST:
        battery.level -= TRANSMIT_COST
        return True
    return False


def try_start_training(battery: Battery, kappa: int) -> bool:
    """Debit the full training cost up front; denied if the level is short.

    Harvests landing during the busy slots are credited separately, one per
    slot, by the caller's per-slot harvest phase.
    """
    if kappa < 1:
        raise ValueError(f"training cost must be at least 1, got {kappa}")
    if battery.level >= kappa:
        battery.level -= kappa
        return True
    return False
