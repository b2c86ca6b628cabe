"""Run configuration: typed keys, presets, validation.

Configs come from a flat key=value text file, command-line flags, or a named
preset; later sources override earlier ones key by key. Validation names the
offending key so a bad sweep fails before any simulation starts.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any

from .scheduler import POLICY_NAMES


class ConfigError(ValueError):
    """Invalid or missing configuration value; message names the key."""


@dataclass
class Config:
    clients: int = 20
    epochs: int = 200
    slots_per_epoch: int = 30
    kappa: int = 20
    p_bc: float = 0.1
    e_max: int = 25
    e_init: int = 0
    gamma: float = 0.01
    k: int = 10
    mu: float = 0.5
    alpha: float = 0.1
    samples_per_client: int = 60
    batch_size: int = 3
    hidden: tuple[int, ...] = (32,)
    d_in: int = 16
    num_classes: int = 4
    pool_per_class: int = 500
    test_per_class: int = 100
    class_spread: float = 2.0
    feature_layer: int = -1
    zero_init: bool = False
    policy: str = "vaoi"
    groups: int = 2
    proportional: bool = False
    allow_long_training: bool = False
    out: str = "runs"
    seed: int | None = None

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.d_in, *self.hidden, self.num_classes)

    @property
    def start_offset(self) -> int:
        """Latest slot offset from which training still finishes in-epoch
        with one slot left over for the upload."""
        return self.slots_per_epoch - self.kappa - 1

    def validate(self) -> list[str]:
        """Raise ConfigError on any violation; return non-fatal warnings."""
        if self.seed is None:
            raise ConfigError("seed: required; runs are never seeded from the clock")
        for key in ("clients", "epochs", "slots_per_epoch", "kappa", "batch_size",
                    "samples_per_client", "d_in", "pool_per_class", "test_per_class",
                    "groups"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be a positive integer")
        if self.num_classes < 2:
            raise ConfigError("num_classes: need at least 2")
        if not 0.0 <= self.p_bc <= 1.0:
            raise ConfigError("p_bc: probability outside [0, 1]")
        if self.gamma <= 0:
            raise ConfigError("gamma: step size must be positive")
        if self.mu <= 0:
            raise ConfigError("mu: threshold must be positive")
        if self.alpha <= 0:
            raise ConfigError("alpha: concentration must be positive")
        if self.class_spread <= 0:
            raise ConfigError("class_spread: must be positive")
        if self.kappa > self.e_max:
            raise ConfigError("kappa: must satisfy kappa <= e_max, else training can never start")
        if not 0 <= self.e_init <= self.e_max:
            raise ConfigError("e_init: must lie in [0, e_max]")
        if self.k < 1 or self.k > self.clients:
            raise ConfigError("k: must satisfy 1 <= k <= clients")
        if self.policy not in POLICY_NAMES:
            raise ConfigError(f"policy: unknown {self.policy!r}, expected one of {POLICY_NAMES}")
        if self.kappa >= self.slots_per_epoch and not self.allow_long_training:
            raise ConfigError(
                "kappa: training longer than an epoch (kappa >= slots_per_epoch); "
                "set allow_long_training=true to permit it"
            )
        if self.policy in ("fedbacys", "fedbacys-odd") and self.start_offset < 0:
            raise ConfigError(
                "slots_per_epoch: cyclic policies need slots_per_epoch >= kappa + 1 "
                "(train then upload within one epoch)"
            )
        if self.batch_size > self.samples_per_client:
            raise ConfigError("batch_size: larger than samples_per_client")
        if any(w < 1 for w in self.hidden):
            raise ConfigError("hidden: layer widths must be positive")
        n_acts = len(self.layer_sizes) - 1
        if not -n_acts <= self.feature_layer < n_acts:
            raise ConfigError(f"feature_layer: index {self.feature_layer} out of range for {n_acts} activations")
        if self.clients * self.samples_per_client > self.num_classes * self.pool_per_class:
            raise ConfigError(
                "pool_per_class: pool too small for clients * samples_per_client"
            )
        warnings = []
        if self.batch_size * self.kappa > self.samples_per_client:
            warnings.append(
                "batch_size * kappa exceeds samples_per_client; a training pass "
                "resweeps local data and the feature summary averages over "
                "resampled batches"
            )
        return warnings


# Named presets; "desk" is also the field-default configuration above.
PRESETS: dict[str, dict[str, Any]] = {
    "desk": {},
    "paper": {
        "clients": 100,
        "epochs": 500,
        "samples_per_client": 300,
        "batch_size": 15,
        "hidden": (64,),
        "d_in": 32,
        "num_classes": 10,
        "pool_per_class": 3600,
        "test_per_class": 200,
        "k": 10,
        "groups": 10,
    },
}

_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def coerce_value(key: str, raw: str) -> Any:
    """Parse one textual value into the key's declared type."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"{key}: unknown configuration key")
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "int | None":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple[int, ...]":
            return tuple(int(part) for part in raw.split(",") if part.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc


def parse_config_file(path: str) -> dict[str, Any]:
    """Read a flat key = value file; '#' starts a comment, blanks ignored."""
    values: dict[str, Any] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {text!r}")
            key, _, raw = text.partition("=")
            values[key.strip()] = coerce_value(key.strip(), raw)
    return values


def build_config(
    preset: str | None = None,
    file_values: dict[str, Any] | None = None,
    overrides: dict[str, Any] | None = None,
) -> Config:
    """Merge preset, file, and explicit overrides (strongest last)."""
    merged: dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown {preset!r}, expected one of {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    for source in (file_values, overrides):
        if source:
            for key, value in source.items():
                if key not in _FIELD_TYPES:
                    raise ConfigError(f"{key}: unknown configuration key")
                merged[key] = value
    return Config(**merged)
