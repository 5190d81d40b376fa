"""Configuration and outcome value types shared across the package.

Channel and preamble indices stored in these types are 1-based. Array-level
code elsewhere works 0-based and converts at the boundary.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional

from ._validation import is_prime


class EstimationMode(str, enum.Enum):
    IDEAL = "Ideal"
    PREAMBLE_POOL = "PreamblePool"
    PHY = "Phy"

    @classmethod
    def parse(cls, value) -> "EstimationMode":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().replace("_", "").replace("-", "")
        for member in cls:
            if member.value.lower() == text:
                return member
        raise ValueError(f"unknown estimation mode {value!r}")


@dataclass(frozen=True)
class SystemConfig:
    """Channels, preamble pool, slot timing and PHY settings.

    Durations are symbol counts. ``target_snr`` is linear. ``max_k`` and
    ``stop_factor`` tune the sparse preamble counter used in Phy mode; a
    ``max_k`` of None means ``t_p - 1``.
    """

    M: int = 100
    pool_size: int = 121
    t_p: int = 11
    t_d: int = 100
    t_f: int = 5
    estimation_mode: EstimationMode = EstimationMode.IDEAL
    target_snr: float = 100.0
    noise_power: float = 1.0
    max_k: Optional[int] = None
    stop_factor: float = 1.5

    def __post_init__(self):
        object.__setattr__(
            self, "estimation_mode", EstimationMode.parse(self.estimation_mode)
        )

    def replace(self, **changes) -> "SystemConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return SystemConfig(**values)

    @property
    def effective_max_k(self) -> int:
        return self.max_k if self.max_k is not None else max(1, self.t_p - 1)


@dataclass(frozen=True)
class TrafficConfig:
    """Exactly one of a fixed user count, a new-arrival rate or a total rate."""

    fixed_k: Optional[int] = None
    lambda0: Optional[float] = None
    lam: Optional[float] = None

    def __post_init__(self):
        chosen = [v for v in (self.fixed_k, self.lambda0, self.lam) if v is not None]
        if len(chosen) != 1:
            raise ValueError("set exactly one of fixed_k, lambda0, lam")
        value = chosen[0]
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"traffic value must be finite and >= 0, got {value}")
        if self.fixed_k is not None and int(self.fixed_k) != self.fixed_k:
            raise ValueError("fixed_k must be an integer")

    @property
    def is_poisson(self) -> bool:
        return self.fixed_k is None


def validate(config: SystemConfig) -> list:
    """Return the list of violated invariants; an empty list means valid."""
    errors = []
    if config.M < 1:
        errors.append("M >= 1 violated")
    if config.pool_size < 1:
        errors.append("pool_size >= 1 violated")
    for name in ("t_p", "t_d", "t_f"):
        if getattr(config, name) < 1:
            errors.append(f"{name} >= 1 violated")
    if config.t_p >= config.t_d:
        errors.append("t_p < t_d violated")
    if not config.target_snr > 0:
        errors.append("target_snr > 0 violated")
    if not config.noise_power >= 0:
        errors.append("noise_power >= 0 violated")
    if config.max_k is not None and config.max_k < 1:
        errors.append("max_k >= 1 violated")
    if not config.stop_factor > 0:
        errors.append("stop_factor > 0 violated")
    if config.estimation_mode is EstimationMode.PHY:
        if config.t_p < 5 or not is_prime(config.t_p):
            errors.append("Phy mode needs a prime t_p >= 5")
        if config.pool_size != config.t_p**2:
            errors.append("Phy mode needs pool_size == t_p**2")
    return errors


@dataclass(frozen=True)
class ExplorationOutcome:
    user_channel: tuple
    user_preamble: Optional[tuple]
    true_counts: tuple
    est_counts: tuple

    @property
    def K(self) -> int:
        return len(self.user_channel)

    @property
    def M(self) -> int:
        return len(self.true_counts)


@dataclass(frozen=True)
class Feedback:
    flags: tuple
    contention_count: int
    w_max: int
    # not carried on the wire
    saturated: bool = field(default=False, compare=False)

    @property
    def M(self) -> int:
        return len(self.flags)

    @property
    def free_channels(self) -> int:
        return self.M - sum(self.flags)


@dataclass(frozen=True)
class SlotResult:
    group1_count: int
    group2_transmitters: int
    free_channels: int
    group1_successes: int
    group2_successes: int
    collided_packets: int
    per_user_success: tuple
    # set when a contending user found no free channel and kept its own
    fallback_used: bool = False

    @property
    def successes(self) -> int:
        return self.group1_successes + self.group2_successes


@dataclass(frozen=True)
class SteadyStateStats:
    empirical_lambda: float
    empirical_q: float
    throughput: float
    delay_histogram: Mapping[int, int]
    mean_backlog: float
    slots: int
    diverged: bool = False
    total_new: int = 0
    total_delivered: int = 0
    final_backlog: int = 0
    delivered_measured: int = 0
    outage: Mapping[int, float] = field(default_factory=dict)

    def delay_outage(self, D: int) -> float:
        """Fraction of measured deliveries that needed more than ``D`` attempts."""
        if D < 0:
            raise ValueError("D must be >= 0")
        total = sum(self.delay_histogram.values())
        if D == 0 or total == 0:
            return 1.0
        late = sum(n for attempts, n in self.delay_histogram.items() if attempts > D)
        return late / total

    @property
    def mean_delay(self) -> float:
        total = sum(self.delay_histogram.values())
        if total == 0:
            return math.nan
        return sum(a * n for a, n in self.delay_histogram.items()) / total


_SYSTEM_KEYS = {f.name for f in fields(SystemConfig)}
_TRAFFIC_KEYS = {"fixed_k": "fixed_k", "lambda0": "lambda0", "lambda": "lam", "lam": "lam"}
_INT_KEYS = {"M", "pool_size", "t_p", "t_d", "t_f", "max_k", "fixed_k"}


def parse_config_text(text: str):
    """Parse ``key = value`` lines into ``(SystemConfig, TrafficConfig or None)``."""
    system, traffic = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _SYSTEM_KEYS:
            target, name = system, key
        elif key in _TRAFFIC_KEYS:
            target, name = traffic, _TRAFFIC_KEYS[key]
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key == "estimation_mode":
            target[name] = EstimationMode.parse(value)
        elif key == "max_k" and value.lower() in ("none", ""):
            target[name] = None
        elif key in _INT_KEYS:
            target[name] = int(value)
        else:
            target[name] = float(value)
    return SystemConfig(**system), (TrafficConfig(**traffic) if traffic else None)


def load_config(path) -> tuple:
    return parse_config_text(Path(path).read_text())
