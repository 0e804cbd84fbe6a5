"""Deterministic simulated backhaul: fixed delay, jitter, loss and scripted failures.

Time is simulated only. Every transmission draws from its own RNG stream
keyed by ``(seed, round, zone, direction)``, so the outcome of one transfer
never depends on how many other transfers happened before it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

UP = "up"
DOWN = "down"
SERVER = "server"

_DIR_CODE = {UP: 0, DOWN: 1}


@dataclass
class SimClock:
    now: float = 0.0

    def advance_to(self, t: float) -> float:
        if t > self.now:
            self.now = float(t)
        return self.now


@dataclass(frozen=True)
class ScriptedOutcome:
    """``drop`` loses the payload; ``delay`` overrides the one-way delay."""

    drop: bool = False
    delay: float | None = None


@dataclass
class LinkModel:
    one_way_delay: float = 0.25
    loss_probability: float = 0.0
    jitter: float = 0.0
    schedule: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.one_way_delay < 0 or self.jitter < 0:
            raise ValueError("delays must be nonnegative")
        if not 0 <= self.loss_probability <= 1:
            raise ValueError("loss_probability must lie in [0, 1]")

    @classmethod
    def geo(cls, **kw) -> "LinkModel":
        return cls(one_way_delay=0.25, **kw)

    @classmethod
    def leo(cls, **kw) -> "LinkModel":
        return cls(one_way_delay=0.02, **kw)

    def script(self, round_index: int, zone, direction: str, outcome: ScriptedOutcome) -> None:
        self.schedule[(int(round_index), zone, direction)] = outcome


@dataclass
class Delivery:
    src: object
    dst: object
    round_index: int
    direction: str
    dispatched_at: float
    delivered_at: float | None
    size_bytes: int

    @property
    def dropped(self) -> bool:
        return self.delivered_at is None


@dataclass
class TraceEvent:
    round_index: int
    zone: object
    direction: str
    dispatched_at: float
    delivered_at: float | None
    received: bool
    size_bytes: int


def transmit(link: LinkModel, payload, src, dst, clock: SimClock, round_index: int) -> Delivery:
    """Dispatch ``payload`` now; a scripted outcome beats the random loss draw."""
    direction = DOWN if src == SERVER else UP
    zone = dst if direction == DOWN else src
    size = len(payload.to_bytes()) if hasattr(payload, "to_bytes") else 0
    rng = np.random.default_rng([link.seed, int(round_index), int(zone), _DIR_CODE[direction]])
    lost = rng.random() < link.loss_probability
    jitter = rng.uniform(0.0, link.jitter) if link.jitter > 0 else 0.0
    delay = link.one_way_delay
    scripted = link.schedule.get((int(round_index), zone, direction))
    if scripted is not None:
        lost = scripted.drop
        if scripted.delay is not None:
            delay = scripted.delay
    delivered = None if lost else clock.now + delay + jitter
    return Delivery(src, dst, int(round_index), direction, clock.now, delivered, size)


def await_with_timeout(delivery: Delivery, timeout: float, clock: SimClock,
                       trace: list | None = None) -> bool:
    """True when the payload arrives within ``timeout`` of its dispatch.

    The clock moves to the arrival time or to the deadline, whichever is
    earlier (never backwards).
    """
    if timeout <= 0:
        raise ValueError("timeout must be positive")
    deadline = delivery.dispatched_at + timeout
    received = delivery.delivered_at is not None and delivery.delivered_at <= deadline
    clock.advance_to(delivery.delivered_at if received else deadline)
    if trace is not None:
        zone = delivery.dst if delivery.direction == DOWN else delivery.src
        trace.append(TraceEvent(delivery.round_index, zone, delivery.direction,
                                delivery.dispatched_at, delivery.delivered_at, received,
                                delivery.size_bytes))
    return received


def load_schedule(path) -> dict:
    """Read ``round,zone,direction,outcome`` rows.

    ``outcome`` is ``drop``, ``ok`` or a delay in seconds.
    """
    schedule = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["round"]), int(row["zone"]), row["direction"].strip().lower())
            if key[2] not in _DIR_CODE:
                raise ValueError(f"bad direction {row['direction']!r}")
            outcome = row["outcome"].strip().lower()
            if outcome == "drop":
                schedule[key] = ScriptedOutcome(drop=True)
            elif outcome == "ok":
                schedule[key] = ScriptedOutcome()
            else:
                schedule[key] = ScriptedOutcome(delay=float(outcome))
    return schedule
