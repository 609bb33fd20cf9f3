"""Slot-accurate simulator of the server -> AP -> client status-refresh loop.

One call to :meth:`Simulator.step` advances exactly one slot. Within a slot the
order is fixed:

1. channel timers tick; an expiring update overwrites the AP view, expiring
   requests reach the server and take a thread (or are dropped when none is free)
2. tasks that were already running progress one slot; finished ones free a thread
3. client arrivals are classified against (c, c_hat) and, if c_hat > 0, forwarded
4. an update carrying the current c is dispatched if asked for and the channel
   was idle at the start of the slot
5. arrival timer, query age and AoI bookkeeping
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .metrics import AoITracker, RunMetrics, aoi, classify_decision


class ConfigError(ValueError):
    """Raised for an invalid simulator, environment or experiment configuration."""


@dataclass(frozen=True)
class DeterministicArrivals:
    interval_s: float


@dataclass(frozen=True)
class UniformArrivals:
    min_s: float
    max_s: float


@dataclass(frozen=True)
class ScriptedArrivals:
    """Arrivals at fixed slot indices; a slot listed twice gets two arrivals."""

    slots: tuple

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(sorted(self.slots)))


@dataclass(frozen=True)
class DeterministicDelay:
    slots: int


@dataclass(frozen=True)
class StochasticDelay:
    base_slots: int
    rate: float


ArrivalModel = Union[DeterministicArrivals, UniformArrivals, ScriptedArrivals]
DelayModel = Union[DeterministicDelay, StochasticDelay]


@dataclass(frozen=True)
class SimConfig:
    slot_duration_s: float = 0.001
    c_max: int = 4
    service_rate: float = 2.0
    task_size_min: float = 40.0
    task_size_max: float = 45.0
    arrival_model: ArrivalModel = DeterministicArrivals(0.025)
    delay_model: DelayModel = StochasticDelay(4, 1.0)
    rng_seed: int = 0

    def validate(self) -> "SimConfig":
        if not self.slot_duration_s > 0:
            raise ConfigError("slot_duration_s must be positive")
        if int(self.c_max) != self.c_max or self.c_max < 1:
            raise ConfigError(f"c_max must be a positive integer, got {self.c_max}")
        if not self.service_rate > 0:
            raise ConfigError("service_rate must be positive")
        if not 0 < self.task_size_min <= self.task_size_max:
            raise ConfigError("need 0 < task_size_min <= task_size_max")
        am = self.arrival_model
        if isinstance(am, DeterministicArrivals):
            if not am.interval_s > 0:
                raise ConfigError("arrival interval must be positive")
        elif isinstance(am, UniformArrivals):
            if not 0 < am.min_s <= am.max_s:
                raise ConfigError("uniform arrivals need 0 < min_s <= max_s")
        elif isinstance(am, ScriptedArrivals):
            if any(int(s) != s or s < 0 for s in am.slots):
                raise ConfigError("scripted arrival slots must be non-negative integers")
        else:
            raise ConfigError(f"unknown arrival model {am!r}")
        dm = self.delay_model
        if isinstance(dm, DeterministicDelay):
            # transmission is never instantaneous
            if int(dm.slots) != dm.slots or dm.slots < 1:
                raise ConfigError("deterministic delay must be an integer >= 1 slot")
        elif isinstance(dm, StochasticDelay):
            if int(dm.base_slots) != dm.base_slots or dm.base_slots < 0:
                raise ConfigError("stochastic delay base must be a non-negative integer")
            if not dm.rate > 0:
                raise ConfigError("stochastic delay rate must be positive")
        else:
            raise ConfigError(f"unknown delay model {dm!r}")
        return self

    @property
    def mean_service_slots(self) -> int:
        return math.ceil((self.task_size_min + self.task_size_max) / 2 / self.service_rate)


@dataclass
class InFlightUpdate:
    payload: int
    slots_remaining: int
    dispatch_slot: int


@dataclass
class WorldState:
    slot: int
    c: int
    c_hat: int
    running_tasks: list = field(default_factory=list)
    update_in_flight: Optional[InFlightUpdate] = None
    requests_in_flight: list = field(default_factory=list)
    last_update_reception_slot: Optional[int] = None
    slots_since_last_arrival: int = 0
    last_qaoi: int = 0
    next_arrival_slot: Optional[int] = None
    scripted_cursor: int = 0

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)


@dataclass
class SlotReport:
    slot: int
    arrivals_at_ap: int = 0
    update_delivered: bool = False
    update_dispatched: bool = False
    decision_outcomes: list = field(default_factory=list)
    tasks_completed: int = 0
    requests_dropped: int = 0
    aoi: int = 0


def sample_delay_slots(delay_model: DelayModel, rng: np.random.Generator) -> int:
    if isinstance(delay_model, DeterministicDelay):
        return int(delay_model.slots)
    x = rng.exponential(1.0 / delay_model.rate)
    return int(delay_model.base_slots) + math.ceil(x)


def sample_arrival_gap_slots(arrival_model: ArrivalModel, slot_duration_s: float,
                             rng: np.random.Generator) -> int:
    if isinstance(arrival_model, DeterministicArrivals):
        gap = round(arrival_model.interval_s / slot_duration_s)
    elif isinstance(arrival_model, UniformArrivals):
        gap = round(rng.uniform(arrival_model.min_s, arrival_model.max_s) / slot_duration_s)
    else:
        raise TypeError(f"{type(arrival_model).__name__} has no gap distribution")
    return max(1, int(gap))


def init(config: SimConfig, rng: Optional[np.random.Generator] = None) -> WorldState:
    """All-idle state: every thread free and the AP holding the true capacity."""
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    am = config.arrival_model
    if isinstance(am, ScriptedArrivals):
        first = am.slots[0] if am.slots else None
    else:
        first = sample_arrival_gap_slots(am, config.slot_duration_s, rng)
    return WorldState(slot=0, c=config.c_max, c_hat=config.c_max, next_arrival_slot=first)


def _task_slots(config: SimConfig, rng) -> int:
    if config.task_size_min == config.task_size_max:
        w = config.task_size_min
    else:
        w = rng.uniform(config.task_size_min, config.task_size_max)
    return max(1, math.ceil(w / config.service_rate))


def step_inplace(state: WorldState, action: int, rng: np.random.Generator, config: SimConfig,
                 qaoi_hold: bool = False) -> SlotReport:
    """Advance ``state`` by one slot, mutating it. See the module docstring for ordering."""
    t = state.slot
    report = SlotReport(slot=t)

    # (1) channel
    upd = state.update_in_flight
    channel_free = upd is None
    if upd is not None:
        upd.slots_remaining -= 1
        if upd.slots_remaining <= 0:
            state.c_hat = upd.payload
            state.last_update_reception_slot = t
            state.update_in_flight = None
            report.update_delivered = True
    reqs = state.requests_in_flight
    accepted = []
    if reqs:
        for i in range(len(reqs)):
            reqs[i] -= 1
        while reqs and reqs[0] <= 0:
            reqs.pop(0)
            if state.c > 0:
                state.c -= 1
                accepted.append(_task_slots(config, rng))
            else:
                report.requests_dropped += 1

    # (2) tasks accepted this slot start counting down next slot
    running = state.running_tasks
    if running:
        done = 0
        kept = []
        for r in running:
            r -= 1
            if r <= 0:
                done += 1
            else:
                kept.append(r)
        running[:] = kept
        report.tasks_completed = done
        state.c = min(config.c_max, state.c + done)
    running.extend(accepted)

    # (3) arrivals and forwarding decisions
    am = config.arrival_model
    n_arrivals = 0
    while state.next_arrival_slot is not None and state.next_arrival_slot == t:
        n_arrivals += 1
        report.decision_outcomes.append(classify_decision(state.c, state.c_hat))
        if state.c_hat > 0:
            d = max(1, sample_delay_slots(config.delay_model, rng))
            if reqs and reqs[-1] > d:
                d = reqs[-1]  # FIFO: no overtaking on the forwarding path
            reqs.append(d)
        if isinstance(am, ScriptedArrivals):
            state.scripted_cursor += 1
            state.next_arrival_slot = (am.slots[state.scripted_cursor]
                                       if state.scripted_cursor < len(am.slots) else None)
        else:
            state.next_arrival_slot = t + sample_arrival_gap_slots(am, config.slot_duration_s, rng)
    report.arrivals_at_ap = n_arrivals

    # (4) update dispatch on an idle channel
    if action == 1 and channel_free:
        d = max(1, sample_delay_slots(config.delay_model, rng))
        state.update_in_flight = InFlightUpdate(payload=state.c, slots_remaining=d, dispatch_slot=t)
        report.update_dispatched = True

    # (5) timers
    age = aoi(AoITracker(state.last_update_reception_slot), t)
    report.aoi = age
    if n_arrivals:
        state.slots_since_last_arrival = 0
        state.last_qaoi = age
    else:
        state.slots_since_last_arrival += 1
        if not qaoi_hold:
            state.last_qaoi = 0
    state.slot = t + 1
    return report


def step(state: WorldState, action: int, rng: np.random.Generator, config: SimConfig,
         qaoi_hold: bool = False) -> tuple:
    """Pure variant of :func:`step_inplace`: returns ``(new_state, report)``."""
    new = state.copy()
    report = step_inplace(new, action, rng, config, qaoi_hold)
    return new, report


def tau_remaining(state: WorldState) -> int:
    upd = state.update_in_flight
    return 0 if upd is None else upd.slots_remaining


class Simulator:
    """Owns a config, a world state and a private RNG; accumulates run counters."""

    def __init__(self, config: SimConfig, seed: Optional[int] = None, qaoi_hold: bool = False,
                 record_trace: bool = False):
        self.config = config.validate()
        self.qaoi_hold = qaoi_hold
        self.rng = np.random.default_rng(config.rng_seed if seed is None else seed)
        self.state = init(config, self.rng)
        self.metrics = RunMetrics()
        self.trace = [] if record_trace else None

    def step(self, action: int) -> SlotReport:
        rep = step_inplace(self.state, action, self.rng, self.config, self.qaoi_hold)
        m = self.metrics
        m.total_slots += 1
        m.aoi_sum += rep.aoi
        if rep.update_dispatched:
            m.total_updates += 1
        for outcome in rep.decision_outcomes:
            m.record_decision(outcome)
        if self.trace is not None:
            s = self.state
            self.trace.append({
                "slot": rep.slot, "c": s.c, "c_hat": s.c_hat, "action": int(action),
                "dispatched": rep.update_dispatched, "arrivals": rep.arrivals_at_ap,
                "outcomes": [o.value for o in rep.decision_outcomes],
            })
        return rep


def write_trace(rows: Iterable[dict], path) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
