"""Scripted replays of short hand-checkable scenarios.

The default scenario has three threads, 3-slot transmission delays on both the
update and the request path, and 20-slot tasks (size 40 at rate 2). Arrivals
and update requests are listed by slot so the resulting ``(c, c_hat)``
timeline can be checked by hand.
"""
from __future__ import annotations

from dataclasses import dataclass

from .sim import DeterministicDelay, ScriptedArrivals, SimConfig, Simulator


@dataclass(frozen=True)
class Scenario:
    arrival_slots: tuple = (1, 2, 3, 8, 10, 22, 26, 30, 31, 40)
    action_slots: tuple = (6, 24, 25, 35)
    n_slots: int = 50
    c_max: int = 3
    delay_slots: int = 3
    task_size: float = 40.0
    service_rate: float = 2.0

    def sim_config(self) -> SimConfig:
        return SimConfig(c_max=self.c_max, service_rate=self.service_rate,
                         task_size_min=self.task_size, task_size_max=self.task_size,
                         arrival_model=ScriptedArrivals(tuple(self.arrival_slots)),
                         delay_model=DeterministicDelay(self.delay_slots))


def replay(scenario: Scenario = Scenario()) -> list:
    """Run the scenario and return one trace dict per slot (state after the slot)."""
    sim = Simulator(scenario.sim_config(), seed=0, record_trace=True)
    actions = set(scenario.action_slots)
    for t in range(scenario.n_slots):
        sim.step(int(t in actions))
    return sim.trace


def format_trace(rows) -> str:
    lines = ["slot  c  c_hat  act  sent  arrivals  outcomes"]
    for r in rows:
        lines.append(f"{r['slot']:4d}  {r['c']}  {r['c_hat']:5d}  {r['action']:3d}  "
                     f"{int(r['dispatched']):4d}  {r['arrivals']:8d}  {' '.join(r['outcomes'])}")
    return "\n".join(lines)
