"""Classical signal controllers: fixed-time cycling and pressure greedies.

All three controllers share the same cadence: the engine polls them after
every ``t_duration`` seconds of green and they return a phase id. The
pressure-based controllers pick the argmax of a per-phase score computed
from the live queue state; ties go to the lowest phase index so decisions
are deterministic. An argmax is taken even when every score is negative:
some phase runs regardless, so pick the least bad.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from pressim.network import Phase, PhaseScheme, RoadNetwork
from pressim.pressure import PressureReport, pressure_report
from pressim.sim import ConfigurationError, SimState


class TieBreak(Enum):
    LOWEST_PHASE_INDEX = "lowest-phase-index"


@dataclass(frozen=True)
class ControllerConfig:
    t_duration: float = 15.0
    tie_break: TieBreak = TieBreak.LOWEST_PHASE_INDEX
    scheme: Optional[PhaseScheme] = None

    def __post_init__(self) -> None:
        if self.t_duration <= 0:
            raise ConfigurationError("t_duration must be positive")


def _argmax_lowest(values: Sequence[float]) -> int:
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best]:
            best = i
    return best


def fixed_time_decide(current_phase: int, phases: Sequence[Phase]) -> int:
    """Next phase in cyclic order."""
    ids = [p.id for p in phases]
    return ids[(ids.index(current_phase) + 1) % len(ids)]


def mp_decide(report: PressureReport, phases: Sequence[Phase]) -> int:
    """Phase with maximum phase pressure."""
    values = [report.phase_pressures[p.id] for p in phases]
    return phases[_argmax_lowest(values)].id


def efficient_mp_decide(report: PressureReport, phases: Sequence[Phase]) -> int:
    """Phase with maximum phase efficient pressure."""
    values = [report.phase_efficient_pressures[p.id] for p in phases]
    return phases[_argmax_lowest(values)].id


class Controller:
    """Base for controllers the engine can poll.

    Subclasses implement ``observe`` (snapshot whatever the decision needs)
    and ``decide``. The episode hooks are no-ops here; learning controllers
    override them.
    """

    def __init__(self, config: Optional[ControllerConfig] = None):
        self.config = config or ControllerConfig()

    @property
    def t_duration(self) -> float:
        return self.config.t_duration

    def observe(self, state: SimState, net: RoadNetwork, intersection: str) -> object:
        raise NotImplementedError

    def decide(self, observation: object, intersection: str) -> int:
        raise NotImplementedError

    def begin_episode(self, sim: object) -> None:
        pass

    def end_episode(self, sim: object) -> None:
        pass


class FixedTimeController(Controller):
    """Equal green for every phase, visited in a fixed cycle."""

    def observe(self, state: SimState, net: RoadNetwork, intersection: str):
        inter = net.intersection_index[intersection]
        return (state.signals[intersection].active, inter.phases)

    def decide(self, observation, intersection: str) -> int:
        current, phases = observation
        return fixed_time_decide(current, phases)


class MaxPressureController(Controller):
    def observe(self, state: SimState, net: RoadNetwork, intersection: str):
        inter = net.intersection_index[intersection]
        return (pressure_report(state, net, intersection), inter.phases)

    def decide(self, observation, intersection: str) -> int:
        report, phases = observation
        return mp_decide(report, phases)


class EfficientMaxPressureController(Controller):
    def observe(self, state: SimState, net: RoadNetwork, intersection: str):
        inter = net.intersection_index[intersection]
        return (pressure_report(state, net, intersection), inter.phases)

    def decide(self, observation, intersection: str) -> int:
        report, phases = observation
        return efficient_mp_decide(report, phases)


CLASSICAL_CONTROLLERS = {
    "fixedtime": FixedTimeController,
    "mp": MaxPressureController,
    "efficient-mp": EfficientMaxPressureController,
}


def make_controllers(
    net: RoadNetwork, name: str, config: Optional[ControllerConfig] = None
) -> dict[str, Controller]:
    """One shared controller instance mapped over every intersection."""
    try:
        cls = CLASSICAL_CONTROLLERS[name]
    except KeyError:
        raise ConfigurationError(f"unknown controller {name!r}") from None
    ctrl = cls(config)
    return {i.id: ctrl for i in net.intersections}
