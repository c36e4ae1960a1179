"""Traffic-state representations and pressure computations.

Pressure of a traffic movement is the queue difference between its entering
lane and the paired downstream lane; phase pressure sums the pressures of
the phase's two movements. Efficient pressure replaces the lane-to-lane
difference with a difference of averages: mean queue over the movement's
entering lanes minus mean queue over all lanes of the receiving road, which
absorbs mid-intersection lane changes into one number per movement.

Downstream queues are read at the receiving road's stop line, the queue a
crossing vehicle actually joins; roads draining to a boundary read 0.

Everything here is a pure function over a state snapshot and is safe to
evaluate concurrently across intersections.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from statistics import fmean
from typing import Optional, Sequence

import numpy as np

from pressim.network import Intersection, Phase, RoadNetwork, TrafficMovement, Turn
from pressim.sim import ConfigurationError, SimState


class StateKind(Enum):
    """The four observation styles a learning controller can be fed."""

    NV = "nv"
    PRESSURE_NV = "pressure-nv"
    PRESSURE_QUEUE = "pressure-queue"
    EFFICIENT_PRESSURE = "ep"


class RewardKind(Enum):
    NEG_INTERSECTION_PRESSURE = "pressure"
    NEG_QUEUE_LENGTH = "queue"


# -- scalar building blocks -------------------------------------------------


def movement_pressure(x_l: int, x_m: int) -> int:
    """Queue difference between an entering lane and its exiting lane."""
    return x_l - x_m


def phase_pressure(p1: int, p2: int) -> int:
    """Sum of the two movement pressures a phase serves."""
    return p1 + p2


def efficient_pressure(entering: Sequence[float], exiting: Sequence[float]) -> float:
    """Mean entering queue minus mean exiting queue for one movement."""
    if not entering or not exiting:
        raise ConfigurationError("efficient_pressure needs non-empty lane sets")
    return fmean(entering) - fmean(exiting)


# -- reading queues from a state snapshot -----------------------------------


def downstream_queue(state: SimState, net: RoadNetwork, lane_id: str) -> int:
    """Queue a vehicle leaving onto this lane would find; 0 past a boundary."""
    target = net.downstream[lane_id]
    return 0 if target is None else len(state.queues[target])


def _require_intersection(net: RoadNetwork, intersection: str) -> Intersection:
    try:
        return net.intersection_index[intersection]
    except KeyError:
        raise ConfigurationError(f"unknown intersection {intersection!r}") from None


def intersection_pressure(state: SimState, net: RoadNetwork, intersection: str) -> int:
    """Total entering queue minus total downstream queue at one junction."""
    inter = _require_intersection(net, intersection)
    entering = sum(len(state.queues[l]) for l in inter.entering_lanes)
    exiting = sum(downstream_queue(state, net, l) for l in inter.exiting_lanes)
    return entering - exiting


@dataclass(frozen=True)
class LaneStats:
    lane: str
    queue: int
    vehicles: int  # queued plus in-transit vehicles headed for this lane


def lane_stats(state: SimState, net: RoadNetwork, road_id: str) -> list[LaneStats]:
    """Per-lane occupancy on one road.

    In-transit vehicles are attributed to the lane they would join if they
    all arrived now, in travel order: least-occupied lane designated for the
    vehicle's next turn, ties to the lowest index. Vehicles on a road that
    drains to a boundary never join a lane and are not attributed.
    """
    road = net.road_index[road_id]
    queue = {l.id: len(state.queues[l.id]) for l in road.lanes}
    extra = {l.id: 0 for l in road.lanes}
    if not net.terminal(road_id):
        virtual = dict(queue)
        for _, vid in state.transit[road_id]:
            v = state.vehicles[vid]
            turn = net.turn_between[(road_id, v.route[v.route_pos + 1])]
            candidates = net.lanes_by_turn[(road_id, turn)]
            pick = candidates[0]
            for c in candidates[1:]:
                if virtual[c] < virtual[pick]:
                    pick = c
            virtual[pick] += 1
            extra[pick] += 1
    return [
        LaneStats(lane=l.id, queue=queue[l.id], vehicles=queue[l.id] + extra[l.id])
        for l in road.lanes
    ]


def _paired_exit_lane(net: RoadNetwork, m: TrafficMovement, entering_lane: str) -> str:
    """Exit lane paired with an entering lane: same index on the receiving
    road, clamped to its lane count."""
    index = net.lane_index[entering_lane][1].index
    receiving = net.lane_index[m.exiting[0]][0]
    return receiving.lanes[min(index, len(receiving.lanes) - 1)].id


def movement_queue_pressure(state: SimState, net: RoadNetwork, m: TrafficMovement) -> int:
    return sum(
        movement_pressure(
            len(state.queues[l]),
            downstream_queue(state, net, _paired_exit_lane(net, m, l)),
        )
        for l in m.entering
    )


def etm_efficient_pressure(state: SimState, net: RoadNetwork, m: TrafficMovement) -> float:
    entering = [len(state.queues[l]) for l in m.entering]
    exiting = [downstream_queue(state, net, l) for l in m.exiting]
    return efficient_pressure(entering, exiting)


def phase_efficient_pressure(state: SimState, net: RoadNetwork, phase: Phase) -> float:
    a, b = (net.movement_index[mid] for mid in phase.movements)
    return etm_efficient_pressure(state, net, a) + etm_efficient_pressure(state, net, b)


# -- per-intersection report for pressure-driven controllers ----------------


@dataclass(frozen=True)
class PressureReport:
    intersection: str
    current_phase: int
    movement_pressures: dict[str, int]  # every movement, by id
    etm_pressures: dict[str, float]  # signalized movements only
    phase_pressures: tuple[int, ...]
    phase_efficient_pressures: tuple[float, ...]
    intersection_pressure: int


def pressure_report(state: SimState, net: RoadNetwork, intersection: str) -> PressureReport:
    inter = _require_intersection(net, intersection)
    mp = {m.id: movement_queue_pressure(state, net, m) for m in inter.movements}
    ep = {
        m.id: etm_efficient_pressure(state, net, m)
        for m in inter.signalized_movements
    }
    return PressureReport(
        intersection=intersection,
        current_phase=state.signals[intersection].active,
        movement_pressures=mp,
        etm_pressures=ep,
        phase_pressures=tuple(
            phase_pressure(mp[p.movements[0]], mp[p.movements[1]])
            for p in inter.phases
        ),
        phase_efficient_pressures=tuple(
            ep[p.movements[0]] + ep[p.movements[1]] for p in inter.phases
        ),
        intersection_pressure=intersection_pressure(state, net, intersection),
    )


REPORT_HEADER = ("tick", "intersection", "phase", "p_s", "ep_s", "P_i")


def report_rows(report: PressureReport, tick: float) -> list[tuple]:
    """One row per phase for the harness CSVs."""
    return [
        (
            tick,
            report.intersection,
            phase,
            report.phase_pressures[phase],
            round(report.phase_efficient_pressures[phase], 6),
            report.intersection_pressure,
        )
        for phase in range(len(report.phase_pressures))
    ]


# -- observation vectors for learning controllers ---------------------------


@dataclass(frozen=True)
class StateVector:
    intersection: str
    kind: StateKind
    phase_onehot: tuple[float, ...]
    features: tuple[float, ...]

    def vector(self) -> np.ndarray:
        return np.asarray(self.features + self.phase_onehot, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.features) + len(self.phase_onehot)


def _movement_nv(stats_cache: dict[str, dict[str, int]], state, net, road_id: str) -> dict[str, int]:
    if road_id not in stats_cache:
        stats_cache[road_id] = {
            s.lane: s.vehicles for s in lane_stats(state, net, road_id)
        }
    return stats_cache[road_id]


def extract_state(
    state: SimState, net: RoadNetwork, intersection: str, kind: StateKind
) -> StateVector:
    """Observation for one intersection: per-movement features plus the
    current-phase one-hot. Feature order follows the signalized movements."""
    if not isinstance(kind, StateKind):
        raise ConfigurationError(f"unknown state kind {kind!r}")
    inter = _require_intersection(net, intersection)
    sig = state.signals[intersection]
    onehot = tuple(
        1.0 if p.id == sig.active else 0.0 for p in inter.phases
    )
    nv_cache: dict[str, dict[str, int]] = {}
    features: list[float] = []
    for m in inter.signalized_movements:
        if kind is StateKind.NV:
            road_id = net.lane_index[m.entering[0]][0].id
            nv = _movement_nv(nv_cache, state, net, road_id)
            features.append(float(sum(nv[l] for l in m.entering)))
        elif kind is StateKind.PRESSURE_NV:
            road_id = net.lane_index[m.entering[0]][0].id
            nv_in = _movement_nv(nv_cache, state, net, road_id)
            recv = net.lane_index[m.exiting[0]][0]
            total = 0
            for l in m.entering:
                paired = _paired_exit_lane(net, m, l)
                if net.terminal(recv.id):
                    down = 0
                else:
                    down = _movement_nv(nv_cache, state, net, recv.id)[paired]
                total += nv_in[l] - down
            features.append(float(total))
        elif kind is StateKind.PRESSURE_QUEUE:
            features.append(float(movement_queue_pressure(state, net, m)))
        else:
            features.append(etm_efficient_pressure(state, net, m))
    return StateVector(
        intersection=intersection,
        kind=kind,
        phase_onehot=onehot,
        features=tuple(features),
    )


def reward(
    state: SimState, net: RoadNetwork, intersection: str, kind: RewardKind
) -> float:
    if kind is RewardKind.NEG_INTERSECTION_PRESSURE:
        return -abs(intersection_pressure(state, net, intersection))
    if kind is RewardKind.NEG_QUEUE_LENGTH:
        inter = _require_intersection(net, intersection)
        return -float(sum(len(state.queues[l]) for l in inter.entering_lanes))
    raise ConfigurationError(f"unknown reward kind {kind!r}")
