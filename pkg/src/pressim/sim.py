"""Deterministic discrete-time point-queue traffic simulation.

Vehicles follow fixed routes of road ids. A vehicle entering a road travels
at free-flow speed for ``length / speed`` seconds, then joins the FIFO queue
of a lane at the downstream stop line (choosing the least-occupied lane
designated for its next turn). Green movements discharge queued vehicles at
the saturation rate, one vehicle per ``saturation_headway`` seconds, gated
by spare queue capacity downstream. Roads draining to a boundary are
infinite sinks: their vehicles finish on arrival and never queue.

Signal timing: a phase holds at least ``t_duration`` seconds of green. A
controller decision that changes phase triggers a yellow interval followed
by an all-red interval during which no signalized movement discharges;
re-selecting the running phase restarts its green without a transition.
Unsignalized right turns discharge in every phase and during transitions.

The engine draws no random numbers: identical inputs give identical
trajectories tick for tick.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Deque, Mapping, Optional, Protocol

from pressim.network import RoadNetwork, Turn

_EPS = 1e-9


class ConfigurationError(ValueError):
    """Invalid simulation input: bad config values, routes, or phase ids."""


@dataclass(frozen=True)
class SimConfig:
    tick: float = 1.0
    yellow: float = 3.0
    all_red: float = 2.0
    saturation_headway: float = 2.0
    lane_capacity: Optional[int] = None  # None: floor(length / 7.5 m) per lane
    episode_length: float = 3600.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tick <= 0:
            raise ConfigurationError("tick must be positive")
        if self.yellow < 0 or self.all_red < 0:
            raise ConfigurationError("transition intervals must be non-negative")
        if self.saturation_headway <= 0:
            raise ConfigurationError("saturation_headway must be positive")
        if self.lane_capacity is not None and self.lane_capacity < 1:
            raise ConfigurationError("lane_capacity must be at least 1")
        if self.episode_length <= 0:
            raise ConfigurationError("episode_length must be positive")


@dataclass(frozen=True)
class FlowSpec:
    """Vehicles released along ``route`` every ``headway_s`` seconds.

    Release times are the simulation ticks t with start_s <= t <= end_s and
    (t - start_s) divisible by headway_s. The route must run boundary to
    boundary.
    """

    route: tuple[str, ...]
    start_s: float
    end_s: float
    headway_s: float


class VehicleStatus(Enum):
    IN_TRANSIT = "in_transit"
    QUEUED = "queued"
    FINISHED = "finished"


@dataclass
class Vehicle:
    id: int
    route: tuple[str, ...]
    route_pos: int
    entry_time: float
    exit_time: Optional[float] = None
    status: VehicleStatus = VehicleStatus.IN_TRANSIT
    lane: Optional[str] = None


class TransitionStage(Enum):
    YELLOW = "yellow"
    ALL_RED = "all_red"


@dataclass
class Transition:
    stage: TransitionStage
    remaining: float
    next_phase: int


@dataclass
class SignalState:
    active: int = 0
    elapsed: float = 0.0
    transition: Optional[Transition] = None


@dataclass
class Counters:
    spawned: int = 0
    blocked: int = 0
    finished: int = 0
    decisions: int = 0


@dataclass
class SimState:
    clock: float = 0.0
    queues: dict[str, Deque[int]] = field(default_factory=dict)
    transit: dict[str, Deque[tuple[float, int]]] = field(default_factory=dict)
    signals: dict[str, SignalState] = field(default_factory=dict)
    vehicles: dict[int, Vehicle] = field(default_factory=dict)
    counters: Counters = field(default_factory=Counters)
    total_queued: int = 0
    max_total_queue: int = 0

    def queue_length(self, lane_id: str) -> int:
        return len(self.queues[lane_id])

    def in_transit_count(self) -> int:
        return sum(len(dq) for dq in self.transit.values())


class Controller(Protocol):
    """What the engine needs from a signal controller."""

    t_duration: float

    def observe(self, state: SimState, net: RoadNetwork, intersection: str) -> object: ...

    def decide(self, observation: object, intersection: str) -> int: ...


@dataclass(frozen=True)
class _MovementMeta:
    id: str
    signalized: bool
    entering: tuple[str, ...]
    receiving_road: str
    receiving_terminal: bool


class Simulation:
    """One episode of network, demand, and signal state.

    Construct a fresh instance per episode; the constructor validates the
    flows against the network and raises ConfigurationError on any broken
    route. ``step(controllers)`` advances one tick; controllers is a mapping
    from intersection id to a controller (missing ids keep phase 0 forever).
    """

    def __init__(self, net: RoadNetwork, flows: list[FlowSpec], config: SimConfig):
        self.net = net
        self.flows = list(flows)
        self.config = config
        problems = validate_flows(net, self.flows)
        if problems:
            raise ConfigurationError("; ".join(problems))

        self._travel_time = {r.id: r.travel_time for r in net.roads}
        self._capacity = {
            r.id: config.lane_capacity
            if config.lane_capacity is not None
            else max(1, math.floor(r.length_m / 7.5))
            for r in net.roads
        }
        self._terminal = {r.id: net.terminal(r.id) for r in net.roads}
        self._road_order = tuple(r.id for r in net.roads)
        self._intersection_ids = [i.id for i in net.intersections]
        self._movements: dict[str, tuple[_MovementMeta, ...]] = {}
        self._phase_movements: dict[str, tuple[frozenset[str], ...]] = {}
        for inter in net.intersections:
            metas = []
            for m in inter.movements:
                recv_road = net.lane_index[m.exiting[0]][0]
                metas.append(
                    _MovementMeta(
                        id=m.id,
                        signalized=m.signalized,
                        entering=m.entering,
                        receiving_road=recv_road.id,
                        receiving_terminal=net.terminal(recv_road.id),
                    )
                )
            self._movements[inter.id] = tuple(metas)
            self._phase_movements[inter.id] = tuple(
                frozenset(p.movements) for p in inter.phases
            )
        # entry turn candidates per flow, resolved once
        self._entry_lanes = [
            net.lanes_by_turn[(f.route[0], net.turn_between[(f.route[0], f.route[1])])]
            for f in self.flows
        ]

        self.state = SimState(
            queues={l: deque() for l in net.lane_index},
            transit={r.id: deque() for r in net.roads},
            signals={i: SignalState() for i in self._intersection_ids},
        )
        self._credit: dict[str, float] = {
            m.id: 0.0 for metas in self._movements.values() for m in metas
        }
        self._next_vehicle_id = 0

    # -- tick ---------------------------------------------------------------

    def step(self, controllers: Mapping[str, Controller]) -> None:
        st = self.state
        st.clock += self.config.tick
        self._advance_signals()
        self._spawn(st.clock)
        self._advance_transit()
        self._poll(controllers)
        self._discharge()
        if st.total_queued > st.max_total_queue:
            st.max_total_queue = st.total_queued

    def run(self, controllers: Mapping[str, Controller]) -> None:
        while self.state.clock < self.config.episode_length - _EPS:
            self.step(controllers)

    # -- signal timing ------------------------------------------------------

    def _advance_signals(self) -> None:
        tick = self.config.tick
        for sig in self.state.signals.values():
            if sig.transition is not None:
                sig.transition.remaining -= tick
                self._normalize_transition(sig)
            else:
                sig.elapsed += tick

    def _normalize_transition(self, sig: SignalState) -> None:
        while sig.transition is not None and sig.transition.remaining <= _EPS:
            tr = sig.transition
            if tr.stage is TransitionStage.YELLOW:
                tr.stage = TransitionStage.ALL_RED
                tr.remaining += self.config.all_red
            else:
                sig.active = tr.next_phase
                sig.elapsed = 0.0
                sig.transition = None

    def set_phase(self, intersection: str, phase: int) -> None:
        """Request a phase; no-op while a transition is underway."""
        sig = self.state.signals[intersection]
        n_phases = len(self._phase_movements[intersection])
        if not 0 <= phase < n_phases:
            raise ConfigurationError(
                f"{intersection}: phase {phase} out of range 0..{n_phases - 1}"
            )
        if sig.transition is not None:
            return
        if phase == sig.active:
            sig.elapsed = 0.0
            return
        sig.transition = Transition(TransitionStage.YELLOW, self.config.yellow, phase)
        self._normalize_transition(sig)

    # -- demand -------------------------------------------------------------

    def _spawn(self, now: float) -> None:
        st = self.state
        for fi, flow in enumerate(self.flows):
            if now < flow.start_s - _EPS or now > flow.end_s + _EPS:
                continue
            rem = (now - flow.start_s) % flow.headway_s
            if rem > _EPS and flow.headway_s - rem > _EPS:
                continue
            st.counters.spawned += 1
            entry_road = flow.route[0]
            lane = self._pick_lane(self._entry_lanes[fi])
            if len(st.queues[lane]) >= self._capacity[entry_road]:
                st.counters.blocked += 1
                continue
            vid = self._next_vehicle_id
            self._next_vehicle_id += 1
            st.vehicles[vid] = Vehicle(
                id=vid, route=flow.route, route_pos=0, entry_time=now
            )
            st.transit[entry_road].append((now + self._travel_time[entry_road], vid))

    def _pick_lane(self, candidates: tuple[str, ...]) -> str:
        queues = self.state.queues
        best = candidates[0]
        best_len = len(queues[best])
        for lane in candidates[1:]:
            n = len(queues[lane])
            if n < best_len:
                best, best_len = lane, n
        return best

    # -- movement along roads ----------------------------------------------

    def _advance_transit(self) -> None:
        st = self.state
        clock = st.clock
        for road_id in self._road_order:
            dq = st.transit[road_id]
            if not dq or dq[0][0] > clock + _EPS:
                continue
            terminal = self._terminal[road_id]
            while dq and dq[0][0] <= clock + _EPS:
                _, vid = dq[0]
                v = st.vehicles[vid]
                if terminal:
                    dq.popleft()
                    v.status = VehicleStatus.FINISHED
                    v.exit_time = clock
                    st.counters.finished += 1
                    continue
                next_road = v.route[v.route_pos + 1]
                turn = self.net.turn_between[(road_id, next_road)]
                lane = self._pick_lane(self.net.lanes_by_turn[(road_id, turn)])
                if len(st.queues[lane]) >= self._capacity[road_id]:
                    break  # stop line full: road holds this and all behind it
                dq.popleft()
                st.queues[lane].append(vid)
                st.total_queued += 1
                v.status = VehicleStatus.QUEUED
                v.lane = lane

    # -- control ------------------------------------------------------------

    def _poll(self, controllers: Mapping[str, Controller]) -> None:
        st = self.state
        for iid in self._intersection_ids:
            ctrl = controllers.get(iid)
            if ctrl is None:
                continue
            sig = st.signals[iid]
            if sig.transition is not None or sig.elapsed + _EPS < ctrl.t_duration:
                continue
            obs = ctrl.observe(st, self.net, iid)
            action = ctrl.decide(obs, iid)
            st.counters.decisions += 1
            self.set_phase(iid, action)

    # -- discharge ----------------------------------------------------------

    def _discharge(self) -> None:
        st = self.state
        gain = self.config.tick / self.config.saturation_headway
        credit = self._credit
        for iid in self._intersection_ids:
            sig = st.signals[iid]
            active: frozenset[str] = (
                self._phase_movements[iid][sig.active]
                if sig.transition is None
                else frozenset()
            )
            for m in self._movements[iid]:
                if m.signalized and m.id not in active:
                    continue
                c = credit[m.id] + gain
                while c >= 1.0 - _EPS:
                    if not self._serve_one(m):
                        break
                    c -= 1.0
                credit[m.id] = min(c, 1.0)

    def _serve_one(self, m: _MovementMeta) -> bool:
        st = self.state
        for lane_id in m.entering:
            q = st.queues[lane_id]
            if not q:
                continue
            v = st.vehicles[q[0]]
            next_road = v.route[v.route_pos + 1]
            if next_road != m.receiving_road:
                continue
            if not m.receiving_terminal:
                turn2 = self.net.turn_between[(next_road, v.route[v.route_pos + 2])]
                target = self._pick_lane(self.net.lanes_by_turn[(next_road, turn2)])
                if len(st.queues[target]) >= self._capacity[next_road]:
                    continue
            q.popleft()
            st.total_queued -= 1
            v.route_pos += 1
            v.status = VehicleStatus.IN_TRANSIT
            v.lane = None
            st.transit[next_road].append(
                (st.clock + self._travel_time[next_road], v.id)
            )
            return True
        return False

    # -- inspection ---------------------------------------------------------

    def conservation_terms(self) -> dict[str, int]:
        st = self.state
        return {
            "spawned": st.counters.spawned,
            "finished": st.counters.finished,
            "in_transit": st.in_transit_count(),
            "queued": st.total_queued,
            "blocked": st.counters.blocked,
        }

    def state_digest(self) -> str:
        """Hash of the full dynamic state; equal digests mean equal runs."""
        st = self.state
        doc = {
            "clock": round(st.clock, 9),
            "queues": {l: list(q) for l, q in sorted(st.queues.items())},
            "transit": {
                r: [[round(t, 9), v] for t, v in dq]
                for r, dq in sorted(st.transit.items())
            },
            "signals": {
                i: [
                    s.active,
                    round(s.elapsed, 9),
                    s.transition.stage.value if s.transition else None,
                    round(s.transition.remaining, 9) if s.transition else None,
                    s.transition.next_phase if s.transition else None,
                ]
                for i, s in sorted(st.signals.items())
            },
            "credit": {m: round(c, 9) for m, c in sorted(self._credit.items())},
            "vehicles": [
                [v.id, v.route_pos, v.status.value]
                for v in st.vehicles.values()
            ],
            "counters": [
                st.counters.spawned,
                st.counters.blocked,
                st.counters.finished,
                st.counters.decisions,
                st.max_total_queue,
            ],
        }
        payload = json.dumps(doc, separators=(",", ":"), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Flow validation and serialization


def validate_flows(net: RoadNetwork, flows: list[FlowSpec]) -> list[str]:
    problems = []
    for i, f in enumerate(flows):
        tag = f"flow[{i}]"
        if len(f.route) < 2:
            problems.append(f"{tag}: route needs at least 2 roads")
            continue
        missing = [r for r in f.route if r not in net.road_index]
        if missing:
            problems.append(f"{tag}: unknown roads {missing}")
            continue
        first, last = net.road_index[f.route[0]], net.road_index[f.route[-1]]
        if not net.is_boundary(first.src):
            problems.append(f"{tag}: route must start at a boundary entry road")
        if not net.is_boundary(last.dst):
            problems.append(f"{tag}: route must end at a boundary exit road")
        for a, b in zip(f.route, f.route[1:]):
            if net.road_index[a].dst != net.road_index[b].src:
                problems.append(f"{tag}: {a} does not connect to {b}")
            elif (a, b) not in net.turn_between:
                problems.append(f"{tag}: no movement links {a} to {b}")
        if f.headway_s <= 0:
            problems.append(f"{tag}: headway_s must be positive")
        if f.end_s < f.start_s:
            problems.append(f"{tag}: end_s before start_s")
    return problems


def flows_to_list(flows: list[FlowSpec]) -> list[dict]:
    return [
        {
            "route": list(f.route),
            "start_s": f.start_s,
            "end_s": f.end_s,
            "headway_s": f.headway_s,
        }
        for f in flows
    ]


def flows_from_list(doc: object) -> list[FlowSpec]:
    if isinstance(doc, dict):
        doc = doc["flows"]
    if not isinstance(doc, list):
        raise ConfigurationError("flow file must hold a list of flow records")
    return [
        FlowSpec(
            route=tuple(rec["route"]),
            start_s=float(rec["start_s"]),
            end_s=float(rec["end_s"]),
            headway_s=float(rec["headway_s"]),
        )
        for rec in doc
    ]


def save_flows(flows: list[FlowSpec], path: str | Path) -> None:
    Path(path).write_text(json.dumps(flows_to_list(flows), indent=1))


def load_flows(path: str | Path) -> list[FlowSpec]:
    return flows_from_list(json.loads(Path(path).read_text()))
