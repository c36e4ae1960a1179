"""Immutable road-network domain model for signalized grid networks.

A network is a directed graph of roads running between intersections or
boundary markers. Each road carries an ordered list of lanes (index 0 is the
innermost lane). A traffic movement describes vehicles crossing an
intersection from its entering lanes onto the lanes of one receiving road;
a phase pairs two non-conflicting movements that hold green together.
Right-turn movements are never signalized and are permitted in every phase.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional


class Turn(Enum):
    LEFT = "left"
    THROUGH = "through"
    RIGHT = "right"


class Compass(Enum):
    N = "N"
    E = "E"
    S = "S"
    W = "W"


class PhaseScheme(Enum):
    FOUR = "4-phase"
    EIGHT = "8-phase"

    @property
    def phase_count(self) -> int:
        return 4 if self is PhaseScheme.FOUR else 8


#: File-format marker for a road endpoint that leaves the modeled area.
BOUNDARY = "boundary"

_CLOCKWISE = (Compass.N, Compass.E, Compass.S, Compass.W)

_TURN_CODE = {Turn.THROUGH: "T", Turn.LEFT: "L", Turn.RIGHT: "R"}


def opposite(c: Compass) -> Compass:
    return _CLOCKWISE[(_CLOCKWISE.index(c) + 2) % 4]


def turned_heading(heading: Compass, turn: Turn) -> Compass:
    """Heading after executing a turn, for right-hand traffic."""
    i = _CLOCKWISE.index(heading)
    if turn is Turn.LEFT:
        return _CLOCKWISE[(i - 1) % 4]
    if turn is Turn.RIGHT:
        return _CLOCKWISE[(i + 1) % 4]
    return heading


@dataclass(frozen=True)
class Lane:
    id: str
    road: str
    index: int
    designation: frozenset[Turn]


@dataclass(frozen=True)
class Road:
    id: str
    src: str  # intersection id, or a boundary marker
    dst: str
    length_m: float
    speed_mps: float
    lanes: tuple[Lane, ...]
    heading: Compass

    @property
    def travel_time(self) -> float:
        return self.length_m / self.speed_mps


@dataclass(frozen=True)
class TrafficMovement:
    """Vehicles crossing one intersection: entering lanes -> receiving road.

    ``entering`` holds the approach lanes designated for this turn;
    ``exiting`` holds every lane of the receiving road, since a crossing
    vehicle may land on any of them.
    """

    id: str
    approach: Compass
    turn: Turn
    entering: tuple[str, ...]
    exiting: tuple[str, ...]

    @property
    def signalized(self) -> bool:
        return self.turn is not Turn.RIGHT


@dataclass(frozen=True)
class Phase:
    id: int
    movements: tuple[str, str]


@dataclass(frozen=True)
class Intersection:
    id: str
    entering_lanes: frozenset[str]
    exiting_lanes: frozenset[str]
    movements: tuple[TrafficMovement, ...]
    phases: tuple[Phase, ...]

    @property
    def signalized_movements(self) -> tuple[TrafficMovement, ...]:
        return tuple(m for m in self.movements if m.signalized)

    @property
    def right_turn_movements(self) -> tuple[TrafficMovement, ...]:
        return tuple(m for m in self.movements if not m.signalized)

    def movement(self, movement_id: str) -> TrafficMovement:
        for m in self.movements:
            if m.id == movement_id:
                return m
        raise KeyError(movement_id)


def movements_conflict(a: TrafficMovement, b: TrafficMovement) -> bool:
    """Static conflict test between two movements at one intersection.

    Right turns never conflict; movements from the same approach share a
    signal head; opposite approaches only coexist when running the same
    turn type; perpendicular approaches always cross.
    """
    if a.turn is Turn.RIGHT or b.turn is Turn.RIGHT:
        return False
    if a.approach is b.approach:
        return False
    if a.approach is opposite(b.approach):
        return a.turn is not b.turn
    return True


# Canonical phase tables for a 4-approach intersection, as (approach, turn)
# pairs. The first four are the opposed-pair phases; the 8-phase table adds
# the four split phases serving one approach at a time.
_FOUR_PHASE_TABLE: tuple[tuple[tuple[Compass, Turn], tuple[Compass, Turn]], ...] = (
    ((Compass.N, Turn.THROUGH), (Compass.S, Turn.THROUGH)),
    ((Compass.E, Turn.THROUGH), (Compass.W, Turn.THROUGH)),
    ((Compass.N, Turn.LEFT), (Compass.S, Turn.LEFT)),
    ((Compass.E, Turn.LEFT), (Compass.W, Turn.LEFT)),
)
_EIGHT_PHASE_TABLE = _FOUR_PHASE_TABLE + (
    ((Compass.N, Turn.THROUGH), (Compass.N, Turn.LEFT)),
    ((Compass.S, Turn.THROUGH), (Compass.S, Turn.LEFT)),
    ((Compass.E, Turn.THROUGH), (Compass.E, Turn.LEFT)),
    ((Compass.W, Turn.THROUGH), (Compass.W, Turn.LEFT)),
)


def phase_table(scheme: PhaseScheme) -> tuple[tuple[tuple[Compass, Turn], tuple[Compass, Turn]], ...]:
    return _FOUR_PHASE_TABLE if scheme is PhaseScheme.FOUR else _EIGHT_PHASE_TABLE


class RoadNetwork:
    """Immutable after construction; safe to share across simulations.

    Besides the raw intersections/roads it exposes derived lookup tables:
    ``lane_index`` maps lane id to (road, lane), ``downstream`` maps each
    exiting lane to the lane on which its queue is read (itself for roads
    ending at an interior intersection, ``None`` for boundary sinks), and
    ``turn_between`` maps connected road pairs to the turn linking them.
    """

    def __init__(
        self,
        intersections: Iterable[Intersection],
        roads: Iterable[Road],
        phase_scheme: PhaseScheme,
        downstream: Optional[dict[str, Optional[str]]] = None,
    ):
        self.intersections: tuple[Intersection, ...] = tuple(
            sorted(intersections, key=lambda i: i.id)
        )
        self.roads: tuple[Road, ...] = tuple(sorted(roads, key=lambda r: r.id))
        self.phase_scheme = phase_scheme

        self.intersection_index: dict[str, Intersection] = {
            i.id: i for i in self.intersections
        }
        self.road_index: dict[str, Road] = {r.id: r for r in self.roads}
        self.lane_index: dict[str, tuple[Road, Lane]] = {}
        for road in self.roads:
            for lane in road.lanes:
                self.lane_index[lane.id] = (road, lane)
        self.movement_index: dict[str, TrafficMovement] = {
            m.id: m for i in self.intersections for m in i.movements
        }

        if downstream is None:
            downstream = {}
            for road in self.roads:
                if road.src in self.intersection_index:
                    tail = road.dst if road.dst in self.intersection_index else None
                    for lane in road.lanes:
                        downstream[lane.id] = lane.id if tail else None
        self.downstream: dict[str, Optional[str]] = downstream

        # (entry road, exit road) -> turn, and movement lookup by entry road.
        self.turn_between: dict[tuple[str, str], Turn] = {}
        self.movement_by_entry: dict[tuple[str, str, Turn], TrafficMovement] = {}
        for inter in self.intersections:
            for m in inter.movements:
                entry_road = self.lane_index[m.entering[0]][0].id
                exit_road = self.lane_index[m.exiting[0]][0].id
                self.turn_between[(entry_road, exit_road)] = m.turn
                self.movement_by_entry[(inter.id, entry_road, m.turn)] = m

        self.lanes_by_turn: dict[tuple[str, Turn], tuple[str, ...]] = {}
        for road in self.roads:
            for turn in Turn:
                self.lanes_by_turn[(road.id, turn)] = tuple(
                    l.id for l in road.lanes if turn in l.designation
                )

    def is_boundary(self, node: str) -> bool:
        return node not in self.intersection_index

    def terminal(self, road_id: str) -> bool:
        """True when the road drains to a boundary sink."""
        return self.is_boundary(self.road_index[road_id].dst)

    def approach_roads(self, intersection_id: str) -> tuple[Road, ...]:
        return tuple(r for r in self.roads if r.dst == intersection_id)

    def exit_roads(self, intersection_id: str) -> tuple[Road, ...]:
        return tuple(r for r in self.roads if r.src == intersection_id)

    def entry_roads(self) -> tuple[Road, ...]:
        """Roads entering the network from a boundary source."""
        return tuple(r for r in self.roads if self.is_boundary(r.src))


@dataclass(frozen=True)
class Violation:
    entity: str
    message: str

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return f"{self.entity}: {self.message}"


def validate(net: RoadNetwork) -> list[Violation]:
    """Check every structural invariant; an empty list means well-formed."""
    out: list[Violation] = []

    for road in net.roads:
        if not road.lanes:
            out.append(Violation(road.id, "road has no lanes"))
        if road.length_m <= 0:
            out.append(Violation(road.id, "length must be positive"))
        if road.speed_mps <= 0:
            out.append(Violation(road.id, "free-flow speed must be positive"))
        if net.is_boundary(road.src) and net.is_boundary(road.dst):
            out.append(Violation(road.id, "both endpoints are boundary markers"))
        for endpoint in (road.src, road.dst):
            if net.is_boundary(endpoint) and not _is_boundary_marker(endpoint):
                out.append(
                    Violation(road.id, f"endpoint {endpoint!r} names no intersection")
                )
        for lane in road.lanes:
            if not lane.designation:
                out.append(Violation(lane.id, "lane designation is empty"))
            if lane.index >= len(road.lanes):
                out.append(Violation(lane.id, "lane index exceeds road lane count"))

    for inter in net.intersections:
        if inter.entering_lanes & inter.exiting_lanes:
            out.append(
                Violation(inter.id, "entering and exiting lane sets overlap")
            )
        phase_member_ids = [mid for p in inter.phases for mid in p.movements]
        for m in inter.movements:
            if not m.entering or not m.exiting:
                out.append(Violation(m.id, "movement has empty lane set"))
            if set(m.entering) & set(m.exiting):
                out.append(Violation(m.id, "entering and exiting lanes overlap"))
            if not set(m.entering) <= inter.entering_lanes:
                out.append(Violation(m.id, "entering lanes not in intersection"))
            if not set(m.exiting) <= inter.exiting_lanes:
                out.append(Violation(m.id, "exiting lanes not in intersection"))
            for lane_id in m.entering:
                lane = net.lane_index[lane_id][1]
                if m.turn not in lane.designation:
                    out.append(
                        Violation(m.id, f"lane {lane_id} not designated {m.turn.value}")
                    )
            if m.signalized and m.id not in phase_member_ids:
                out.append(Violation(m.id, "signalized movement in no phase"))
            if not m.signalized and m.id in phase_member_ids:
                out.append(Violation(m.id, "right-turn movement appears in a phase"))
        for phase in inter.phases:
            if len(phase.movements) != 2:
                out.append(
                    Violation(f"{inter.id}/phase{phase.id}", "phase must pair two movements")
                )
                continue
            try:
                a, b = (inter.movement(mid) for mid in phase.movements)
            except KeyError as exc:
                out.append(
                    Violation(f"{inter.id}/phase{phase.id}", f"unknown movement {exc}")
                )
                continue
            if movements_conflict(a, b):
                out.append(
                    Violation(
                        f"{inter.id}/phase{phase.id}",
                        f"conflicting movements {a.id} and {b.id}",
                    )
                )

    for road in net.roads:
        if road.src not in net.intersection_index and not _is_boundary_marker(road.src):
            continue  # already reported above
        if road.src in net.intersection_index and road.dst in net.intersection_index:
            for lane in road.lanes:
                target = net.downstream.get(lane.id)
                if target is None:
                    out.append(
                        Violation(lane.id, "interior exiting lane has no downstream lane")
                    )
                elif isinstance(target, str):
                    if target not in net.lane_index:
                        out.append(
                            Violation(lane.id, f"downstream lane {target} does not exist")
                        )
                else:  # a collection: ambiguous mapping
                    out.append(
                        Violation(
                            lane.id,
                            f"maps to {len(tuple(target))} downstream lanes, expected exactly 1",
                        )
                    )
    return out


def _is_boundary_marker(node: str) -> bool:
    return node == BOUNDARY or node.startswith(f"{BOUNDARY}:")


# ---------------------------------------------------------------------------
# Grid construction


def _lane_designations(lanes_per_approach: int) -> tuple[frozenset[Turn], ...]:
    if lanes_per_approach == 3:
        return (
            frozenset({Turn.LEFT}),
            frozenset({Turn.THROUGH}),
            frozenset({Turn.RIGHT}),
        )
    if lanes_per_approach == 1:
        return (frozenset({Turn.LEFT, Turn.THROUGH, Turn.RIGHT}),)
    raise ValueError("lanes_per_approach must be 1 or 3")


def build_grid(
    rows: int,
    cols: int,
    ew_length_m: float,
    sn_length_m: float,
    scheme: PhaseScheme = PhaseScheme.FOUR,
    *,
    speed_mps: float = 10.0,
    lanes_per_approach: int = 3,
) -> RoadNetwork:
    """Build a rows x cols grid of 4-approach intersections.

    East-west road segments are ``ew_length_m`` long and south-north segments
    ``sn_length_m``. Every grid-edge approach connects to a virtual boundary
    source/sink. Each approach carries ``lanes_per_approach`` lanes (3 gives
    one exclusive lane per turn; 1 gives a single shared lane).
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid must have at least one row and one column")
    if ew_length_m <= 0 or sn_length_m <= 0:
        raise ValueError("road lengths must be positive")
    if speed_mps <= 0:
        raise ValueError("free-flow speed must be positive")
    designations = _lane_designations(lanes_per_approach)

    def node(r: int, c: int) -> str:
        return f"n{r}_{c}"

    def neighbor(r: int, c: int, side: Compass) -> str:
        if side is Compass.N:
            return node(r - 1, c) if r > 0 else f"{BOUNDARY}:N{c}"
        if side is Compass.S:
            return node(r + 1, c) if r < rows - 1 else f"{BOUNDARY}:S{c}"
        if side is Compass.W:
            return node(r, c - 1) if c > 0 else f"{BOUNDARY}:W{r}"
        return node(r, c + 1) if c < cols - 1 else f"{BOUNDARY}:E{r}"

    roads: dict[str, Road] = {}

    def add_road(src: str, dst: str, heading: Compass) -> Road:
        rid = f"{src}__{dst}"
        if rid in roads:
            return roads[rid]
        length = ew_length_m if heading in (Compass.E, Compass.W) else sn_length_m
        lanes = tuple(
            Lane(id=f"{rid}#{i}", road=rid, index=i, designation=d)
            for i, d in enumerate(designations)
        )
        road = Road(
            id=rid,
            src=src,
            dst=dst,
            length_m=length,
            speed_mps=speed_mps,
            lanes=lanes,
            heading=heading,
        )
        roads[rid] = road
        return road

    intersections: list[Intersection] = []
    for r in range(rows):
        for c in range(cols):
            nid = node(r, c)
            approach: dict[Compass, Road] = {}
            exit_: dict[Compass, Road] = {}
            for side in _CLOCKWISE:
                nb = neighbor(r, c, side)
                approach[side] = add_road(nb, nid, opposite(side))
                exit_[side] = add_road(nid, nb, side)

            movements: list[TrafficMovement] = []
            by_key: dict[tuple[Compass, Turn], str] = {}
            for side in _CLOCKWISE:
                heading_in = opposite(side)
                for turn in (Turn.THROUGH, Turn.LEFT, Turn.RIGHT):
                    out_side = turned_heading(heading_in, turn)
                    entering = tuple(
                        l.id for l in approach[side].lanes if turn in l.designation
                    )
                    exiting = tuple(l.id for l in exit_[out_side].lanes)
                    mid = f"{nid}:{side.value}{_TURN_CODE[turn]}"
                    movements.append(
                        TrafficMovement(
                            id=mid,
                            approach=side,
                            turn=turn,
                            entering=entering,
                            exiting=exiting,
                        )
                    )
                    by_key[(side, turn)] = mid

            phases = tuple(
                Phase(id=i, movements=(by_key[a], by_key[b]))
                for i, (a, b) in enumerate(phase_table(scheme))
            )
            entering_lanes = frozenset(
                l.id for road in approach.values() for l in road.lanes
            )
            exiting_lanes = frozenset(
                l.id for road in exit_.values() for l in road.lanes
            )
            intersections.append(
                Intersection(
                    id=nid,
                    entering_lanes=entering_lanes,
                    exiting_lanes=exiting_lanes,
                    movements=tuple(movements),
                    phases=phases,
                )
            )

    return RoadNetwork(intersections, roads.values(), scheme)


def with_phase_scheme(net: RoadNetwork, scheme: PhaseScheme) -> RoadNetwork:
    """Rebuild the phase tables of a 4-approach network under a new scheme."""
    if scheme is net.phase_scheme:
        return net
    rebuilt = []
    for inter in net.intersections:
        by_key = {(m.approach, m.turn): m.id for m in inter.movements}
        phases = tuple(
            Phase(id=i, movements=(by_key[a], by_key[b]))
            for i, (a, b) in enumerate(phase_table(scheme))
        )
        rebuilt.append(
            Intersection(
                id=inter.id,
                entering_lanes=inter.entering_lanes,
                exiting_lanes=inter.exiting_lanes,
                movements=inter.movements,
                phases=phases,
            )
        )
    return RoadNetwork(rebuilt, net.roads, scheme, downstream=dict(net.downstream))


# ---------------------------------------------------------------------------
# Serialization


def network_to_dict(net: RoadNetwork) -> dict:
    return {
        "phase_scheme": net.phase_scheme.value,
        "roads": [
            {
                "id": r.id,
                "from": r.src,
                "to": r.dst,
                "length_m": r.length_m,
                "speed_mps": r.speed_mps,
                "lanes": [
                    {"index": l.index, "designation": sorted(t.value for t in l.designation)}
                    for l in r.lanes
                ],
            }
            for r in net.roads
        ],
        "intersections": [
            {
                "id": i.id,
                "entering_lanes": sorted(i.entering_lanes),
                "exiting_lanes": sorted(i.exiting_lanes),
                "movements": [
                    {
                        "id": m.id,
                        "approach": m.approach.value,
                        "turn": m.turn.value,
                        "entering": list(m.entering),
                        "exiting": list(m.exiting),
                    }
                    for m in i.movements
                ],
                "phases": [
                    {"id": p.id, "movements": list(p.movements)} for p in i.phases
                ],
            }
            for i in net.intersections
        ],
    }


def network_from_dict(doc: dict) -> RoadNetwork:
    scheme = PhaseScheme(doc["phase_scheme"])
    intersection_ids = {i["id"] for i in doc["intersections"]}

    intersections = []
    lane_to_approach: dict[str, Compass] = {}
    movements_by_exit_lane: dict[str, tuple[Compass, Turn]] = {}
    for idoc in doc["intersections"]:
        movements = tuple(
            TrafficMovement(
                id=m["id"],
                approach=Compass(m["approach"]),
                turn=Turn(m["turn"]),
                entering=tuple(m["entering"]),
                exiting=tuple(m["exiting"]),
            )
            for m in idoc["movements"]
        )
        for m in movements:
            for lane_id in m.entering:
                lane_to_approach[lane_id] = m.approach
            for lane_id in m.exiting:
                movements_by_exit_lane[lane_id] = (m.approach, m.turn)
        intersections.append(
            Intersection(
                id=idoc["id"],
                entering_lanes=frozenset(idoc["entering_lanes"]),
                exiting_lanes=frozenset(idoc["exiting_lanes"]),
                movements=movements,
                phases=tuple(
                    Phase(id=p["id"], movements=tuple(p["movements"]))
                    for p in idoc["phases"]
                ),
            )
        )

    roads = []
    for rdoc in doc["roads"]:
        rid = rdoc["id"]
        lanes = tuple(
            Lane(
                id=f"{rid}#{l['index']}",
                road=rid,
                index=l["index"],
                designation=frozenset(Turn(t) for t in l["designation"]),
            )
            for l in rdoc["lanes"]
        )
        # Heading is not stored: derive it from the movement tables. A road
        # ending at an intersection carries that intersection's approach
        # lanes; a road leaving one is some movement's receiving road.
        heading: Optional[Compass] = None
        if rdoc["to"] in intersection_ids:
            for lane in lanes:
                if lane.id in lane_to_approach:
                    heading = opposite(lane_to_approach[lane.id])
                    break
        if heading is None:
            for lane in lanes:
                key = movements_by_exit_lane.get(lane.id)
                if key is not None:
                    approach, turn = key
                    heading = turned_heading(opposite(approach), turn)
                    break
        if heading is None:
            raise ValueError(f"cannot derive heading for road {rid}")
        roads.append(
            Road(
                id=rid,
                src=rdoc["from"],
                dst=rdoc["to"],
                length_m=float(rdoc["length_m"]),
                speed_mps=float(rdoc["speed_mps"]),
                lanes=lanes,
                heading=heading,
            )
        )

    return RoadNetwork(intersections, roads, scheme)


def save_network(net: RoadNetwork, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1))


def load_network(path: str | Path) -> RoadNetwork:
    return network_from_dict(json.loads(Path(path).read_text()))


def default_lane_capacity(road: Road, jam_spacing_m: float = 7.5) -> int:
    """Queued-vehicle capacity of one lane at standard jam spacing."""
    return max(1, math.floor(road.length_m / jam_spacing_m))
