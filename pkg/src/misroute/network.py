"""Road networks and trip tables in the TNTP benchmark text format.

Node ids are 0-based internally; the files use 1-based ids. Edge ids are the
0-based position of the link row in the network file.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TntpParseError",
    "EdgeSpec",
    "RoadNetwork",
    "Trip",
    "parse_tntp_net",
    "parse_tntp_trips",
    "format_tntp_net",
    "format_tntp_trips",
    "load_network",
    "load_trips",
    "scale_demand",
    "total_demand",
    "trip_sizes",
]

_META_RE = re.compile(r"^<([^<>]+)>\s*(.*)$")


class TntpParseError(ValueError):
    """A TNTP file violated the format contract.

    The message names the offending 1-based line number when one applies.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class EdgeSpec:
    """One directed link with its volume-delay parameters.

    Travel time at load n is free_flow_time * (1 + b * (n / capacity) ** power).
    """

    index: int
    src: int
    dst: int
    free_flow_time: float
    capacity: float
    b: float
    power: float

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError(f"edge {self.index}: self-loop at node {self.src}")
        if self.src < 0 or self.dst < 0:
            raise ValueError(f"edge {self.index}: negative node id")
        if not self.free_flow_time > 0:
            raise ValueError(f"edge {self.index}: free-flow time must be positive")
        if not self.capacity > 0:
            raise ValueError(f"edge {self.index}: capacity must be positive")
        if self.b < 0:
            raise ValueError(f"edge {self.index}: delay coefficient must be nonnegative")
        if self.power < 0:
            raise ValueError(f"edge {self.index}: delay exponent must be nonnegative")


@dataclass(frozen=True, eq=False)
class RoadNetwork:
    """A directed road graph with dense per-edge parameter arrays."""

    node_count: int
    edges: tuple[EdgeSpec, ...]
    out_edges: tuple[tuple[int, ...], ...]
    src: np.ndarray
    dst: np.ndarray
    free_flow_time: np.ndarray
    capacity: np.ndarray
    b: np.ndarray
    power: np.ndarray

    @classmethod
    def from_edges(cls, node_count: int, edges) -> "RoadNetwork":
        edges = tuple(edges)
        if node_count < 1:
            raise ValueError("network needs at least one node")
        out: list[list[int]] = [[] for _ in range(node_count)]
        for e in edges:
            if e.src >= node_count or e.dst >= node_count:
                raise ValueError(f"edge {e.index}: endpoint beyond node count {node_count}")
            out[e.src].append(e.index)
        return cls(
            node_count=node_count,
            edges=edges,
            out_edges=tuple(tuple(lst) for lst in out),
            src=np.array([e.src for e in edges], dtype=np.int64),
            dst=np.array([e.dst for e in edges], dtype=np.int64),
            free_flow_time=np.array([e.free_flow_time for e in edges], dtype=np.float64),
            capacity=np.array([e.capacity for e in edges], dtype=np.float64),
            b=np.array([e.b for e in edges], dtype=np.float64),
            power=np.array([e.power for e in edges], dtype=np.float64),
        )

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RoadNetwork):
            return NotImplemented
        return self.node_count == other.node_count and self.edges == other.edges

    def __repr__(self) -> str:
        return f"RoadNetwork(nodes={self.node_count}, edges={self.edge_count})"


@dataclass(frozen=True)
class Trip:
    """A block of `size` vehicles sharing one origin-destination pair."""

    origin: int
    dest: int
    size: float

    def __post_init__(self):
        if self.origin == self.dest:
            raise ValueError("trip origin equals destination")
        if not self.size > 0:
            raise ValueError("trip size must be positive")


def _parse_number(token: str, lineno: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise TntpParseError(f"non-numeric {what} {token!r}", lineno) from None


def _parse_node_id(token: str, lineno: int, limit: int, what: str) -> int:
    value = _parse_number(token, lineno, what)
    node = int(value)
    if node != value:
        raise TntpParseError(f"{what} {token!r} is not an integer", lineno)
    if not 1 <= node <= limit:
        raise TntpParseError(f"{what} {node} outside 1..{limit}", lineno)
    return node - 1


def parse_tntp_net(text: str) -> RoadNetwork:
    """Parse a `_net.tntp` file body into a RoadNetwork.

    Requires the <NUMBER OF NODES> and <NUMBER OF LINKS> metadata entries and
    exactly the declared number of link rows. Comment lines start with `~`.
    """
    node_count = None
    link_count = None
    link_count_line = None
    edges: list[EdgeSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("~"):
            continue
        meta = _META_RE.match(line)
        if meta:
            name = meta.group(1).strip().upper()
            value = meta.group(2).strip().rstrip(";").strip()
            if name == "NUMBER OF NODES":
                try:
                    node_count = int(value)
                except ValueError:
                    raise TntpParseError("malformed header: bad <NUMBER OF NODES>", lineno) from None
            elif name == "NUMBER OF LINKS":
                try:
                    link_count = int(value)
                except ValueError:
                    raise TntpParseError("malformed header: bad <NUMBER OF LINKS>", lineno) from None
                link_count_line = lineno
            continue
        if node_count is None or link_count is None:
            raise TntpParseError(
                "malformed header: link row before <NUMBER OF NODES>/<NUMBER OF LINKS>", lineno
            )
        fields = line.rstrip(";").split()
        if len(fields) < 7:
            raise TntpParseError(f"link row has {len(fields)} fields, expected at least 7", lineno)
        src = _parse_node_id(fields[0], lineno, node_count, "init node")
        dst = _parse_node_id(fields[1], lineno, node_count, "term node")
        capacity = _parse_number(fields[2], lineno, "capacity")
        fft = _parse_number(fields[4], lineno, "free-flow time")
        coeff = _parse_number(fields[5], lineno, "delay coefficient")
        power = _parse_number(fields[6], lineno, "delay exponent")
        try:
            edges.append(
                EdgeSpec(
                    index=len(edges),
                    src=src,
                    dst=dst,
                    free_flow_time=fft,
                    capacity=capacity,
                    b=coeff,
                    power=power,
                )
            )
        except ValueError as err:
            raise TntpParseError(str(err), lineno) from None
    if node_count is None or link_count is None:
        raise TntpParseError("malformed header: missing <NUMBER OF NODES> or <NUMBER OF LINKS>")
    if len(edges) != link_count:
        raise TntpParseError(
            f"metadata declares {link_count} links but file contains {len(edges)}",
            link_count_line,
        )
    return RoadNetwork.from_edges(node_count, edges)


def parse_tntp_trips(text: str) -> list[Trip]:
    """Parse a `_trips.tntp` file body into a trip list.

    Zero flows and diagonal (origin == destination) entries are dropped.
    Trips are ordered by origin block, then by appearance within the block.
    """
    zones = None
    origin = None
    trips: list[Trip] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("~"):
            continue
        meta = _META_RE.match(line)
        if meta:
            name = meta.group(1).strip().upper()
            value = meta.group(2).strip().rstrip(";").strip()
            if name == "NUMBER OF ZONES":
                try:
                    zones = int(value)
                except ValueError:
                    raise TntpParseError("malformed header: bad <NUMBER OF ZONES>", lineno) from None
            continue
        if line.lower().startswith("origin"):
            if zones is None:
                raise TntpParseError("malformed header: Origin block before <NUMBER OF ZONES>", lineno)
            origin = _parse_node_id(line[len("origin") :].strip(), lineno, zones, "origin zone")
            continue
        if origin is None:
            raise TntpParseError("destination row outside any Origin block", lineno)
        for chunk in line.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            if ":" not in chunk:
                raise TntpParseError(f"malformed destination entry {chunk!r}", lineno)
            dest_token, flow_token = chunk.split(":", 1)
            dest = _parse_node_id(dest_token.strip(), lineno, zones, "destination zone")
            flow = _parse_number(flow_token.strip(), lineno, "flow")
            if flow < 0:
                raise TntpParseError(f"negative flow {flow!r}", lineno)
            if flow == 0 or dest == origin:
                continue
            trips.append(Trip(origin=origin, dest=dest, size=flow))
    if zones is None:
        raise TntpParseError("malformed header: missing <NUMBER OF ZONES>")
    return trips


def _fmt(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def format_tntp_net(network: RoadNetwork) -> str:
    """Serialize back to the TNTP link format. Reparsing yields an equal network."""
    lines = [
        f"<NUMBER OF ZONES> {network.node_count}",
        f"<NUMBER OF NODES> {network.node_count}",
        "<FIRST THRU NODE> 1",
        f"<NUMBER OF LINKS> {network.edge_count}",
        "<END OF METADATA>",
        "",
        "~ \tinit node \tterm node \tcapacity \tlength \tfree flow time \tb \tpower \tspeed limit \ttoll \tlink type \t;",
    ]
    for e in network.edges:
        lines.append(
            "\t"
            + "\t".join(
                [
                    str(e.src + 1),
                    str(e.dst + 1),
                    _fmt(e.capacity),
                    _fmt(e.free_flow_time),
                    _fmt(e.free_flow_time),
                    _fmt(e.b),
                    _fmt(e.power),
                    "0",
                    "0",
                    "1",
                ]
            )
            + "\t;"
        )
    return "\n".join(lines) + "\n"


def format_tntp_trips(trips: list[Trip], zones: int) -> str:
    """Serialize a trip list back to the TNTP trips format."""
    total = total_demand(trips)
    lines = [
        f"<NUMBER OF ZONES> {zones}",
        f"<TOTAL OD FLOW> {_fmt(total)}",
        "<END OF METADATA>",
        "",
    ]
    by_origin: dict[int, list[Trip]] = {}
    for t in trips:
        by_origin.setdefault(t.origin, []).append(t)
    for origin in sorted(by_origin):
        lines.append(f"Origin  {origin + 1}")
        row = by_origin[origin]
        for i in range(0, len(row), 5):
            lines.append(
                "    "
                + " ".join(f"{t.dest + 1} : {_fmt(t.size)};" for t in row[i : i + 5])
            )
        lines.append("")
    return "\n".join(lines) + "\n"


def load_network(path) -> RoadNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_tntp_net(fh.read())


def load_trips(path) -> list[Trip]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_tntp_trips(fh.read())


def scale_demand(trips: list[Trip], factors) -> list[Trip]:
    """Multiply each trip size by its own factor (one factor per trip, all > 0)."""
    factors = np.asarray(factors, dtype=np.float64)
    if factors.shape != (len(trips),):
        raise ValueError(f"expected {len(trips)} factors, got shape {factors.shape}")
    if np.any(factors <= 0):
        raise ValueError("demand factors must be positive")
    return [
        Trip(origin=t.origin, dest=t.dest, size=t.size * float(f))
        for t, f in zip(trips, factors)
    ]


def total_demand(trips: list[Trip]) -> float:
    return float(sum(t.size for t in trips))


def trip_sizes(trips: list[Trip]) -> np.ndarray:
    return np.array([t.size for t in trips], dtype=np.float64)
