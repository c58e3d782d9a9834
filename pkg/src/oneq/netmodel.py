"""Static network model: nodes, cells, links, mobility, and coverage.

Base stations come in classical-only (CBS), quantum-capable (QBS), and
satellite (SAT_QBS) flavors; user equipment is classical (CUE) or quantum
(QUE).  Each base station serves a spherical classical disk and a smaller
concentric quantum disk.  Satellites are modeled as a repeating visibility
window rather than orbital mechanics: they are reachable only while a pass
is active.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, CoverageError
from .qcore import WernerPair

__all__ = [
    "NodeKind",
    "Mobility",
    "NodeSpec",
    "CellSpec",
    "ClassicalLinkSpec",
    "QuantumLinkSpec",
    "Topology",
    "classical_send",
    "orbit_next_window",
    "BS_KINDS",
    "UE_KINDS",
    "QUANTUM_KINDS",
]


class NodeKind(str, Enum):
    CBS = "CBS"
    QBS = "QBS"
    CUE = "CUE"
    QUE = "QUE"
    SAT_QBS = "SAT_QBS"


BS_KINDS = frozenset({NodeKind.CBS, NodeKind.QBS, NodeKind.SAT_QBS})
UE_KINDS = frozenset({NodeKind.CUE, NodeKind.QUE})
QUANTUM_KINDS = frozenset({NodeKind.QBS, NodeKind.QUE, NodeKind.SAT_QBS})


@dataclass(frozen=True)
class Mobility:
    """Static position, piecewise-linear waypoints, or a repeating pass window.

    kind "orbit" keeps the node at its base position but makes it reachable
    only inside windows [pass_start + k*period, pass_start + k*period +
    pass_duration] for k = 0, 1, ...
    """

    kind: str = "static"  # "static" | "waypoint" | "orbit"
    waypoints: tuple[tuple[float, tuple[float, float, float]], ...] = ()
    pass_start: float = 0.0
    pass_duration: float = 0.0
    period: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("static", "waypoint", "orbit"):
            raise ConfigurationError(f"unknown mobility kind {self.kind!r}")
        if self.kind == "waypoint":
            if len(self.waypoints) < 1:
                raise ConfigurationError("waypoint mobility needs at least one waypoint")
            times = [t for t, _ in self.waypoints]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ConfigurationError("waypoint times must be strictly increasing")
        if self.kind == "orbit":
            if self.period <= 0.0:
                raise ConfigurationError("orbit period must be positive")
            if not 0.0 < self.pass_duration <= self.period:
                raise ConfigurationError("pass_duration must lie in (0, period]")
            if self.pass_start < 0.0:
                raise ConfigurationError("pass_start must be nonnegative")


STATIC = Mobility()


def orbit_next_window(mobility: Mobility, t: float) -> tuple[float, float]:
    """Earliest pass window (start, end) whose end lies strictly after t."""
    if mobility.kind != "orbit":
        raise ValueError("orbit_next_window requires orbit mobility")
    k = math.floor((t - mobility.pass_start - mobility.pass_duration) / mobility.period) + 1
    if k < 0:
        k = 0
    start = mobility.pass_start + k * mobility.period
    while start + mobility.pass_duration <= t:
        start += mobility.period
    return (start, start + mobility.pass_duration)


@dataclass
class NodeSpec:
    id: str
    kind: NodeKind
    position: tuple[float, float, float]
    device_class: str = "default"
    t_coh_s: float = 1.0
    memory_slots: int = 0
    mobility: Mobility = STATIC

    def __post_init__(self) -> None:
        if not self.id:
            raise ConfigurationError("node id must be a nonempty string")
        if len(self.position) != 3:
            raise ConfigurationError(f"node {self.id}: position must have 3 coordinates")
        if self.t_coh_s <= 0.0:
            raise ConfigurationError(f"node {self.id}: t_coh_s must be positive")
        if self.memory_slots < 0:
            raise ConfigurationError(f"node {self.id}: memory_slots must be nonnegative")
        if self.kind == NodeKind.CUE and self.memory_slots != 0:
            raise ConfigurationError(f"node {self.id}: a CUE has no quantum memory slots")
        if self.kind in QUANTUM_KINDS and self.memory_slots < 1:
            raise ConfigurationError(f"node {self.id}: quantum nodes need at least 1 memory slot")

    def position_at(self, t: float) -> np.ndarray:
        if self.mobility.kind == "waypoint":
            pts = self.mobility.waypoints
            if t <= pts[0][0]:
                return np.asarray(pts[0][1], dtype=float)
            if t >= pts[-1][0]:
                return np.asarray(pts[-1][1], dtype=float)
            for (t0, p0), (t1, p1) in zip(pts, pts[1:]):
                if t0 <= t <= t1:
                    frac = (t - t0) / (t1 - t0)
                    a = np.asarray(p0, dtype=float)
                    b = np.asarray(p1, dtype=float)
                    return a + frac * (b - a)
        return np.asarray(self.position, dtype=float)

    def available_at(self, t: float) -> bool:
        """False only while an orbit node is outside its pass window."""
        if self.mobility.kind != "orbit":
            return True
        if t < self.mobility.pass_start:
            return False
        return ((t - self.mobility.pass_start) % self.mobility.period) < self.mobility.pass_duration


@dataclass(frozen=True)
class CellSpec:
    bs_id: str
    classical_radius: float
    quantum_radius: float

    def __post_init__(self) -> None:
        if self.classical_radius <= 0.0:
            raise ConfigurationError(f"cell {self.bs_id}: classical_radius must be positive")
        if self.quantum_radius < 0.0:
            raise ConfigurationError(f"cell {self.bs_id}: quantum_radius must be nonnegative")
        if self.quantum_radius > self.classical_radius:
            raise ConfigurationError(
                f"cell {self.bs_id}: quantum_radius {self.quantum_radius} exceeds "
                f"classical_radius {self.classical_radius}"
            )


@dataclass(frozen=True)
class ClassicalLinkSpec:
    a: str
    b: str
    rate_bps: float
    prop_delay_s: float
    p_err_c: float

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ConfigurationError(f"classical link endpoints must differ, got {self.a}")
        if self.rate_bps <= 0.0:
            raise ConfigurationError(f"link {self.a}-{self.b}: rate_bps must be positive")
        if self.prop_delay_s < 0.0:
            raise ConfigurationError(f"link {self.a}-{self.b}: prop_delay_s must be nonnegative")
        if not 0.0 <= self.p_err_c <= 1.0:
            raise ConfigurationError(f"link {self.a}-{self.b}: p_err_c must lie in [0, 1]")

    def latency(self, size_bits: float) -> float:
        return size_bits / self.rate_bps + self.prop_delay_s


@dataclass(frozen=True)
class QuantumLinkSpec:
    a: str
    b: str
    q_attempt: float
    attempt_period_s: float
    w0: float
    requires_los: bool = False

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ConfigurationError(f"quantum link endpoints must differ, got {self.a}")
        if not 0.0 <= self.q_attempt <= 1.0:
            raise ConfigurationError(f"link {self.a}-{self.b}: q_attempt must lie in [0, 1]")
        if self.attempt_period_s <= 0.0:
            raise ConfigurationError(f"link {self.a}-{self.b}: attempt_period_s must be positive")
        if not 0.0 <= self.w0 <= 1.0:
            raise ConfigurationError(f"link {self.a}-{self.b}: w0 must lie in [0, 1]")


def classical_send(
    link: ClassicalLinkSpec,
    size_bits: float,
    rng: np.random.Generator,
) -> tuple[bool, float]:
    """One transmission attempt: (delivered, latency).

    Latency is deterministic (size/rate + propagation); delivery fails with
    probability p_err_c.  Retransmission is the caller's business.
    """
    if size_bits < 0:
        raise ValueError(f"message size must be nonnegative, got {size_bits}")
    delivered = rng.random() >= link.p_err_c
    return bool(delivered), link.latency(size_bits)


class Topology:
    """Immutable scenario topology with geometry and link lookups."""

    def __init__(
        self,
        nodes: Iterable[NodeSpec],
        cells: Iterable[CellSpec] = (),
        classical_links: Iterable[ClassicalLinkSpec] = (),
        quantum_links: Iterable[QuantumLinkSpec] = (),
        repeater_edges: Iterable[tuple[str, str]] = (),
    ):
        self.nodes: dict[str, NodeSpec] = {}
        for node in nodes:
            if node.id in self.nodes:
                raise ConfigurationError(f"duplicate node id {node.id}")
            self.nodes[node.id] = node
        self.cells: dict[str, CellSpec] = {}
        for cell in cells:
            self._require(cell.bs_id)
            if self.nodes[cell.bs_id].kind not in BS_KINDS:
                raise ConfigurationError(f"cell {cell.bs_id}: not a base station")
            if cell.bs_id in self.cells:
                raise ConfigurationError(f"duplicate cell for {cell.bs_id}")
            if cell.quantum_radius > 0 and self.nodes[cell.bs_id].kind == NodeKind.CBS:
                raise ConfigurationError(f"cell {cell.bs_id}: a CBS cannot offer quantum coverage")
            self.cells[cell.bs_id] = cell
        self.classical_links: dict[frozenset, ClassicalLinkSpec] = {}
        for link in classical_links:
            self._require(link.a)
            self._require(link.b)
            key = frozenset((link.a, link.b))
            if key in self.classical_links:
                raise ConfigurationError(f"duplicate classical link {link.a}-{link.b}")
            self.classical_links[key] = link
        self.quantum_links: dict[frozenset, QuantumLinkSpec] = {}
        for link in quantum_links:
            self._require(link.a)
            self._require(link.b)
            for end in (link.a, link.b):
                if self.nodes[end].kind not in QUANTUM_KINDS:
                    raise ConfigurationError(f"quantum link endpoint {end} has no quantum hardware")
            key = frozenset((link.a, link.b))
            if key in self.quantum_links:
                raise ConfigurationError(f"duplicate quantum link {link.a}-{link.b}")
            self.quantum_links[key] = link
        self.repeater_edges: set[frozenset] = set()
        for a, b in repeater_edges:
            self._require(a)
            self._require(b)
            for end in (a, b):
                if self.nodes[end].kind not in (NodeKind.QBS, NodeKind.SAT_QBS):
                    raise ConfigurationError(f"repeater edge endpoint {end} is not a QBS")
            key = frozenset((a, b))
            if key not in self.quantum_links:
                raise ConfigurationError(f"repeater edge {a}-{b} has no quantum link")
            self.repeater_edges.add(key)

    def _require(self, node_id: str) -> NodeSpec:
        if node_id not in self.nodes:
            raise ConfigurationError(f"unknown node id {node_id}")
        return self.nodes[node_id]

    # -- geometry ----------------------------------------------------------

    def position(self, node_id: str, t: float) -> np.ndarray:
        return self._require(node_id).position_at(t)

    def distance(self, a: str, b: str, t: float) -> float:
        return float(np.linalg.norm(self.position(a, t) - self.position(b, t)))

    def in_classical_coverage(self, ue_id: str, bs_id: str, t: float) -> bool:
        bs = self._require(bs_id)
        ue = self._require(ue_id)
        cell = self.cells.get(bs_id)
        if cell is None:
            return False
        if not bs.available_at(t) or not ue.available_at(t):
            return False
        return self.distance(ue_id, bs_id, t) <= cell.classical_radius

    def in_quantum_coverage(self, ue_id: str, bs_id: str, t: float) -> bool:
        bs = self._require(bs_id)
        ue = self._require(ue_id)
        cell = self.cells.get(bs_id)
        if cell is None or cell.quantum_radius <= 0.0:
            return False
        if not bs.available_at(t) or not ue.available_at(t):
            return False
        return self.distance(ue_id, bs_id, t) <= cell.quantum_radius

    # -- link lookups ------------------------------------------------------

    def classical_link(self, a: str, b: str) -> Optional[ClassicalLinkSpec]:
        return self.classical_links.get(frozenset((a, b)))

    def quantum_link(self, a: str, b: str) -> Optional[QuantumLinkSpec]:
        return self.quantum_links.get(frozenset((a, b)))

    def attempt_pair(
        self,
        link: QuantumLinkSpec,
        holders: tuple[str, str],
        rng: np.random.Generator,
        t: float,
        id_alloc: Callable[[], str],
    ) -> Optional[WernerPair]:
        """One heralded generation attempt over an FSO link.

        Succeeds with probability q_attempt, yielding a fresh pair at w0.
        Raises CoverageError when the holders are not mutually reachable on
        the quantum plane at time t.
        """
        if frozenset(holders) != frozenset((link.a, link.b)):
            raise CoverageError(f"holders {holders} do not match link {link.a}-{link.b}")
        if not self._quantum_reachable(link.a, link.b, t):
            raise CoverageError(f"no quantum coverage between {link.a} and {link.b} at t={t}")
        if rng.random() >= link.q_attempt:
            return None
        return WernerPair(id=id_alloc(), holders=holders, w=link.w0, created_at=t, last_touched=t)

    def _quantum_reachable(self, a: str, b: str, t: float) -> bool:
        na, nb = self._require(a), self._require(b)
        if not na.available_at(t) or not nb.available_at(t):
            return False
        # UE endpoints must sit inside the BS quantum disk.  Engineered
        # BS-to-BS links are range-validated at deployment, not per attempt.
        if na.kind in UE_KINDS and nb.kind in BS_KINDS:
            return self.in_quantum_coverage(a, b, t)
        if nb.kind in UE_KINDS and na.kind in BS_KINDS:
            return self.in_quantum_coverage(b, a, t)
        return True

    def repeater_path(self, a: str, b: str) -> Optional[list[str]]:
        """Shortest hop path over repeater edges, endpoints included."""
        if a == b:
            return [a]
        adjacency: dict[str, list[str]] = {}
        for edge in self.repeater_edges:
            x, y = sorted(edge)
            adjacency.setdefault(x, []).append(y)
            adjacency.setdefault(y, []).append(x)
        frontier = [a]
        parents: dict[str, str] = {a: a}
        while frontier:
            nxt: list[str] = []
            for node in frontier:
                for peer in sorted(adjacency.get(node, ())):
                    if peer not in parents:
                        parents[peer] = node
                        if peer == b:
                            path = [b]
                            while path[-1] != a:
                                path.append(parents[path[-1]])
                            return path[::-1]
                        nxt.append(peer)
            frontier = nxt
        return None
