"""Control-plane protocol: UE state machine, sessions, and resource lifecycle.

User equipment moves through Idle, Connected, Inactive, and Entangled,
mirroring a cellular RRC machine extended with one quantum state.  Quantum
resources may be consumed only while every UE holder is Entangled, and every
created resource ends in exactly one terminal state (consumed, discarded,
or expired at run end); the ledger enforces both.

All protocol steps are generator processes driven by the event engine.  A
yielded float is the simulated delay until the step resumes.  Classical
messages always go through the lossy channel model, one attempt per yield,
with a bounded retry budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from . import qcore
from .engine import EventKind, Simulator
from .errors import CoverageError, PermanentLossError, ProtocolError, ResourceError
from .netmodel import (
    BS_KINDS,
    NodeKind,
    QuantumLinkSpec,
    Topology,
    UE_KINDS,
    classical_send,
    orbit_next_window,
)
from .qcore import GhzResource, PureState, WernerPair, decay, fidelity_of

__all__ = [
    "QueState",
    "SliceType",
    "SessionOutcome",
    "HandoverMode",
    "PolicyMode",
    "EntanglementRequest",
    "SessionResult",
    "HandoverResult",
    "TeleportResult",
    "QubitToken",
    "Defaults",
    "ResourceLedger",
    "QueContext",
    "Stack",
]


class QueState(str, Enum):
    IDLE = "Idle"
    CONNECTED = "Connected"
    INACTIVE = "Inactive"
    ENTANGLED = "Entangled"


# Legal state-machine edges.  Everything else raises ProtocolError.
_ALLOWED_TRANSITIONS = {
    QueState.IDLE: {QueState.CONNECTED},
    QueState.CONNECTED: {QueState.INACTIVE, QueState.IDLE, QueState.ENTANGLED},
    QueState.INACTIVE: {QueState.CONNECTED},
    QueState.ENTANGLED: {QueState.CONNECTED},
}


class SliceType(str, Enum):
    GENERATE_AND_STORE = "GenerateAndStore"
    GENERATE_AND_MEASURE = "GenerateAndMeasure"


class SessionOutcome(str, Enum):
    FULFILLED = "Fulfilled"
    PARTIALLY_FULFILLED = "PartiallyFulfilled"
    EXPIRED = "Expired"
    REJECTED = "Rejected"


class HandoverMode(str, Enum):
    SOFT = "soft"
    HARD = "hard"


class PolicyMode(str, Enum):
    REACTIVE = "reactive"
    PROACTIVE = "proactive"


@dataclass(frozen=True)
class EntanglementRequest:
    requester: str
    peers: tuple[str, ...]
    slice_type: SliceType
    count: int
    max_latency_s: float
    min_fidelity: float
    priority: int = 0

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError(f"count must be positive, got {self.count}")
        if self.max_latency_s <= 0.0:
            raise ValueError(f"max_latency_s must be positive, got {self.max_latency_s}")
        if not 0.25 <= self.min_fidelity <= 1.0:
            raise ValueError(f"min_fidelity must lie in [0.25, 1], got {self.min_fidelity}")
        if len(self.peers) != 1:
            raise ValueError("exactly one peer is supported per session")


@dataclass
class SessionResult:
    outcome: SessionOutcome
    delivered: tuple[str, ...]
    elapsed_s: float
    requested: int
    discarded_below_threshold: int = 0
    attempts: int = 0
    reason: str = ""


@dataclass
class HandoverResult:
    mode_requested: HandoverMode
    mode_used: HandoverMode
    fell_back: bool
    downtime_s: float
    migrated: tuple[str, ...]
    session: Optional[SessionResult] = None


@dataclass
class TeleportResult:
    delivered: bool
    fidelity: float
    elapsed_s: float
    pair_id: str


@dataclass
class QubitToken:
    """Application payload qubit.  state is None in the parameterized model."""

    id: str
    location: str
    state: Optional[PureState] = None
    destroyed: bool = False


@dataclass(frozen=True)
class Defaults:
    """Protocol constants; scenarios may override any of them."""

    f_min: float = 0.8
    inactivity_timeout_s: float = 5.0
    retry_cap: int = 10
    registration_messages: int = 4
    message_bits: dict = field(default_factory=lambda: {
        "request": 512.0,
        "ack": 128.0,
        "correction": 64.0,
        "registration": 1024.0,
        "resume": 256.0,
        "release": 128.0,
        "angle": 64.0,
        "outcome": 64.0,
        "basis": 1.0,
        "report": 128.0,
        "handover": 256.0,
    })


_TERMINAL_STATES = ("consumed", "discarded", "expired")


class ResourceLedger:
    """Lifecycle and memory-slot accounting for every entangled resource."""

    def __init__(self, sim: Simulator, topo: Topology):
        self.sim = sim
        self.topo = topo
        self.resources: dict[str, WernerPair | GhzResource] = {}
        self.state: dict[str, str] = {}
        self.reason: dict[str, str] = {}
        self._slots_used: dict[str, int] = {}
        self._counter = 0

    def new_id(self) -> str:
        self._counter += 1
        return f"p{self._counter:06d}"

    def slots_free(self, node_id: str) -> int:
        return self.topo.nodes[node_id].memory_slots - self._slots_used.get(node_id, 0)

    def can_store(self, holders: Iterable[str]) -> bool:
        return all(self.slots_free(h) >= 1 for h in holders)

    def register(self, resource: WernerPair | GhzResource) -> None:
        if resource.id in self.resources:
            raise ResourceError(f"duplicate resource id {resource.id}")
        if not self.can_store(resource.holders):
            raise ResourceError(f"no free memory slot for {resource.id} at {resource.holders}")
        for h in resource.holders:
            self._slots_used[h] = self._slots_used.get(h, 0) + 1
        self.resources[resource.id] = resource
        self.state[resource.id] = "live"

    def live(self, resource_id: str) -> WernerPair | GhzResource:
        res = self.resources.get(resource_id)
        if res is None:
            raise ResourceError(f"unknown resource {resource_id}")
        if self.state[resource_id] != "live":
            raise ResourceError(
                f"resource {resource_id} is {self.state[resource_id]}, not live"
            )
        return res

    def _finish(self, resource_id: str, terminal: str, reason: str) -> None:
        res = self.live(resource_id)
        res.consumed = True
        self.state[resource_id] = terminal
        self.reason[resource_id] = reason
        for h in res.holders:
            self._slots_used[h] -= 1

    def mark_consumed(self, resource_id: str, purpose: str) -> None:
        self._finish(resource_id, "consumed", purpose)

    def mark_discarded(self, resource_id: str, reason: str) -> None:
        self._finish(resource_id, "discarded", reason)

    def expire_remaining(self, t: float) -> list[str]:
        expired = [rid for rid, st in self.state.items() if st == "live"]
        for rid in expired:
            self._finish(rid, "expired", "run-end")
        return expired

    def live_ids(self) -> list[str]:
        return [rid for rid, st in self.state.items() if st == "live"]


@dataclass
class QueContext:
    node_id: str
    state: QueState = QueState.IDLE
    serving_bs: Optional[str] = None
    stored: set = field(default_factory=set)
    last_activity: float = 0.0


class Stack:
    """Protocol engine tying the topology, the event kernel, and the ledger."""

    def __init__(self, sim: Simulator, topo: Topology, defaults: Optional[Defaults] = None):
        self.sim = sim
        self.topo = topo
        self.defaults = defaults or Defaults()
        self.ledger = ResourceLedger(sim, topo)
        self.ues: dict[str, QueContext] = {
            node.id: QueContext(node_id=node.id)
            for node in topo.nodes.values()
            if node.kind in UE_KINDS
        }
        self._payload_counter = 0

    # ------------------------------------------------------------------
    # State machine
    # ------------------------------------------------------------------

    def ue(self, node_id: str) -> QueContext:
        ctx = self.ues.get(node_id)
        if ctx is None:
            raise ProtocolError(f"{node_id} is not user equipment")
        return ctx

    def _set_state(self, ctx: QueContext, new_state: QueState, reason: str) -> None:
        if new_state == ctx.state:
            return
        if new_state not in _ALLOWED_TRANSITIONS[ctx.state]:
            raise ProtocolError(
                f"{ctx.node_id}: illegal transition {ctx.state.value} -> {new_state.value}"
            )
        old = ctx.state
        ctx.state = new_state
        self.sim.trace.emit(
            self.sim.now, ctx.node_id, "state-transition",
            frm=old.value, to=new_state.value, reason=reason,
        )
        if new_state == QueState.CONNECTED:
            ctx.last_activity = self.sim.now
            self._arm_inactivity(ctx)

    def _arm_inactivity(self, ctx: QueContext) -> None:
        timeout = self.defaults.inactivity_timeout_s

        def check() -> None:
            if ctx.state is not QueState.CONNECTED:
                return
            remaining = ctx.last_activity + timeout - self.sim.now
            if remaining <= 1e-12:
                self._set_state(ctx, QueState.INACTIVE, "inactivity-timeout")
            else:
                self.sim.schedule_call(remaining, check, EventKind.TIMER)

        self.sim.schedule_call(timeout, check, EventKind.TIMER)

    def _touch_activity(self, *node_ids: str) -> None:
        for node_id in node_ids:
            ctx = self.ues.get(node_id)
            if ctx is not None:
                ctx.last_activity = self.sim.now

    def _maybe_exit_entangled(self, node_id: str) -> None:
        ctx = self.ues.get(node_id)
        if ctx is not None and ctx.state == QueState.ENTANGLED and not ctx.stored:
            self._set_state(ctx, QueState.CONNECTED, "resources-exhausted")

    def _enter_entangled(self, node_id: str) -> None:
        ctx = self.ues.get(node_id)
        if ctx is not None and ctx.state == QueState.CONNECTED and ctx.stored:
            self._set_state(ctx, QueState.ENTANGLED, "session-delivered")

    # ------------------------------------------------------------------
    # Classical messaging
    # ------------------------------------------------------------------

    def _bits(self, msg_kind: str) -> float:
        return float(self.defaults.message_bits.get(msg_kind, 256.0))

    def _hop_usable(self, src: str, dst: str, t: float) -> bool:
        a, b = self.topo.nodes[src], self.topo.nodes[dst]
        if a.kind in UE_KINDS and b.kind in BS_KINDS:
            return self.topo.in_classical_coverage(src, dst, t)
        if b.kind in UE_KINDS and a.kind in BS_KINDS:
            return self.topo.in_classical_coverage(dst, src, t)
        return a.available_at(t) and b.available_at(t)

    def send_message(self, src: str, dst: str, msg_kind: str,
                     bits: Optional[float] = None):
        """Generator: one classical hop with retries.  Returns delivered bool."""
        link = self.topo.classical_link(src, dst)
        if link is None:
            self.sim.trace.emit(self.sim.now, src, "msg-no-link", dst=dst, msg=msg_kind)
            return False
        if bits is None:
            bits = self._bits(msg_kind)
        rng = self.sim.rng_stream(src, "classical")
        for attempt in range(1, self.defaults.retry_cap + 1):
            if not self._hop_usable(src, dst, self.sim.now):
                self.sim.trace.emit(
                    self.sim.now, src, "msg-no-coverage", dst=dst, msg=msg_kind,
                )
                return False
            delivered, latency = classical_send(link, bits, rng)
            yield (latency, EventKind.MESSAGE_DELIVERY)
            self.sim.trace.emit(
                self.sim.now, src, "msg", dst=dst, msg=msg_kind,
                delivered=delivered, attempt=attempt,
            )
            if delivered:
                self._touch_activity(src, dst)
                return True
        return False

    def classical_route(self, src: str, dst: str) -> Optional[list[str]]:
        """Hop list src..dst: direct link if present, else via serving BSs."""
        if self.topo.classical_link(src, dst) is not None:
            return [src, dst]
        hops: list[str] = [src]
        left = src
        if self.topo.nodes[src].kind in UE_KINDS:
            bs = self.ue(src).serving_bs
            if bs is None:
                return None
            hops.append(bs)
            left = bs
        right = dst
        tail: list[str] = [dst]
        if self.topo.nodes[dst].kind in UE_KINDS:
            bs = self.ue(dst).serving_bs
            if bs is None:
                return None
            tail.insert(0, bs)
            right = bs
        if left != right:
            mid = self._bs_route(left, right)
            if mid is None:
                return None
            hops.extend(mid[1:])
        return hops + (tail if hops[-1] != tail[0] else tail[1:])

    def _bs_route(self, a: str, b: str) -> Optional[list[str]]:
        if a == b:
            return [a]
        frontier = [a]
        parents = {a: a}
        bs_ids = {n.id for n in self.topo.nodes.values() if n.kind in BS_KINDS}
        while frontier:
            nxt: list[str] = []
            for node in frontier:
                for key, _ in sorted(self.topo.classical_links.items(),
                                     key=lambda kv: sorted(kv[0])):
                    if node in key:
                        (peer,) = key - {node}
                        if peer in bs_ids and peer not in parents:
                            parents[peer] = node
                            if peer == b:
                                path = [b]
                                while path[-1] != a:
                                    path.append(parents[path[-1]])
                                return path[::-1]
                            nxt.append(peer)
            frontier = nxt
        return None

    def send_routed(self, src: str, dst: str, msg_kind: str,
                    bits: Optional[float] = None):
        """Generator: deliver over the hop route; False when any hop fails."""
        route = self.classical_route(src, dst)
        if route is None:
            self.sim.trace.emit(self.sim.now, src, "msg-no-route", dst=dst, msg=msg_kind)
            return False
        for hop_src, hop_dst in zip(route, route[1:]):
            ok = yield from self.send_message(hop_src, hop_dst, msg_kind, bits=bits)
            if not ok:
                return False
        return True

    # ------------------------------------------------------------------
    # Registration and connection management
    # ------------------------------------------------------------------

    def register(self, ue_id: str, bs_id: str):
        """Generator: Idle -> Connected via the k-message exchange."""
        ctx = self.ue(ue_id)
        if ctx.state != QueState.IDLE:
            raise ProtocolError(f"{ue_id} cannot register while {ctx.state.value}")
        if self.topo.nodes[bs_id].kind not in BS_KINDS:
            raise ProtocolError(f"{bs_id} is not a base station")
        k = self.defaults.registration_messages
        for i in range(k):
            src, dst = (ue_id, bs_id) if i % 2 == 0 else (bs_id, ue_id)
            ok = yield from self.send_message(src, dst, "registration")
            if not ok:
                self.sim.trace.emit(self.sim.now, ue_id, "registration-failed",
                                    bs=bs_id, at_message=i + 1)
                return False
        ctx.serving_bs = bs_id
        self._set_state(ctx, QueState.CONNECTED, "registered")
        return True

    def resume(self, ue_id: str):
        """Generator: Inactive -> Connected with the short two-message exchange."""
        ctx = self.ue(ue_id)
        if ctx.state != QueState.INACTIVE:
            raise ProtocolError(f"{ue_id} cannot resume while {ctx.state.value}")
        bs = ctx.serving_bs
        if bs is None:
            raise ProtocolError(f"{ue_id} has no serving base station")
        ok = yield from self.send_message(ue_id, bs, "resume")
        if ok:
            ok = yield from self.send_message(bs, ue_id, "resume")
        if not ok:
            return False
        self._set_state(ctx, QueState.CONNECTED, "resumed")
        return True

    def release(self, ue_id: str):
        """Generator: Connected -> Idle."""
        ctx = self.ue(ue_id)
        if ctx.state != QueState.CONNECTED:
            raise ProtocolError(f"{ue_id} cannot release while {ctx.state.value}")
        bs = ctx.serving_bs
        if bs is not None:
            yield from self.send_message(bs, ue_id, "release")
        ctx.serving_bs = None
        self._set_state(ctx, QueState.IDLE, "released")
        return True

    def ensure_connected(self, ue_id: str, bs_id: Optional[str] = None):
        """Generator: bring the UE to Connected, registering or resuming."""
        ctx = self.ue(ue_id)
        if ctx.state in (QueState.CONNECTED, QueState.ENTANGLED):
            return True
        if ctx.state == QueState.INACTIVE:
            ok = yield from self.resume(ue_id)
            return ok
        target = bs_id or ctx.serving_bs or self._closest_bs(ue_id)
        if target is None:
            return False
        ok = yield from self.register(ue_id, target)
        return ok

    def _closest_bs(self, ue_id: str) -> Optional[str]:
        t = self.sim.now
        candidates = [
            (self.topo.distance(ue_id, bs_id, t), bs_id)
            for bs_id in sorted(self.topo.cells)
            if self.topo.in_classical_coverage(ue_id, bs_id, t)
        ]
        return min(candidates)[1] if candidates else None

    # ------------------------------------------------------------------
    # Pair aging helpers
    # ------------------------------------------------------------------

    def effective_t_coh(self, holders: Sequence[str]) -> float:
        """Both memories dephase independently; rates add."""
        rate = sum(1.0 / self.topo.nodes[h].t_coh_s for h in holders)
        return 1.0 / rate

    def age_pair(self, pair: WernerPair) -> float:
        return qcore.touch(pair, self.sim.now, self.effective_t_coh(pair.holders))

    def pair_fidelity_now(self, pair: WernerPair) -> float:
        return fidelity_of(self.age_pair(pair))

    # ------------------------------------------------------------------
    # Resource creation and consumption
    # ------------------------------------------------------------------

    def _register_pair(self, pair: WernerPair, link_note: str) -> None:
        self.ledger.register(pair)
        self.sim.metrics.incr("pairs_created")
        for h in pair.holders:
            if self.topo.nodes[h].kind in UE_KINDS:
                self.sim.metrics.incr(f"pairs_created.{h}")
        self.sim.trace.emit(
            self.sim.now, pair.holders[0], "pair-created",
            id=pair.id, holders="+".join(pair.holders), w=round(pair.w, 9),
            via=link_note,
        )

    def _store_for_ues(self, resource: WernerPair | GhzResource) -> None:
        for h in resource.holders:
            ctx = self.ues.get(h)
            if ctx is not None:
                ctx.stored.add(resource.id)

    def discard_pair(self, resource_id: str, reason: str) -> None:
        res = self.ledger.live(resource_id)
        self.ledger.mark_discarded(resource_id, reason)
        self.sim.metrics.incr("pairs_discarded")
        if reason == "below-threshold":
            self.sim.metrics.incr("pairs_discarded_below_threshold")
        for h in res.holders:
            ctx = self.ues.get(h)
            if ctx is not None:
                ctx.stored.discard(resource_id)
            if self.topo.nodes[h].kind in UE_KINDS and reason == "below-threshold":
                self.sim.metrics.incr(f"pairs_discarded_below_threshold.{h}")
        self.sim.trace.emit(self.sim.now, res.holders[0], "pair-discarded",
                            id=resource_id, reason=reason)
        for h in res.holders:
            self._maybe_exit_entangled(h)

    def _precheck_consumable(self, res: WernerPair | GhzResource) -> list[str]:
        if isinstance(res, WernerPair) and self.sim.now + 1e-12 < res.usable_at:
            raise ResourceError(
                f"pair {res.id} is not usable before its correction arrives"
            )
        holder_states = []
        for h in res.holders:
            ctx = self.ues.get(h)
            if ctx is not None:
                holder_states.append(f"{h}:{ctx.state.value}")
                if ctx.state != QueState.ENTANGLED:
                    raise ProtocolError(
                        f"cannot consume {res.id}: holder {h} is {ctx.state.value}"
                    )
        return holder_states

    def _commit_consume(self, res: WernerPair | GhzResource, purpose: str,
                        holder_states: list[str]) -> None:
        self.ledger.mark_consumed(res.id, purpose)
        self.sim.metrics.incr("pairs_consumed")
        for h in res.holders:
            ctx = self.ues.get(h)
            if ctx is not None:
                ctx.stored.discard(res.id)
        self.sim.trace.emit(
            self.sim.now, res.holders[0], "pair-consumed",
            id=res.id, purpose=purpose,
            holder_states="+".join(holder_states) if holder_states else "bs-only",
        )
        for h in res.holders:
            self._maybe_exit_entangled(h)

    def consume_pair(self, resource_id: str, purpose: str) -> WernerPair | GhzResource:
        """Terminal consumption; legal only while all UE holders are Entangled."""
        res = self.ledger.live(resource_id)
        holder_states = self._precheck_consumable(res)
        if isinstance(res, WernerPair):
            self.age_pair(res)
            self.sim.metrics.observe("fidelity_at_consumption", fidelity_of(res.w))
        self._commit_consume(res, purpose, holder_states)
        return res

    def measure_stored_pair(self, pair_id: str, basis_a: qcore.MeasurementBasis,
                            basis_b: qcore.MeasurementBasis) -> tuple[int, int]:
        """Measure both halves of a stored pair; consumes it.

        The correlated outcome sampling keys off the first holder's stream
        so a fixed seed reproduces the bit pair exactly.
        """
        res = self.ledger.live(pair_id)
        if not isinstance(res, WernerPair):
            raise ResourceError(f"{pair_id} is not a bipartite pair")
        holder_states = self._precheck_consumable(res)
        self.age_pair(res)
        self.sim.metrics.observe("fidelity_at_consumption", fidelity_of(res.w))
        rng = self.sim.rng_stream(res.holders[0], "measurement")
        bits = qcore.measure_pair(res, basis_a, basis_b, rng)
        self._commit_consume(res, "measure", holder_states)
        return bits

    def finalize(self) -> None:
        """Expire whatever is still live; call once at end of run."""
        for rid in self.ledger.expire_remaining(self.sim.now):
            res = self.ledger.resources[rid]
            self.sim.metrics.incr("pairs_expired")
            for h in res.holders:
                ctx = self.ues.get(h)
                if ctx is not None:
                    ctx.stored.discard(rid)
            self.sim.trace.emit(self.sim.now, res.holders[0], "pair-expired", id=rid)

    # ------------------------------------------------------------------
    # Entanglement swapping
    # ------------------------------------------------------------------

    def entanglement_swap(self, pair_ab_id: str, pair_bc_id: str, repeater: str) -> WernerPair:
        """Bell-state measurement at the repeater; output w is the product.

        The output pair is unusable until its classical correction is marked
        delivered (see swap_with_correction).  Both inputs are consumed.
        """
        pair_ab = self.ledger.live(pair_ab_id)
        pair_bc = self.ledger.live(pair_bc_id)
        if not isinstance(pair_ab, WernerPair) or not isinstance(pair_bc, WernerPair):
            raise ResourceError("entanglement_swap needs two bipartite pairs")
        if repeater not in pair_ab.holders or repeater not in pair_bc.holders:
            raise ResourceError(
                f"repeater {repeater} does not hold both of {pair_ab_id}, {pair_bc_id}"
            )
        for p in (pair_ab, pair_bc):
            if self.sim.now + 1e-12 < p.usable_at:
                raise ResourceError(f"pair {p.id} awaits its correction; cannot swap")
        (left,) = [h for h in pair_ab.holders if h != repeater]
        (right,) = [h for h in pair_bc.holders if h != repeater]
        if left == right:
            raise ResourceError("swap would produce a pair with identical holders")
        w_ab = self.age_pair(pair_ab)
        w_bc = self.age_pair(pair_bc)
        self.ledger.mark_consumed(pair_ab_id, "swap")
        self.ledger.mark_consumed(pair_bc_id, "swap")
        self.sim.metrics.incr("pairs_consumed", 2)
        for h in set(pair_ab.holders) | set(pair_bc.holders):
            ctx = self.ues.get(h)
            if ctx is not None:
                ctx.stored.discard(pair_ab_id)
                ctx.stored.discard(pair_bc_id)
        out = WernerPair(
            id=self.ledger.new_id(),
            holders=(left, right),
            w=w_ab * w_bc,
            created_at=self.sim.now,
            last_touched=self.sim.now,
            usable_at=math.inf,
        )
        self.ledger.register(out)
        self.sim.metrics.incr("swaps")
        self.sim.trace.emit(
            self.sim.now, repeater, "swap",
            in_a=pair_ab_id, in_b=pair_bc_id, out=out.id, w_out=round(out.w, 9),
        )
        return out

    def mark_correction_delivered(self, pair: WernerPair) -> None:
        pair.usable_at = self.sim.now

    def swap_with_correction(self, pair_ab_id: str, pair_bc_id: str, repeater: str,
                             correction_to: str):
        """Generator: swap then deliver the 2-bit correction message.

        Returns the output pair id on success.  A lost correction discards
        the output pair and returns None.
        """
        out = self.entanglement_swap(pair_ab_id, pair_bc_id, repeater)
        ok = yield from self.send_routed(repeater, correction_to, "correction")
        if not ok:
            self.discard_pair(out.id, "correction-lost")
            return None
        self.mark_correction_delivered(out)
        return out.id

    # ------------------------------------------------------------------
    # Entanglement sessions
    # ------------------------------------------------------------------

    def _session_chain(self, requester: str, target: str) -> Optional[list[str]]:
        """Delivery chain [requester, bs..., target]; None when unservable."""
        ctx = self.ue(requester)
        bs_a = ctx.serving_bs
        if bs_a is None:
            return None
        if target == bs_a:
            return [requester, bs_a]
        target_node = self.topo.nodes[target]
        if target_node.kind in UE_KINDS:
            tctx = self.ue(target)
            bs_b = tctx.serving_bs
            if bs_b is None:
                return None
            if bs_b == bs_a:
                return [requester, bs_a, target]
            mid = self.topo.repeater_path(bs_a, bs_b)
            if mid is None:
                return None
            return [requester] + mid + [target]
        mid = self.topo.repeater_path(bs_a, target)
        return None if mid is None else [requester] + mid

    def _chain_links(self, chain: list[str]) -> Optional[list[QuantumLinkSpec]]:
        links = []
        for a, b in zip(chain, chain[1:]):
            link = self.topo.quantum_link(a, b)
            if link is None:
                return None
            links.append(link)
        return links

    def _attempt_direct_ue_pair(self, bs: str, ue1: str, ue2: str,
                                links: Sequence[QuantumLinkSpec]) -> Optional[WernerPair]:
        """Dual downlink from one source: both legs must herald in the tick.

        The source emits |phi+> and each leg depolarizes independently, so
        the joint success probability is the product of the leg q_attempts
        and the delivered Werner parameter is the product of the leg w0s.
        """
        t = self.sim.now
        for ue, link in ((ue1, links[0]), (ue2, links[1])):
            if not self.topo.in_quantum_coverage(ue, bs, t):
                raise CoverageError(f"{ue} has no quantum coverage from {bs} at t={t}")
        rng = self.sim.rng_stream(bs, "entanglement")
        if rng.random() >= links[0].q_attempt * links[1].q_attempt:
            return None
        return WernerPair(
            id=self.ledger.new_id(), holders=(ue1, ue2),
            w=links[0].w0 * links[1].w0, created_at=t, last_touched=t,
        )

    def entanglement_session(self, request: EntanglementRequest):
        """Generator returning a SessionResult.

        Step 1 is the classical request, step 2 repeats generation attempts
        every attempt period, step 3 is the classical ACK.  Pairs must meet
        request.min_fidelity at ACK time or they are discarded and
        regeneration continues until the latency budget runs out.
        """
        t_start = self.sim.now
        requester = request.requester
        target = request.peers[0]
        ctx = self.ue(requester)

        def reject(reason: str) -> SessionResult:
            self.sim.trace.emit(self.sim.now, requester, "session-rejected", reason=reason)
            self.sim.metrics.incr("sessions_rejected")
            return SessionResult(
                outcome=SessionOutcome.REJECTED, delivered=(), requested=request.count,
                elapsed_s=self.sim.now - t_start, reason=reason,
            )

        if ctx.state != QueState.CONNECTED:
            return reject(f"requester-state-{ctx.state.value}")
        bs_a = ctx.serving_bs
        if bs_a is None or self.topo.nodes[bs_a].kind not in (NodeKind.QBS, NodeKind.SAT_QBS):
            return reject("serving-bs-not-quantum")
        chain = self._session_chain(requester, target)
        if chain is None:
            return reject("no-delivery-chain")
        links = self._chain_links(chain)
        if links is None:
            return reject("missing-quantum-link")
        if not self.topo.in_quantum_coverage(requester, bs_a, self.sim.now):
            return reject("requester-outside-quantum-cell")

        self.sim.trace.emit(self.sim.now, requester, "session-start",
                            target=target, count=request.count,
                            chain="+".join(chain))
        ok = yield from self.send_message(requester, bs_a, "request")
        if not ok:
            return reject("request-undeliverable")
        bs_seq = [n for n in chain if self.topo.nodes[n].kind in BS_KINDS]
        for left_bs, right_bs in zip(bs_seq, bs_seq[1:]):
            ok = yield from self.send_message(left_bs, right_bs, "request")
            if not ok:
                return reject("setup-undeliverable")

        # Same-cell UE-to-UE delivery is a dual downlink handled as one roll.
        dual = len(chain) == 3 and self.topo.nodes[chain[1]].kind in BS_KINDS \
            and self.topo.nodes[chain[2]].kind in UE_KINDS
        period = max(link.attempt_period_s for link in links)
        deadline = t_start + request.max_latency_s

        delivered: list[WernerPair] = []
        segments: dict[int, WernerPair] = {}
        attempts = 0
        discarded_below = 0
        aborted = ""

        def segment_holders(i: int) -> tuple[str, str]:
            return (chain[i], chain[i + 1])

        while self.sim.now < deadline and len(delivered) < request.count:
            yield (min(period, max(deadline - self.sim.now, 1e-12)),
                   EventKind.ENTANGLEMENT_ATTEMPT)
            if self.sim.now >= deadline:
                break
            attempts += 1
            try:
                if dual:
                    pair = self._attempt_direct_ue_pair(chain[1], chain[0], chain[2], links)
                    if pair is not None and self.ledger.can_store(pair.holders):
                        self._register_pair(pair, f"src:{chain[1]}")
                        delivered.append(pair)
                    continue
                if len(chain) == 2:
                    if self.ledger.can_store(chain):
                        rng = self.sim.rng_stream(chain[1] if self.topo.nodes[chain[1]].kind
                                                  in BS_KINDS else chain[0], "entanglement")
                        pair = self.topo.attempt_pair(
                            links[0], (chain[0], chain[1]), rng, self.sim.now,
                            self.ledger.new_id,
                        )
                        if pair is not None:
                            self._register_pair(pair, "direct")
                            delivered.append(pair)
                    continue
                # Multi-hop: fill missing segments, then swap left to right.
                for i, link in enumerate(links):
                    if i in segments:
                        continue
                    holders = segment_holders(i)
                    if not self.ledger.can_store(holders):
                        continue
                    src = holders[0] if self.topo.nodes[holders[0]].kind in BS_KINDS \
                        else holders[1]
                    rng = self.sim.rng_stream(src, "entanglement")
                    pair = self.topo.attempt_pair(link, holders, rng, self.sim.now,
                                                  self.ledger.new_id)
                    if pair is not None:
                        self._register_pair(pair, "segment")
                        segments[i] = pair
                if len(segments) == len(links):
                    merged = segments[0]
                    failed = False
                    for i in range(1, len(links)):
                        repeater = chain[i]
                        out_id = yield from self.swap_with_correction(
                            merged.id, segments[i].id, repeater, chain[0],
                        )
                        if out_id is None:
                            failed = True
                            break
                        merged = self.ledger.resources[out_id]
                    segments.clear()
                    if not failed:
                        delivered.append(merged)
            except CoverageError as err:
                aborted = "coverage-lost"
                self.sim.trace.emit(self.sim.now, requester, "session-coverage-lost",
                                    detail=str(err))
                break

        # Step 3: ACK, then the freshness screen at ACK time.
        yield from self.send_message(requester, bs_a, "ack")
        survivors: list[WernerPair] = []
        for pair in delivered:
            state = self.ledger.state.get(pair.id)
            if state != "live":
                continue
            if fidelity_of(self.age_pair(pair)) + 1e-12 >= request.min_fidelity:
                survivors.append(pair)
            else:
                discarded_below += 1
                self.discard_pair(pair.id, "below-threshold")
        for leftover in segments.values():
            if self.ledger.state.get(leftover.id) == "live":
                self.discard_pair(leftover.id, "segment-unused")

        regenerate = (not aborted and len(survivors) < request.count
                      and self.sim.now < deadline)
        if regenerate:
            # Not enough fresh pairs survived the screen; fold the survivors
            # back in and keep generating against the same deadline.
            delivered = survivors
            while self.sim.now < deadline and len(delivered) < request.count:
                yield (min(period, max(deadline - self.sim.now, 1e-12)),
                       EventKind.ENTANGLEMENT_ATTEMPT)
                if self.sim.now >= deadline:
                    break
                attempts += 1
                try:
                    if dual:
                        pair = self._attempt_direct_ue_pair(chain[1], chain[0],
                                                            chain[2], links)
                        if pair is not None and self.ledger.can_store(pair.holders):
                            self._register_pair(pair, f"src:{chain[1]}")
                            delivered.append(pair)
                    elif len(chain) == 2 and self.ledger.can_store(chain):
                        rng = self.sim.rng_stream(chain[1] if self.topo.nodes[chain[1]].kind
                                                  in BS_KINDS else chain[0], "entanglement")
                        pair = self.topo.attempt_pair(links[0], (chain[0], chain[1]), rng,
                                                      self.sim.now, self.ledger.new_id)
                        if pair is not None:
                            self._register_pair(pair, "direct")
                            delivered.append(pair)
                except CoverageError:
                    aborted = "coverage-lost"
                    break
            yield from self.send_message(requester, bs_a, "ack")
            survivors = []
            for pair in delivered:
                if self.ledger.state.get(pair.id) != "live":
                    continue
                if fidelity_of(self.age_pair(pair)) + 1e-12 >= request.min_fidelity:
                    survivors.append(pair)
                else:
                    discarded_below += 1
                    self.discard_pair(pair.id, "below-threshold")

        if survivors and not self.topo.in_classical_coverage(
                requester, bs_a, self.sim.now):
            # the confirmation was in flight when coverage lapsed (orbit
            # windows can close mid-message), so nothing was handed over
            self.sim.trace.emit(self.sim.now, requester, "session-coverage-lost",
                                detail=f"ack finished outside {bs_a} coverage")
            for pair in survivors:
                self.discard_pair(pair.id, "coverage-lost-at-ack")
            survivors = []
            aborted = aborted or "coverage-lost-at-ack"

        for pair in survivors:
            self._store_for_ues(pair)
        if survivors:
            for h in set(survivors[0].holders):
                self._enter_entangled(h)

        elapsed = self.sim.now - t_start
        if len(survivors) >= request.count:
            outcome = SessionOutcome.FULFILLED
        elif survivors:
            outcome = SessionOutcome.PARTIALLY_FULFILLED
        else:
            outcome = SessionOutcome.EXPIRED
        result = SessionResult(
            outcome=outcome,
            delivered=tuple(p.id for p in survivors),
            elapsed_s=elapsed,
            requested=request.count,
            discarded_below_threshold=discarded_below,
            attempts=attempts,
            reason=aborted,
        )
        self.sim.metrics.incr(f"sessions_{outcome.value}")
        self.sim.metrics.observe("session_latency_s", elapsed, unit="s")
        self.sim.trace.emit(
            self.sim.now, requester, "session-end",
            outcome=outcome.value, delivered=len(survivors),
            requested=request.count, discarded=discarded_below,
            elapsed=round(elapsed, 9),
        )
        return result

    # ------------------------------------------------------------------
    # GHZ distribution and LOCC reduction
    # ------------------------------------------------------------------

    def ghz_session(self, bs_id: str, holders: Sequence[str], include_bs: bool = False,
                    max_latency_s: float = 1.0):
        """Generator: distribute one GHZ resource from bs_id to the holders.

        Joint heralding: every leg must succeed in the same attempt slot, so
        the per-slot probability is the product of the leg q_attempts and
        the mixture parameter is the product of the leg w0s.
        """
        legs = []
        for h in holders:
            link = self.topo.quantum_link(bs_id, h)
            if link is None:
                raise ProtocolError(f"no quantum link {bs_id}-{h}")
            legs.append(link)
        parties = tuple(holders) + ((bs_id,) if include_bs else ())
        if len(parties) < 2:
            raise ProtocolError("a GHZ resource needs at least two parties")
        period = max(l.attempt_period_s for l in legs)
        p_joint = math.prod(l.q_attempt for l in legs)
        w0 = math.prod(l.w0 for l in legs)
        deadline = self.sim.now + max_latency_s
        rng = self.sim.rng_stream(bs_id, "entanglement")
        while self.sim.now < deadline:
            yield (period, EventKind.ENTANGLEMENT_ATTEMPT)
            for h in holders:
                if not self.topo.in_quantum_coverage(h, bs_id, self.sim.now):
                    raise CoverageError(f"{h} left quantum coverage of {bs_id}")
            if not self.ledger.can_store(parties):
                continue
            if rng.random() < p_joint:
                ghz = GhzResource(id=self.ledger.new_id(), holders=parties, w=w0,
                                  created_at=self.sim.now)
                self.ledger.register(ghz)
                self._store_for_ues(ghz)
                for h in parties:
                    self._enter_entangled(h)
                self.sim.metrics.incr("ghz_created")
                self.sim.trace.emit(self.sim.now, bs_id, "ghz-created",
                                    id=ghz.id, holders="+".join(parties),
                                    w=round(w0, 9))
                return ghz.id
        return None

    def ghz_reduce_deliver(self, ghz_id: str, measured_party: str):
        """Generator: X-measure one party out of a GHZ resource (LOCC).

        The measuring party broadcasts its one correction bit to a surviving
        holder; the reduced resource keeps the same mixture parameter.
        Returns the reduced resource id, or None when the correction is lost
        (the reduced resource is then discarded).
        """
        ghz = self.ledger.live(ghz_id)
        if not isinstance(ghz, GhzResource):
            raise ResourceError(f"{ghz_id} is not a GHZ resource")
        rng = self.sim.rng_stream(measured_party, "measurement")
        correction, reduced = qcore.ghz_x_reduce(ghz, measured_party, rng,
                                                 new_id=self.ledger.new_id())
        self.ledger.mark_consumed(ghz_id, "locc-reduce")
        for h in ghz.holders:
            ctx = self.ues.get(h)
            if ctx is not None:
                ctx.stored.discard(ghz_id)
        self.ledger.register(reduced)
        self._store_for_ues(reduced)
        self.sim.trace.emit(self.sim.now, measured_party, "ghz-reduced",
                            id=ghz_id, out=reduced.id, correction=correction)
        receiver = reduced.holders[0]
        ok = yield from self.send_routed(measured_party, receiver, "correction")
        if not ok:
            self.discard_pair(reduced.id, "correction-lost")
            return None
        for h in ghz.holders:
            self._maybe_exit_entangled(h)
        return reduced.id

    # ------------------------------------------------------------------
    # Teleportation and direct transfer
    # ------------------------------------------------------------------

    def new_payload(self, location: str, state: Optional[PureState] = None) -> QubitToken:
        if state is not None and state.n_qubits != 1:
            raise ValueError("payload tokens carry exactly one qubit")
        self._payload_counter += 1
        return QubitToken(id=f"q{self._payload_counter:04d}", location=location, state=state)

    def teleport(self, payload: QubitToken, pair_id: str):
        """Generator: consume the pair, then deliver the 2-bit correction.

        The sender's copy is destroyed by the Bell measurement no matter
        what happens to the classical message afterwards.  With the exact
        payload model the output state is computed by teleporting through a
        Bell state sampled from the pair's Werner mixture.
        """
        if payload.destroyed:
            raise PermanentLossError(f"payload {payload.id} was already destroyed")
        pair = self.ledger.live(pair_id)
        if not isinstance(pair, WernerPair):
            raise ResourceError("teleport needs a bipartite pair")
        if payload.location not in pair.holders:
            raise ResourceError(
                f"payload at {payload.location} but pair spans {pair.holders}"
            )
        t0 = self.sim.now
        sender = payload.location
        (receiver,) = [h for h in pair.holders if h != sender]
        consumed = self.consume_pair(pair_id, "teleport")
        w_use = consumed.w
        rng = self.sim.rng_stream(sender, "measurement")
        input_state = payload.state
        out_state: Optional[PureState] = None
        if input_state is not None:
            out_state = _teleport_exact(input_state, w_use, rng)
        payload.state = None
        payload.destroyed = True  # Bell measurement eats the sender copy.
        ok = yield from self.send_routed(sender, receiver, "correction")
        elapsed = self.sim.now - t0
        if not ok:
            self.sim.trace.emit(self.sim.now, sender, "teleport",
                                payload=payload.id, pair=pair_id, delivered=False)
            self.sim.metrics.incr("teleport_lost")
            return TeleportResult(delivered=False, fidelity=0.0,
                                  elapsed_s=elapsed, pair_id=pair_id)
        if out_state is not None:
            fidelity = qcore.state_fidelity(input_state, out_state)
            new_token_state: Optional[PureState] = out_state
        else:
            fidelity = fidelity_of(w_use)
            new_token_state = None
        payload.destroyed = False
        payload.location = receiver
        payload.state = new_token_state
        self.sim.trace.emit(self.sim.now, sender, "teleport",
                            payload=payload.id, pair=pair_id, delivered=True,
                            fidelity=round(fidelity, 12))
        self.sim.metrics.incr("teleport_ok")
        return TeleportResult(delivered=True, fidelity=fidelity,
                              elapsed_s=elapsed, pair_id=pair_id)

    def direct_transfer(self, payload: QubitToken, src: str, dst: str):
        """Generator: one FSO shot; failure destroys the payload for good."""
        if payload.destroyed:
            raise PermanentLossError(f"payload {payload.id} was already destroyed")
        if payload.location != src:
            raise ResourceError(f"payload {payload.id} is at {payload.location}, not {src}")
        link = self.topo.quantum_link(src, dst)
        if link is None:
            raise ProtocolError(f"no quantum link {src}-{dst}")
        if not self.topo._quantum_reachable(src, dst, self.sim.now):
            raise CoverageError(f"no quantum coverage between {src} and {dst}")
        yield (link.attempt_period_s, EventKind.ENTANGLEMENT_ATTEMPT)
        rng = self.sim.rng_stream(src, "entanglement")
        success = rng.random() < link.q_attempt
        if success:
            payload.location = dst
        else:
            payload.destroyed = True
            payload.state = None
        self.sim.trace.emit(self.sim.now, src, "direct-transfer",
                            payload=payload.id, dst=dst, success=success)
        self.sim.metrics.incr("transfer_ok" if success else "transfer_lost")
        return success

    # ------------------------------------------------------------------
    # Handover
    # ------------------------------------------------------------------

    def handover(self, ue_id: str, bs_new: str, mode: HandoverMode):
        """Generator: move the UE to bs_new, migrating stored pairs.

        Soft mode bridges each stored pair over a bs_old-bs_new repeater
        link and swaps at bs_old, so end-to-end entanglement survives.
        Hard mode discards the stored pairs and provisions replacements via
        a fresh session.  Soft falls back to hard, with a trace warning,
        when the bridge link does not exist.
        """
        ctx = self.ue(ue_id)
        bs_old = ctx.serving_bs
        if bs_old is None:
            raise ProtocolError(f"{ue_id} is not attached to any base station")
        if bs_new == bs_old:
            raise ProtocolError(f"{ue_id} is already served by {bs_new}")
        if not self.topo.in_classical_coverage(ue_id, bs_new, self.sim.now):
            raise CoverageError(f"{ue_id} is outside classical coverage of {bs_new}")
        requested = mode
        bridge_link = self.topo.quantum_link(bs_old, bs_new)
        bridgeable = (bridge_link is not None
                      and frozenset((bs_old, bs_new)) in self.topo.repeater_edges)
        if mode == HandoverMode.SOFT and not bridgeable:
            self.sim.trace.emit(self.sim.now, ue_id, "warn",
                                msg="soft-handover-infeasible-falling-back-hard",
                                bs_old=bs_old, bs_new=bs_new)
            mode = HandoverMode.HARD

        stored_ids = [rid for rid in sorted(ctx.stored)
                      if isinstance(self.ledger.resources.get(rid), WernerPair)
                      and bs_old in self.ledger.resources[rid].holders]
        yield from self.send_message(bs_old, ue_id, "handover")
        yield from self.send_message(ue_id, bs_new, "handover")

        migrated: list[str] = []
        downtime = 0.0
        session_result: Optional[SessionResult] = None
        if mode == HandoverMode.SOFT:
            rng = self.sim.rng_stream(bs_old, "entanglement")
            for rid in stored_ids:
                bridge = None
                t_bridge0 = self.sim.now
                while bridge is None:
                    yield (bridge_link.attempt_period_s, EventKind.ENTANGLEMENT_ATTEMPT)
                    if not self.ledger.can_store((bs_old, bs_new)):
                        continue
                    bridge = self.topo.attempt_pair(
                        bridge_link, (bs_old, bs_new), rng, self.sim.now,
                        self.ledger.new_id)
                self._register_pair(bridge, "bridge")
                t_swap = self.sim.now
                out_id = yield from self.swap_with_correction(
                    rid, bridge.id, bs_old, ue_id)
                downtime += self.sim.now - t_swap  # correction in flight
                if out_id is not None:
                    out = self.ledger.resources[out_id]
                    self._store_for_ues(out)
                    migrated.append(out_id)
            ctx.serving_bs = bs_new
        else:
            t_gap0 = self.sim.now
            was_entangled = ctx.state == QueState.ENTANGLED
            for rid in stored_ids:
                self.discard_pair(rid, "handover-released")
            ctx.serving_bs = bs_new
            if stored_ids:
                if ctx.state == QueState.ENTANGLED:
                    self._set_state(ctx, QueState.CONNECTED, "handover-hard")
                request = EntanglementRequest(
                    requester=ue_id, peers=(bs_new,),
                    slice_type=SliceType.GENERATE_AND_STORE,
                    count=len(stored_ids), max_latency_s=5.0,
                    min_fidelity=self.defaults.f_min,
                )
                session_result = yield from self.entanglement_session(request)
                migrated.extend(session_result.delivered)
            downtime = self.sim.now - t_gap0 if (stored_ids and was_entangled) else 0.0

        self.sim.trace.emit(self.sim.now, ue_id, "handover",
                            frm=bs_old, to=bs_new, mode=mode.value,
                            fell_back=requested != mode, migrated=len(migrated),
                            downtime=round(downtime, 9))
        self.sim.metrics.incr(f"handover_{mode.value}")
        return HandoverResult(
            mode_requested=requested, mode_used=mode, fell_back=requested != mode,
            downtime_s=downtime, migrated=tuple(migrated), session=session_result,
        )

    # ------------------------------------------------------------------
    # Distribution policies
    # ------------------------------------------------------------------

    def acquire_pairs(self, ue_id: str, bs_id: str, count: int, min_fidelity: float,
                      max_latency_s: float):
        """Generator: hand out buffered pairs first, then top up via a session.

        Returns (pair_ids, session_result_or_None).
        """
        ctx = self.ue(ue_id)
        taken: list[str] = []
        for rid in sorted(ctx.stored):
            if len(taken) >= count:
                break
            res = self.ledger.resources.get(rid)
            if (isinstance(res, WernerPair) and self.ledger.state.get(rid) == "live"
                    and set(res.holders) == {ue_id, bs_id}
                    and self.sim.now + 1e-12 >= res.usable_at
                    and fidelity_of(self.age_pair(res)) + 1e-12 >= min_fidelity):
                taken.append(rid)
        deficit = count - len(taken)
        result: Optional[SessionResult] = None
        if deficit > 0:
            if ctx.state == QueState.ENTANGLED:
                # A session needs Connected; buffered resources keep us
                # Entangled, so session-based top-up is only possible when
                # the buffer is empty for this peer.
                pass
            else:
                ok = yield from self.ensure_connected(ue_id, bs_id)
                if ok:
                    request = EntanglementRequest(
                        requester=ue_id, peers=(bs_id,),
                        slice_type=SliceType.GENERATE_AND_STORE,
                        count=deficit, max_latency_s=max_latency_s,
                        min_fidelity=min_fidelity,
                    )
                    result = yield from self.entanglement_session(request)
                    taken.extend(result.delivered)
        return taken, result

    def start_policy(self, mode: PolicyMode, targets: Sequence[tuple[str, str]] = (),
                     buffer_target: int = 0, check_period_s: float = 0.5,
                     min_fidelity: Optional[float] = None) -> None:
        """Launch the distribution policy.

        Reactive does nothing ahead of requests.  Proactive runs one
        provisioner per (bs, ue) target that keeps the ue's buffer of
        bs-entangled pairs at buffer_target, refreshes decohered pairs, and
        wakes at satellite pass starts predicted with orbit_next_window.
        """
        if mode == PolicyMode.REACTIVE:
            return
        if buffer_target < 1:
            raise ValueError("proactive policy needs buffer_target >= 1")
        f_min = self.defaults.f_min if min_fidelity is None else min_fidelity
        for bs_id, ue_id in targets:
            self.sim.spawn(self._provisioner(bs_id, ue_id, buffer_target,
                                             check_period_s, f_min),
                           kind=EventKind.DECOHERENCE_CHECK)

    def _provisioner(self, bs_id: str, ue_id: str, buffer_target: int,
                     check_period_s: float, f_min: float):
        bs = self.topo.nodes[bs_id]
        ctx = self.ue(ue_id)
        while True:
            if bs.mobility.kind == "orbit" and not bs.available_at(self.sim.now):
                start, _ = orbit_next_window(bs.mobility, self.sim.now)
                self.sim.trace.emit(self.sim.now, bs_id, "provision-wait-pass",
                                    ue=ue_id, pass_start=start)
                yield (max(start - self.sim.now, 0.0), EventKind.TIMER)
            # Refresh: throw away buffered pairs that decohered below spec.
            for rid in sorted(ctx.stored):
                res = self.ledger.resources.get(rid)
                if (isinstance(res, WernerPair)
                        and self.ledger.state.get(rid) == "live"
                        and set(res.holders) == {ue_id, bs_id}
                        and fidelity_of(self.age_pair(res)) < f_min):
                    self.discard_pair(rid, "below-threshold")
            live = [rid for rid in ctx.stored
                    if isinstance(self.ledger.resources.get(rid), WernerPair)
                    and set(self.ledger.resources[rid].holders) == {ue_id, bs_id}]
            deficit = buffer_target - len(live)
            if deficit > 0 and ctx.state != QueState.ENTANGLED:
                connected = yield from self.ensure_connected(ue_id, bs_id)
                if connected and self.topo.in_quantum_coverage(ue_id, bs_id, self.sim.now):
                    request = EntanglementRequest(
                        requester=ue_id, peers=(bs_id,),
                        slice_type=SliceType.GENERATE_AND_STORE,
                        count=deficit, max_latency_s=max(check_period_s, 0.1),
                        min_fidelity=f_min,
                    )
                    result = yield from self.entanglement_session(request)
                    if result.delivered:
                        self.sim.trace.emit(self.sim.now, bs_id, "provision",
                                            ue=ue_id, delivered=len(result.delivered))
            yield (check_period_s, EventKind.DECOHERENCE_CHECK)


def _teleport_exact(state: PureState, w: float, rng) -> PureState:
    """Run the 3-qubit teleport circuit through a Bell state sampled from w."""
    x, z = qcore.sample_bell_label(w, rng)
    reg = state.tensor(qcore.bell_state(x, z))
    reg = qcore.oracle_apply(reg, "CNOT", (0, 1))
    reg = qcore.oracle_apply(reg, "H", (0,))
    m0, reg = qcore.oracle_measure(reg, 0, qcore.Z_BASIS, rng)
    m1, reg = qcore.oracle_measure(reg, 0, qcore.Z_BASIS, rng)
    if m1:
        reg = qcore.oracle_apply(reg, "X", (0,))
    if m0:
        reg = qcore.oracle_apply(reg, "Z", (0,))
    return reg
