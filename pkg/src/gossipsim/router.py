"""The gossipsub per-node state machine.

A :class:`Router` owns mesh membership per topic, the message cache that backs
lazy pulls, the seen-set used for deduplication, and a :class:`ScoreBook` for
its neighbours.  It is a single-owner state machine: exactly one event (an
incoming RPC, a heartbeat tick, or a local publish) is applied at a time, and
every handler returns :class:`Effects` describing what to send and deliver.
The router performs no I/O itself; connectivity questions go through an
injected :class:`Network` adapter owned by the simulation.

The defence toggles map onto the router like this:

* ``scoring_enabled`` gates every score check: graft acceptance, selective
  (rather than random) pruning on oversubscription, the outbound-connection
  quota, peer-exchange filtering, and gossip target filtering.  With it off
  and the other flags at their "plain" values the router degrades to the
  unprotected mesh+gossip construction.
* ``flood_publish`` pushes newly published messages to every known
  non-negative-score subscriber instead of only the local mesh.
* ``opp_graft_peers`` > 0 enables opportunistic grafting of above-median
  scorers when the mesh median falls below a threshold.
* ``prune_backoff_ms`` > 0 suppresses re-grafting of recently pruned peers,
  symmetrically on both sides.
"""

from __future__ import annotations

import math
import statistics
from collections import deque
from dataclasses import dataclass, field, replace
from random import Random
from typing import Protocol

from .scoring import ScoreBook, ScoreParams
from .types import (
    Graft,
    IHave,
    IWant,
    Message,
    MessageId,
    PeerId,
    Prune,
    Rpc,
    TopicId,
    ValidatorRegistry,
    compute_message_id,
)

OUTBOUND = "out"
INBOUND = "in"


@dataclass(frozen=True, slots=True)
class MeshParams:
    """Mesh degree bounds, gossip settings and defence toggles."""

    d: int = 8
    d_low: int = 6
    d_high: int = 12
    d_score: int = 6
    d_out: int = 2
    heartbeat_interval_ms: float = 1000.0
    gossip_factor: float = 0.25
    gossip_rounds: int = 3
    mcache_len: int = 5
    prune_backoff_ms: float = 60_000.0
    px_count: int = 16
    opp_graft_period_ms: float = 60_000.0
    opp_graft_threshold: float = 1.0
    opp_graft_peers: int = 2
    flood_publish: bool = True
    scoring_enabled: bool = True
    iwant_cap: int = 512
    seen_ttl_ms: float = 120_000.0
    gossip_include_mesh: bool = False

    def validate(self) -> None:
        if not (self.d_low <= self.d <= self.d_high):
            raise ValueError(f"need d_low <= d <= d_high, got {self.d_low}/{self.d}/{self.d_high}")
        if self.d_score >= self.d:
            raise ValueError("d_score must be < d")
        if self.d_out >= self.d_low or self.d_out > self.d / 2:
            raise ValueError("d_out must be < d_low and <= d/2")
        if not (self.mcache_len >= self.gossip_rounds >= 1):
            raise ValueError("need mcache_len >= gossip_rounds >= 1")
        # gossip_factor == 0 is an explicit off-switch (used to measure the
        # protocol with gossip disabled); otherwise it is a fraction.
        if not (0.0 <= self.gossip_factor <= 1.0):
            raise ValueError("gossip_factor must be in [0, 1]")
        if self.heartbeat_interval_ms <= 0:
            raise ValueError("heartbeat_interval_ms must be > 0")

    @classmethod
    def plain(cls, **overrides) -> "MeshParams":
        """The unprotected variant: no scoring, no mitigation strategies."""
        base = dict(
            scoring_enabled=False,
            flood_publish=False,
            opp_graft_peers=0,
            prune_backoff_ms=0.0,
        )
        base.update(overrides)
        return cls(**base)

    def scaled(self, d: int) -> "MeshParams":
        """Derive degree bounds from a target degree (d -25% / +50%)."""
        d_low = max(1, (d * 3) // 4)
        return replace(
            self,
            d=d,
            d_low=d_low,
            d_score=d_low,
            d_high=(d * 3) // 2,
            d_out=max(0, min(self.d_out, d_low - 1, d // 2)),
        )


class MessageCache:
    """Sliding-window cache feeding gossip advertisement and IWant replies.

    New messages land in the newest window; a heartbeat shift evicts the
    oldest window's entries.  Only the first ``gossip_rounds`` windows are
    advertised, so an id is gossiped for exactly that many heartbeats, while
    older windows still serve pull requests.
    """

    __slots__ = ("windows", "store", "length", "gossip_rounds")

    def __init__(self, length: int = 5, gossip_rounds: int = 3):
        if length < gossip_rounds:
            raise ValueError("cache length must cover the gossip window")
        self.length = length
        self.gossip_rounds = gossip_rounds
        self.windows: deque[list[MessageId]] = deque([[]])
        self.store: dict[MessageId, Message] = {}

    def put(self, mid: MessageId, msg: Message) -> None:
        if mid in self.store:
            return
        self.windows[0].append(mid)
        self.store[mid] = msg

    def get(self, mid: MessageId) -> Message | None:
        return self.store.get(mid)

    def gossip_ids(self, topic: TopicId) -> list[MessageId]:
        out: list[MessageId] = []
        store = self.store
        for window in list(self.windows)[: self.gossip_rounds]:
            for mid in window:
                msg = store.get(mid)
                if msg is not None and msg.topic == topic:
                    out.append(mid)
        return out

    def shift(self) -> None:
        if len(self.windows) >= self.length:
            for mid in self.windows.pop():
                self.store.pop(mid, None)
        self.windows.appendleft([])

    def __contains__(self, mid: MessageId) -> bool:
        return mid in self.store

    def __len__(self) -> int:
        return len(self.store)


@dataclass(slots=True)
class Effects:
    """Pure output of one state-machine step."""

    sends: list[tuple[PeerId, Rpc]] = field(default_factory=list)
    local: list[Message] = field(default_factory=list)

    def merge(self, other: "Effects") -> "Effects":
        self.sends.extend(other.sends)
        self.local.extend(other.local)
        return self


class Network(Protocol):
    """Connectivity questions a router may ask; answered by the simulation.

    ``try_connect(..., soft=True)`` marks a best-effort dial (gossip or flood
    targets) that should not displace existing connections; mesh-building
    dials are hard.
    """

    def is_connected(self, peer: PeerId) -> bool: ...

    def try_connect(self, peer: PeerId, soft: bool = False) -> bool: ...

    def direction(self, peer: PeerId) -> str: ...


class AllConnected:
    """Trivial adapter for unit tests: everything is reachable."""

    def __init__(
        self,
        directions: dict[PeerId, str] | None = None,
        default: str = INBOUND,
        peers=(),
        budget: int = 1 << 30,
    ):
        self.directions = directions or {}
        self.default = default
        self.peers = list(peers)
        self.budget = budget

    def is_connected(self, peer: PeerId) -> bool:
        return not self.peers or peer in self.peers

    def try_connect(self, peer: PeerId, soft: bool = False) -> bool:
        if self.peers and peer not in self.peers and len(self.peers) < self.budget:
            self.peers.append(peer)
        return self.is_connected(peer)

    def direction(self, peer: PeerId) -> str:
        return self.directions.get(peer, self.default)

    def connected_peers(self):
        return list(self.peers)

    def degree(self) -> int:
        return len(self.peers)


class Router:
    """Gossipsub state machine for one simulated node."""

    __slots__ = (
        "node_id",
        "params",
        "rng",
        "network",
        "validators",
        "tracer",
        "scorebook",
        "topics",
        "mesh",
        "known",
        "explicit_peers",
        "backoff",
        "seen",
        "_seen_queue",
        "mcache",
        "_iwant_used",
        "last_opp_graft",
        "_last_decay",
    )

    def __init__(
        self,
        node_id: PeerId,
        params: MeshParams,
        score_params: ScoreParams,
        rng: Random,
        network: Network | None = None,
        validators: ValidatorRegistry | None = None,
        tracer=None,
    ):
        params.validate()
        self.node_id = node_id
        self.params = params
        self.rng = rng
        self.network = network if network is not None else AllConnected()
        self.validators = validators if validators is not None else ValidatorRegistry()
        self.tracer = tracer
        self.scorebook = ScoreBook(score_params)
        self.topics: set[TopicId] = set()
        self.mesh: dict[TopicId, dict[PeerId, str]] = {}
        self.known: dict[TopicId, set[PeerId]] = {}
        self.explicit_peers: set[PeerId] = set()
        self.backoff: dict[tuple[TopicId, PeerId], float] = {}
        self.seen: dict[MessageId, float] = {}
        self._seen_queue: deque[tuple[float, MessageId]] = deque()
        self.mcache = MessageCache(params.mcache_len, params.gossip_rounds)
        self._iwant_used: dict[PeerId, int] = {}
        self.last_opp_graft = 0.0
        self._last_decay = 0.0

    # -- scoring shortcuts ---------------------------------------------------

    def score(self, peer: PeerId, now: float) -> float:
        return self.scorebook.score(peer, now)

    def _score_ok(self, peer: PeerId, now: float) -> bool:
        return not self.params.scoring_enabled or self.scorebook.score(peer, now) >= 0.0

    def _backoff_active(self, topic: TopicId, peer: PeerId, now: float) -> bool:
        expiry = self.backoff.get((topic, peer))
        return expiry is not None and now < expiry

    def _register_backoff(self, topic: TopicId, peer: PeerId, now: float, duration: float) -> None:
        if duration > 0:
            key = (topic, peer)
            expiry = now + duration
            if expiry > self.backoff.get(key, 0.0):
                self.backoff[key] = expiry

    def _known(self, topic: TopicId) -> set[PeerId]:
        peers = self.known.get(topic)
        if peers is None:
            peers = set()
            self.known[topic] = peers
        return peers

    def _learn(self, topic: TopicId, peer: PeerId) -> None:
        if peer != self.node_id:
            self._known(topic).add(peer)

    def seed_known(self, topic: TopicId, peers) -> None:
        """Simulator-provided bootstrap peer list for a topic."""
        ks = self._known(topic)
        for p in peers:
            if p != self.node_id:
                ks.add(p)

    # -- connection lifecycle (driven by the simulation) -----------------------

    def on_peer_connected(self, peer: PeerId, ip: str, now: float) -> None:
        self.scorebook.on_connect(peer, ip)

    def on_peer_disconnected(self, peer: PeerId, now: float) -> None:
        for topic, members in self.mesh.items():
            if peer in members:
                self.scorebook.record_prune(peer, topic, now)
                del members[peer]
                if self.tracer:
                    self.tracer.prune(now, self.node_id, peer, topic)
        self.scorebook.on_disconnect(peer)

    def add_explicit_peer(self, peer: PeerId) -> None:
        if peer != self.node_id:
            self.explicit_peers.add(peer)

    # -- topic membership -----------------------------------------------------

    def join_topic(self, topic: TopicId, now: float) -> Effects:
        eff = Effects()
        if topic in self.topics:
            return eff
        self.topics.add(topic)
        if not self.validators.knows(topic):
            self.validators.register(topic)
        mesh = self.mesh.setdefault(topic, {})
        candidates = [
            p
            for p in sorted(self._known(topic))
            if p not in mesh
            and p not in self.explicit_peers
            and not self._backoff_active(topic, p, now)
            and self._score_ok(p, now)
        ]
        self.rng.shuffle(candidates)
        self._graft_candidates(topic, candidates, self.params.d - len(mesh), now, eff)
        return eff

    def leave_topic(self, topic: TopicId, now: float) -> Effects:
        eff = Effects()
        if topic not in self.topics:
            return eff
        self.topics.discard(topic)
        mesh = self.mesh.get(topic, {})
        for peer in sorted(mesh):
            eff.sends.append((peer, Rpc(sender=self.node_id, control=(self._mk_prune(topic, peer, now),))))
            self.scorebook.record_prune(peer, topic, now)
            self._register_backoff(topic, peer, now, self.params.prune_backoff_ms)
            if self.tracer:
                self.tracer.prune(now, self.node_id, peer, topic)
        self.mesh[topic] = {}
        return eff

    # -- control handlers -------------------------------------------------------

    def handle_graft(self, sender: PeerId, topic: TopicId, now: float) -> Effects:
        eff = Effects()
        self._learn(topic, sender)
        mesh = self.mesh.get(topic)
        acceptable = (
            topic in self.topics
            and mesh is not None
            and sender not in self.explicit_peers
            and not self._backoff_active(topic, sender, now)
            and self._score_ok(sender, now)
            and (sender in mesh or len(mesh) < self.params.d_high)
        )
        if acceptable:
            if sender not in mesh:
                mesh[sender] = self.network.direction(sender)
                self.scorebook.record_graft(sender, topic, now)
            if self.tracer:
                self.tracer.graft(now, self.node_id, sender, topic, accepted=True)
            return eff
        eff.sends.append((sender, Rpc(sender=self.node_id, control=(self._mk_prune(topic, sender, now),))))
        self._register_backoff(topic, sender, now, self.params.prune_backoff_ms)
        if self.tracer:
            self.tracer.graft(now, self.node_id, sender, topic, accepted=False)
        return eff

    def handle_prune(
        self, sender: PeerId, topic: TopicId, px, backoff_ms: float, now: float
    ) -> Effects:
        eff = Effects()
        mesh = self.mesh.get(topic)
        if mesh is not None and sender in mesh:
            self.scorebook.record_prune(sender, topic, now)
            del mesh[sender]
            if self.tracer:
                self.tracer.prune(now, self.node_id, sender, topic)
        self._register_backoff(topic, sender, now, backoff_ms)
        if px and self._score_ok(sender, now):
            ks = self._known(topic)
            for p in px:
                if p != self.node_id:
                    ks.add(p)
        return eff

    # -- data path ------------------------------------------------------------

    def handle_message(self, sender: PeerId, msg: Message, now: float) -> Effects:
        eff = Effects()
        topic = msg.topic
        if topic not in self.topics:
            if self.tracer:
                self.tracer.unknown_topic(now, self.node_id, sender)
            return eff
        self._learn(topic, sender)
        mesh = self.mesh.get(topic, {})
        in_mesh = sender in mesh
        mid = compute_message_id(msg)
        first_seen = self.seen.get(mid)
        if first_seen is not None:
            within = (now - first_seen) <= self.scorebook.params.delivery_window_ms
            self.scorebook.record_delivery(
                sender, topic, first=False, in_mesh=in_mesh, within_window=within
            )
            if self.tracer:
                self.tracer.duplicate(now, self.node_id, mid, sender)
            return eff
        if not self.validators.validate(msg):
            self.scorebook.record_invalid(sender, topic)
            if self.tracer:
                self.tracer.invalid(now, self.node_id, mid, sender)
            return eff
        self.scorebook.record_delivery(sender, topic, first=True, in_mesh=in_mesh)
        self._remember(mid, now)
        self.mcache.put(mid, msg)
        eff.local.append(msg)
        if self.tracer:
            self.tracer.deliver(now, self.node_id, mid, sender)
        rpc = Rpc(sender=self.node_id, messages=(msg,))
        for peer in mesh:
            if peer != sender:
                eff.sends.append((peer, rpc))
        for peer in self.explicit_peers:
            if peer != sender and peer not in mesh:
                eff.sends.append((peer, rpc))
        return eff

    def publish(self, topic: TopicId, msg: Message, now: float) -> Effects:
        eff = Effects()
        mid = compute_message_id(msg)
        self._remember(mid, now)
        self.mcache.put(mid, msg)
        eff.local.append(msg)
        if self.tracer:
            self.tracer.publish(now, self.node_id, mid, msg)
            self.tracer.deliver(now, self.node_id, mid, self.node_id)
        rpc = Rpc(sender=self.node_id, messages=(msg,))
        if self.params.flood_publish:
            targets = [
                p
                for p in sorted(self._known(topic))
                if self._score_ok(p, now)
                and (self.network.is_connected(p) or self.network.try_connect(p, soft=True))
            ]
        else:
            targets = list(self.mesh.get(topic, {}))
        for peer in targets:
            eff.sends.append((peer, rpc))
        return eff

    def handle_ihave(self, sender: PeerId, topic: TopicId, ids, now: float) -> Effects:
        eff = Effects()
        if topic not in self.topics:
            return eff
        self._learn(topic, sender)
        if self.tracer:
            self.tracer.ihave(now, self.node_id, sender, len(ids))
        used = self._iwant_used.get(sender, 0)
        budget = self.params.iwant_cap - used
        if budget <= 0:
            return eff
        want = []
        seen = self.seen
        for mid in ids:
            if mid not in seen:
                want.append(mid)
                if len(want) >= budget:
                    break
        if want:
            self._iwant_used[sender] = used + len(want)
            eff.sends.append((sender, Rpc(sender=self.node_id, control=(IWant(ids=tuple(want)),))))
            if self.tracer:
                self.tracer.iwant(now, self.node_id, sender, len(want))
        return eff

    def handle_iwant(self, sender: PeerId, ids, now: float) -> Effects:
        eff = Effects()
        msgs = []
        for mid in ids:
            m = self.mcache.get(mid)
            if m is not None:
                msgs.append(m)
        if msgs:
            eff.sends.append((sender, Rpc(sender=self.node_id, messages=tuple(msgs))))
        return eff

    def handle_rpc(self, sender: PeerId, rpc: Rpc, now: float) -> Effects:
        eff = Effects()
        for msg in rpc.messages:
            eff.merge(self.handle_message(sender, msg, now))
        for ctl in rpc.control:
            if isinstance(ctl, Graft):
                eff.merge(self.handle_graft(sender, ctl.topic, now))
            elif isinstance(ctl, Prune):
                eff.merge(self.handle_prune(sender, ctl.topic, ctl.px, ctl.backoff_ms, now))
            elif isinstance(ctl, IHave):
                eff.merge(self.handle_ihave(sender, ctl.topic, ctl.ids, now))
            elif isinstance(ctl, IWant):
                eff.merge(self.handle_iwant(sender, ctl.ids, now))
        return eff

    # -- heartbeat ---------------------------------------------------------------

    def heartbeat(self, now: float) -> Effects:
        eff = Effects()
        p = self.params
        if p.scoring_enabled and now - self._last_decay >= self.scorebook.params.decay_interval_ms:
            self.scorebook.decay_tick(now)
            self._last_decay = now
        for topic in sorted(self.topics):
            eff.merge(self.maintain_mesh(topic, now))
        if (
            p.scoring_enabled
            and p.opp_graft_peers > 0
            and now - self.last_opp_graft >= p.opp_graft_period_ms
        ):
            for topic in sorted(self.topics):
                eff.merge(self.opportunistic_graft(topic, now))
            self.last_opp_graft = now
        for topic in sorted(self.topics):
            eff.merge(self.emit_gossip(topic, now))
        self.mcache.shift()
        self._expire_seen(now)
        self._iwant_used.clear()
        if self.tracer:
            for topic in sorted(self.topics):
                members = self.mesh.get(topic, {})
                self.tracer.mesh_snapshot(
                    now,
                    self.node_id,
                    topic,
                    [(peer, direction, self.scorebook.score(peer, now)) for peer, direction in members.items()],
                )
        return eff

    def maintain_mesh(self, topic: TopicId, now: float) -> Effects:
        eff = Effects()
        p = self.params
        mesh = self.mesh.setdefault(topic, {})

        to_prune: list[PeerId] = []
        if p.scoring_enabled:
            to_prune = [peer for peer in sorted(mesh) if self.scorebook.score(peer, now) < 0.0]

        survivors = [peer for peer in sorted(mesh) if peer not in to_prune]
        if len(survivors) > p.d_high:
            if p.scoring_enabled:
                ranked = sorted(survivors, key=lambda q: (-self.scorebook.score(q, now), q))
                keep = ranked[: p.d_score]
                pool = ranked[p.d_score :]
                self.rng.shuffle(pool)
                fill = max(0, p.d - len(keep))
                keep += pool[:fill]
                # outbound quota: swap inbound keeps for outbound leftovers,
                # preferring to evict from the random fill portion
                outbound_kept = sum(1 for q in keep if mesh[q] == OUTBOUND)
                for q in pool[fill:]:
                    if outbound_kept >= p.d_out:
                        break
                    if mesh[q] != OUTBOUND:
                        continue
                    swap = next((r for r in reversed(keep) if mesh[r] == INBOUND), None)
                    if swap is None:
                        break
                    keep[keep.index(swap)] = q
                    outbound_kept += 1
                kept = set(keep)
            else:
                shuffled = survivors[:]
                self.rng.shuffle(shuffled)
                kept = set(shuffled[: p.d])
            to_prune.extend(q for q in survivors if q not in kept)

        for peer in to_prune:
            eff.sends.append(
                (peer, Rpc(sender=self.node_id, control=(self._mk_prune(topic, peer, now),)))
            )
            self.scorebook.record_prune(peer, topic, now)
            self._register_backoff(topic, peer, now, p.prune_backoff_ms)
            del mesh[peer]
            if self.tracer:
                self.tracer.prune(now, self.node_id, peer, topic)

        if len(mesh) < p.d_low:
            candidates = [
                q
                for q in sorted(self._known(topic))
                if q not in mesh
                and q not in self.explicit_peers
                and not self._backoff_active(topic, q, now)
                and self._score_ok(q, now)
            ]
            self.rng.shuffle(candidates)
            self._graft_candidates(topic, candidates, p.d - len(mesh), now, eff)

        if p.scoring_enabled:
            outbound = sum(1 for direction in mesh.values() if direction == OUTBOUND)
            if outbound < p.d_out:
                cand_out = [
                    q
                    for q in sorted(self._known(topic))
                    if q not in mesh
                    and q not in self.explicit_peers
                    and not self._backoff_active(topic, q, now)
                    and self._score_ok(q, now)
                    and (not self.network.is_connected(q) or self.network.direction(q) == OUTBOUND)
                ]
                self.rng.shuffle(cand_out)
                inbound_members = [q for q in sorted(mesh) if mesh[q] == INBOUND]
                self.rng.shuffle(inbound_members)
                for q in cand_out:
                    if outbound >= p.d_out:
                        break
                    if not self.network.try_connect(q) or self.network.direction(q) != OUTBOUND:
                        continue
                    self._graft_one(topic, q, now, eff)
                    outbound += 1
                    if len(mesh) > p.d and inbound_members:
                        victim = inbound_members.pop()
                        eff.sends.append(
                            (
                                victim,
                                Rpc(sender=self.node_id, control=(self._mk_prune(topic, victim, now),)),
                            )
                        )
                        self.scorebook.record_prune(victim, topic, now)
                        self._register_backoff(topic, victim, now, p.prune_backoff_ms)
                        del mesh[victim]
                        if self.tracer:
                            self.tracer.prune(now, self.node_id, victim, topic)
        return eff

    def opportunistic_graft(self, topic: TopicId, now: float) -> Effects:
        eff = Effects()
        p = self.params
        mesh = self.mesh.get(topic, {})
        if not mesh:
            return eff
        median = statistics.median(self.scorebook.score(q, now) for q in mesh)
        if median >= p.opp_graft_threshold:
            return eff
        eligible = [
            q
            for q in sorted(self._known(topic))
            if q not in mesh
            and q not in self.explicit_peers
            and not self._backoff_active(topic, q, now)
            and self.scorebook.score(q, now) > median
        ]
        self.rng.shuffle(eligible)
        self._graft_candidates(topic, eligible, p.opp_graft_peers, now, eff)
        return eff

    def emit_gossip(self, topic: TopicId, now: float) -> Effects:
        eff = Effects()
        p = self.params
        if p.gossip_factor <= 0.0:
            return eff
        ids = self.mcache.gossip_ids(topic)
        if not ids:
            return eff
        mesh = self.mesh.get(topic, {})
        candidates = [
            q
            for q in sorted(self._known(topic))
            if (p.gossip_include_mesh or q not in mesh)
            and q not in self.explicit_peers
            and self._score_ok(q, now)
        ]
        if not candidates:
            return eff
        n = len(candidates)
        count = max(math.ceil(p.gossip_factor * n), min(n, 6))
        count = min(count, n)
        targets = self.rng.sample(candidates, count)
        ihave = IHave(topic=topic, ids=tuple(ids))
        for q in targets:
            if self.network.is_connected(q) or self.network.try_connect(q):
                eff.sends.append((q, Rpc(sender=self.node_id, control=(ihave,))))
                if self.tracer:
                    self.tracer.ihave_sent(now, self.node_id, q, len(ids))
        return eff

    # -- internals ------------------------------------------------------------

    def _graft_candidates(self, topic, candidates, budget: int, now: float, eff: Effects) -> None:
        grafted = 0
        for peer in candidates:
            if grafted >= budget:
                break
            if self.network.try_connect(peer):
                self._graft_one(topic, peer, now, eff)
                grafted += 1

    def _graft_one(self, topic: TopicId, peer: PeerId, now: float, eff: Effects) -> None:
        mesh = self.mesh.setdefault(topic, {})
        mesh[peer] = self.network.direction(peer)
        self.scorebook.record_graft(peer, topic, now)
        eff.sends.append((peer, Rpc(sender=self.node_id, control=(Graft(topic=topic),))))
        if self.tracer:
            self.tracer.graft(now, self.node_id, peer, topic, accepted=True)

    def _mk_prune(self, topic: TopicId, to: PeerId, now: float) -> Prune:
        px: tuple[PeerId, ...] = ()
        if self.params.px_count > 0 and self._score_ok(to, now):
            pool = [
                q
                for q in sorted(self._known(topic))
                if q != to and q != self.node_id and self._score_ok(q, now)
            ]
            if pool:
                px = tuple(self.rng.sample(pool, min(self.params.px_count, len(pool))))
        return Prune(topic=topic, px=px, backoff_ms=self.params.prune_backoff_ms)

    def _remember(self, mid: MessageId, now: float) -> None:
        self.seen[mid] = now
        self._seen_queue.append((now, mid))

    def _expire_seen(self, now: float) -> None:
        cutoff = now - self.params.seen_ttl_ms
        q = self._seen_queue
        seen = self.seen
        while q and q[0][0] < cutoff:
            t, mid = q.popleft()
            if seen.get(mid) == t:
                del seen[mid]
        if len(self.backoff) > 256:
            self.backoff = {k: v for k, v in self.backoff.items() if v > now}

    # -- introspection helpers (used by the simulation and tests) ---------------

    def mesh_members(self, topic: TopicId) -> list[PeerId]:
        return sorted(self.mesh.get(topic, {}))

    def outbound_mesh_count(self, topic: TopicId) -> int:
        return sum(1 for d in self.mesh.get(topic, {}).values() if d == OUTBOUND)
