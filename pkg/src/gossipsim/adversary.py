"""Sybil node behaviours.

Each behaviour plugs into the same node interface the simulator drives for
honest nodes.  Behaviours that need to look legitimate (censorship, covert
flash before its trigger, graft spam, spam) delegate message handling to an
embedded honest :class:`~gossipsim.router.Router`, so their observable
forwarding is exactly an honest router's; the attack is layered on top.

Behaviour summary:

* ``graft_spam``   -- honest forwarding, but GRAFTs every connected target it
                      is not yet meshed with on every heartbeat, ignoring
                      backoff etiquette.
* ``eclipse_drop`` -- grafts aggressively and drops everything: no forwards,
                      no gossip, no IWant answers.
* ``censor``       -- behaves honestly except that messages published by the
                      victim are hairpin-dropped, including their ids in
                      gossip (they never enter the message cache).
* ``covert_flash`` -- honest until ``attack_ms``, then drop-everything.
* ``spam``         -- honest forwarding plus a stream of garbage messages the
                      application validator rejects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from random import Random

from .router import Effects, MeshParams, Router
from .scoring import ScoreParams
from .types import Graft, Message, PeerId, Prune, Rpc, TopicId

GRAFT_SPAM = "graft_spam"
ECLIPSE_DROP = "eclipse_drop"
CENSOR = "censor"
COVERT_FLASH = "covert_flash"
SPAM = "spam"

BEHAVIORS = (GRAFT_SPAM, ECLIPSE_DROP, CENSOR, COVERT_FLASH, SPAM)


@dataclass(frozen=True, slots=True)
class AdversaryBehavior:
    """Attack selection plus budget/identity knobs for one Sybil node."""

    kind: str
    conn_budget: int = 100
    ip: str = ""
    censor_target: PeerId | None = None
    attack_ms: float | None = None
    invalid_rate: float = 0.0
    reconnect_per_heartbeat: int = 4

    def validate(self, duration_ms: float | None = None) -> None:
        if self.kind not in BEHAVIORS:
            raise ValueError(f"unknown adversary behavior {self.kind!r}")
        if self.conn_budget <= 0:
            raise ValueError("conn_budget must be > 0")
        if self.kind == CENSOR and self.censor_target is None:
            raise ValueError("censor behavior needs a target")
        if self.kind == COVERT_FLASH:
            if self.attack_ms is None:
                raise ValueError("covert_flash behavior needs attack_ms")
            if duration_ms is not None and not (0 <= self.attack_ms < duration_ms):
                raise ValueError("attack_ms must fall within the run duration")


class AdversaryNode:
    """One Sybil identity following a behaviour.

    ``targets`` is the set of honest node ids the Sybil attacks.  Connection
    attempts and acceptance run through the simulation's network adapter and
    its budgets; the adversary merely tries hard.
    """

    __slots__ = (
        "node_id",
        "behavior",
        "targets",
        "target_set",
        "rng",
        "network",
        "tracer",
        "inner",
        "topics",
        "attack_started",
        "_assumed_meshed",
        "_garbage_seqno",
        "_garbage_carry",
        "_retry_order",
        "_retry_pos",
    )

    def __init__(
        self,
        node_id: PeerId,
        behavior: AdversaryBehavior,
        targets: list[PeerId],
        mesh_params: MeshParams,
        score_params: ScoreParams,
        rng: Random,
        network=None,
        tracer=None,
    ):
        behavior.validate()
        self.node_id = node_id
        self.behavior = behavior
        self.targets = sorted(targets)
        self.target_set = frozenset(self.targets)
        self.rng = rng
        self.network = network
        self.tracer = tracer
        self._retry_order = self.targets[:]
        rng.shuffle(self._retry_order)
        self._retry_pos = 0
        self.inner = Router(
            node_id,
            mesh_params,
            score_params,
            rng=rng,
            network=network,
            tracer=None,
        )
        self.topics: set[TopicId] = set()
        self.attack_started = behavior.kind == ECLIPSE_DROP
        self._assumed_meshed: set[tuple[TopicId, PeerId]] = set()
        self._garbage_seqno = 0
        self._garbage_carry = 0.0

    # -- mode -----------------------------------------------------------------

    def dropping(self, now: float) -> bool:
        """True once the node is in silent drop-everything mode."""
        if self.behavior.kind == ECLIPSE_DROP:
            return True
        if self.behavior.kind == COVERT_FLASH:
            if self.attack_started:
                return True
            if self.behavior.attack_ms is not None and now >= self.behavior.attack_ms:
                self.attack_started = True
                return True
        return False

    def start_attack(self, now: float) -> None:
        self.attack_started = True

    # -- simulator-facing node interface ----------------------------------------

    def join_topic(self, topic: TopicId, now: float) -> Effects:
        self.topics.add(topic)
        if self.behavior.kind == ECLIPSE_DROP:
            return Effects()
        return self.inner.join_topic(topic, now)

    def seed_known(self, topic: TopicId, peers) -> None:
        self.inner.seed_known(topic, peers)

    def on_peer_connected(self, peer: PeerId, ip: str, now: float) -> None:
        self.inner.on_peer_connected(peer, ip, now)

    def on_peer_disconnected(self, peer: PeerId, now: float) -> None:
        self.inner.on_peer_disconnected(peer, now)
        for topic in self.topics:
            self._assumed_meshed.discard((topic, peer))

    def handle_rpc(self, sender: PeerId, rpc: Rpc, now: float) -> Effects:
        # prune notices matter even in drop mode: they tell the Sybil it fell
        # out of a target's mesh and should re-graft on the next heartbeat
        for ctl in rpc.control:
            if isinstance(ctl, Prune):
                self._assumed_meshed.discard((ctl.topic, sender))
        if self.dropping(now):
            return Effects()
        if self.behavior.kind == CENSOR:
            rpc = self._censor_filter(rpc)
            if rpc is None:
                return Effects()
        return self.inner.handle_rpc(sender, rpc, now)

    def heartbeat(self, now: float) -> Effects:
        eff = Effects()
        self._reconnect(now)
        if not self.dropping(now):
            eff.merge(self.inner.heartbeat(now))
            if self.behavior.kind == SPAM and self.behavior.invalid_rate > 0:
                eff.merge(self._inject_garbage(now))
        if self.behavior.kind != SPAM:
            eff.merge(self._graft_spam(now))
        return eff

    # -- attack mechanics -----------------------------------------------------

    def _reconnect(self, now: float) -> None:
        """Walk a shuffled retry cycle, dialing a few disconnected targets.

        Bounded work per heartbeat: at most ``reconnect_per_heartbeat`` dials
        plus the skipped already-connected entries, with an early exit once
        the connection budget is full.
        """
        net = self.network
        if net is None:
            return
        budget = self.behavior.reconnect_per_heartbeat
        if budget <= 0 or not self._retry_order:
            return
        if net.degree() >= self.behavior.conn_budget:
            return
        order = self._retry_order
        n = len(order)
        dialed = scanned = 0
        while dialed < budget and scanned < n:
            if self._retry_pos >= n:
                self._retry_pos = 0
                self.rng.shuffle(order)
            t = order[self._retry_pos]
            self._retry_pos += 1
            scanned += 1
            if net.is_connected(t):
                continue
            net.try_connect(t)
            dialed += 1

    def _graft_spam(self, now: float) -> Effects:
        eff = Effects()
        net = self.network
        if net is None:
            return eff
        connected_targets = sorted(p for p in net.connected_peers() if p in self.target_set)
        for topic in sorted(self.topics):
            for t in connected_targets:
                if (topic, t) in self._assumed_meshed:
                    continue
                eff.sends.append((t, Rpc(sender=self.node_id, control=(Graft(topic=topic),))))
                self._assumed_meshed.add((topic, t))
        return eff

    def _inject_garbage(self, now: float) -> Effects:
        eff = Effects()
        net = self.network
        if net is None:
            return eff
        self._garbage_carry += self.behavior.invalid_rate
        count = int(self._garbage_carry)
        self._garbage_carry -= count
        if count <= 0:
            return eff
        connected = sorted(p for p in net.connected_peers() if p in self.target_set)
        if not connected:
            return eff
        for _ in range(count):
            for topic in sorted(self.topics):
                msg = Message(
                    publisher=self.node_id,
                    seqno=self._garbage_seqno,
                    topic=topic,
                    payload_size=2000,
                    publish_time=now,
                )
                self._garbage_seqno += 1
                rpc = Rpc(sender=self.node_id, messages=(msg,))
                for t in connected:
                    eff.sends.append((t, rpc))
        return eff

    def _censor_filter(self, rpc: Rpc) -> Rpc | None:
        target = self.behavior.censor_target
        if not rpc.messages or all(m.publisher != target for m in rpc.messages):
            return rpc
        kept = tuple(m for m in rpc.messages if m.publisher != target)
        if not kept and not rpc.control:
            return None
        return Rpc(sender=rpc.sender, messages=kept, control=rpc.control)
