"""Comparison routers: naive flooding and sqrt(N)-degree forwarding.

Both keep a seen-set with the same dedup semantics as the mesh router so the
duplicate counts measure protocol fan-out rather than bookkeeping
differences.  Neither maintains a mesh, emits gossip, nor scores peers;
control traffic addressed to them is ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from random import Random

from .router import Effects
from .types import Message, MessageId, PeerId, Rpc, TopicId, compute_message_id


@dataclass(frozen=True, slots=True)
class FloodParams:
    """Connection budget of a public flooding node: 125 in + 8 out = 133."""

    max_inbound: int = 125
    max_outbound: int = 8

    @property
    def total(self) -> int:
        return self.max_inbound + self.max_outbound

    def validate(self) -> None:
        if self.max_inbound < 0 or self.max_outbound <= 0:
            raise ValueError("flood connection bounds must be positive")


@dataclass(frozen=True, slots=True)
class SqrtNParams:
    """Forwarding degree tied to network size: ceil(sqrt(N)) unless pinned."""

    network_size: int
    degree_override: int | None = None
    max_conns: int = 40

    @property
    def degree(self) -> int:
        if self.degree_override is not None:
            return self.degree_override
        return math.ceil(math.sqrt(self.network_size))


class _BaselineRouter:
    """Shared plumbing: connection list, dedup, local delivery."""

    __slots__ = ("node_id", "peers", "seen", "topics", "tracer", "rng", "_sorted")

    def __init__(self, node_id: PeerId, rng: Random, tracer=None):
        self.node_id = node_id
        self.peers: set[PeerId] = set()
        self.seen: set[MessageId] = set()
        self.topics: set[TopicId] = set()
        self.tracer = tracer
        self.rng = rng
        self._sorted: list[PeerId] | None = None

    def join_topic(self, topic: TopicId, now: float) -> Effects:
        self.topics.add(topic)
        return Effects()

    def on_peer_connected(self, peer: PeerId, ip: str, now: float) -> None:
        self.peers.add(peer)
        self._sorted = None

    def on_peer_disconnected(self, peer: PeerId, now: float) -> None:
        self.peers.discard(peer)
        self._sorted = None

    @property
    def sorted_peers(self) -> list[PeerId]:
        if self._sorted is None:
            self._sorted = sorted(self.peers)
        return self._sorted

    def handle_rpc(self, sender: PeerId, rpc: Rpc, now: float) -> Effects:
        eff = Effects()
        for msg in rpc.messages:
            eff.merge(self.handle_message(sender, msg, now))
        return eff

    def handle_message(self, sender: PeerId, msg: Message, now: float) -> Effects:
        eff = Effects()
        if msg.topic not in self.topics:
            return eff
        mid = compute_message_id(msg)
        if mid in self.seen:
            if self.tracer:
                self.tracer.duplicate(now, self.node_id, mid, sender)
            return eff
        self.seen.add(mid)
        eff.local.append(msg)
        if self.tracer:
            self.tracer.deliver(now, self.node_id, mid, sender)
        self._forward(msg, exclude=sender, eff=eff)
        return eff

    def publish(self, topic: TopicId, msg: Message, now: float) -> Effects:
        eff = Effects()
        mid = compute_message_id(msg)
        self.seen.add(mid)
        eff.local.append(msg)
        if self.tracer:
            self.tracer.publish(now, self.node_id, mid, msg)
            self.tracer.deliver(now, self.node_id, mid, self.node_id)
        self._forward(msg, exclude=None, eff=eff)
        return eff

    def heartbeat(self, now: float) -> Effects:
        return Effects()

    def _forward(self, msg: Message, exclude: PeerId | None, eff: Effects) -> None:
        raise NotImplementedError


class FloodRouter(_BaselineRouter):
    """Forward every new message to every connection except its sender."""

    def _forward(self, msg: Message, exclude: PeerId | None, eff: Effects) -> None:
        rpc = Rpc(sender=self.node_id, messages=(msg,))
        for peer in self.sorted_peers:
            if peer != exclude:
                eff.sends.append((peer, rpc))


class SqrtNRouter(_BaselineRouter):
    """Forward every new message to a fresh uniform sample of connections."""

    __slots__ = ("degree",)

    def __init__(self, node_id: PeerId, params: SqrtNParams, rng: Random, tracer=None):
        super().__init__(node_id, rng, tracer)
        self.degree = params.degree

    def _forward(self, msg: Message, exclude: PeerId | None, eff: Effects) -> None:
        available = [p for p in self.sorted_peers if p != exclude]
        k = min(self.degree, len(available))
        if k == 0:
            return
        targets = self.rng.sample(available, k)
        rpc = Rpc(sender=self.node_id, messages=(msg,))
        for peer in targets:
            eff.sends.append((peer, rpc))


def flood_forward(router: FloodRouter, sender: PeerId, msg: Message, now: float) -> Effects:
    return router.handle_message(sender, msg, now)


def sqrt_forward(router: SqrtNRouter, sender: PeerId, msg: Message, now: float) -> Effects:
    return router.handle_message(sender, msg, now)
