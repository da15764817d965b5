"""Deterministic discrete-event network simulation.

Everything runs on a virtual millisecond clock.  Events are processed in
``(time, insertion_sequence)`` order, all randomness flows from seeded
generators derived from the scenario seed (one per node, one for link
latencies, one for traffic), and no wall clock is ever consulted, so a
scenario re-run with the same seed is bit-identical.

Connection model
----------------

Connections are bidirectional with a recorded initiator (the initiator's
side is "outbound").  Each node has a budget; a node at budget rejects new
inbound connections.  An initiator at budget may first close its
lowest-scoring useless connection (score <= 0, not meshed, not explicit) to
make room -- the simulated stand-in for a real connection manager.  Nodes
running the scoring router additionally close connections to peers whose
score has fallen below ``trim_threshold`` at each heartbeat.  Every RPC is
either delivered exactly once (per-link FIFO, latency-delayed) or counted as
dropped when no connection could be established.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from random import Random

from .adversary import ECLIPSE_DROP, SPAM, AdversaryBehavior, AdversaryNode
from .baselines import FloodParams, FloodRouter, SqrtNParams, SqrtNRouter
from .metrics import Collector, RunReport, TraceSink, Tee
from .router import INBOUND, OUTBOUND, MeshParams, Router
from .scoring import ScoreParams, expected_deficit_threshold
from .types import Message, PeerId, Rpc, TopicId, ValidatorRegistry

PROTOCOLS = ("gossipsub", "plain", "flood", "sqrtn")

# event kinds, processed in (time, seq) order
_K_JOIN = 0
_K_RPC = 1
_K_HEARTBEAT = 2
_K_PUBLISH = 3
_K_ATTACK = 4


@dataclass(frozen=True, slots=True)
class LatencyModel:
    """Per-link one-way delay model; samples always land in [min, max]."""

    distribution: str = "uniform"
    min_ms: float = 10.0
    max_ms: float = 150.0
    mu: float | None = None
    sigma: float | None = None

    def validate(self) -> None:
        if self.distribution not in ("uniform", "lognormal"):
            raise ValueError(f"unknown latency distribution {self.distribution!r}")
        if not (0 <= self.min_ms <= self.max_ms):
            raise ValueError("need 0 <= min_ms <= max_ms")


def sample_latency(model: LatencyModel, rng: Random) -> float:
    if model.min_ms == model.max_ms:
        return model.min_ms
    if model.distribution == "uniform":
        return rng.uniform(model.min_ms, model.max_ms)
    mu = model.mu if model.mu is not None else math.log((model.min_ms + model.max_ms) / 2.0)
    sigma = model.sigma if model.sigma is not None else 0.5
    v = rng.lognormvariate(mu, sigma)
    return min(max(v, model.min_ms), model.max_ms)


@dataclass(slots=True)
class ScenarioConfig:
    """Full description of one simulation run."""

    seed: int = 1
    duration_ms: float = 60_000.0
    protocol: str = "gossipsub"

    n_honest: int = 50
    n_publishers: int | None = None
    honest_max_conns: int = 20
    honest_initial_outbound: int = 6
    honest_join_ms: float = 0.0

    n_sybil: int = 0
    sybil_behavior: str | None = None
    sybil_max_conns: int = 100
    sybil_join_ms: float = 0.0
    attack_ms: float | None = None
    censor_target: PeerId | None = None
    spam_invalid_rate: float = 1.0
    sybil_ip_group: int = 1
    sybil_reconnect: int = 4

    message_rate: float = 10.0
    message_size: int = 2000
    topics: tuple[TopicId, ...] = ("blocks",)
    publish_start_ms: float | None = None
    drain_ms: float = 15_000.0

    latency: LatencyModel = field(default_factory=LatencyModel)
    mesh: MeshParams | None = None
    score: ScoreParams | None = None
    trim_threshold: float = -0.5

    flood: FloodParams = field(default_factory=FloodParams)
    sqrt_degree: int | None = None
    sqrt_max_conns: int = 40

    explicit_pairs: tuple[tuple[PeerId, PeerId], ...] = ()
    label: str = ""

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.n_honest <= 0:
            raise ValueError("n_honest must be > 0")
        if self.publishers_count > self.n_honest:
            raise ValueError("n_publishers must be <= n_honest")
        if self.duration_ms < 0:
            raise ValueError("duration_ms must be >= 0")
        if self.honest_join_ms >= self.duration_ms > 0 and self.duration_ms > 0:
            raise ValueError("honest_join_ms must fall before the run ends")
        if self.n_sybil > 0:
            if self.sybil_behavior is None:
                raise ValueError("n_sybil > 0 requires sybil_behavior")
            if self.sybil_join_ms >= self.duration_ms > 0:
                raise ValueError("sybil_join_ms must fall before the run ends")
        if self.message_rate <= 0:
            raise ValueError("message_rate must be > 0")
        if self.message_size <= 0:
            raise ValueError("message_size must be > 0")
        if not self.topics:
            raise ValueError("at least one topic required")
        self.latency.validate()
        self.resolved_mesh().validate()
        self.resolved_score().validate()

    @property
    def publishers_count(self) -> int:
        if self.n_publishers is not None:
            return self.n_publishers
        return max(1, self.n_honest // 10)

    @property
    def n_total(self) -> int:
        return self.n_honest + self.n_sybil

    def resolved_mesh(self) -> MeshParams:
        if self.mesh is not None:
            base = self.mesh
            if self.protocol == "plain" and base.scoring_enabled:
                base = replace(
                    base,
                    scoring_enabled=False,
                    flood_publish=False,
                    opp_graft_peers=0,
                    prune_backoff_ms=0.0,
                )
            return base
        if self.protocol == "plain":
            return MeshParams.plain()
        return MeshParams()

    def resolved_score(self) -> ScoreParams:
        if self.score is not None:
            return self.score
        return ScoreParams(deficit_threshold=expected_deficit_threshold(self.message_rate))

    def honest_ids(self) -> range:
        return range(self.n_honest)

    def sybil_ids(self) -> range:
        return range(self.n_honest, self.n_total)

    def publisher_ids(self) -> range:
        return range(self.publishers_count)


# ---------------------------------------------------------------------------
# Connections
# ---------------------------------------------------------------------------


class ConnectionTable:
    __slots__ = ("sim", "conns", "budgets", "soft_caps")

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.conns: dict[PeerId, dict[PeerId, str]] = {}
        self.budgets: dict[PeerId, int] = {}
        self.soft_caps: dict[PeerId, int] = {}

    def register(self, node: PeerId, budget: int, soft_cap: int | None = None) -> None:
        self.conns[node] = {}
        self.budgets[node] = budget
        self.soft_caps[node] = budget if soft_cap is None else min(soft_cap, budget)

    def degree(self, node: PeerId) -> int:
        return len(self.conns[node])

    def is_connected(self, a: PeerId, b: PeerId) -> bool:
        return b in self.conns[a]

    def direction(self, a: PeerId, b: PeerId) -> str:
        return self.conns[a][b]

    def try_connect(self, initiator: PeerId, target: PeerId, now: float, soft: bool = False) -> bool:
        """Open initiator -> target if budgets allow.

        Soft attempts (gossip, flood publishing) never displace an existing
        connection and respect the initiator's low-water mark, preserving
        inbound headroom.  Hard attempts (mesh building) may first close the
        initiator's least valuable idle connection.
        """
        if initiator == target:
            return False
        ci = self.conns.get(initiator)
        ct = self.conns.get(target)
        if ci is None or ct is None:
            return False
        if target in ci:
            return True
        if len(ct) >= self.budgets[target]:
            return False
        if soft:
            if len(ci) >= self.soft_caps[initiator]:
                return False
        elif len(ci) >= self.budgets[initiator]:
            victim = self.sim.nodes[initiator].eviction_candidate(ci, now)
            if victim is None:
                return False
            self.disconnect(initiator, victim, now)
        ci[target] = OUTBOUND
        ct[initiator] = INBOUND
        sim = self.sim
        sim.nodes[initiator].on_peer_connected(target, sim.ips[target], now)
        sim.nodes[target].on_peer_connected(initiator, sim.ips[initiator], now)
        sim.tracer.connect(now, initiator, target)
        return True

    def disconnect(self, a: PeerId, b: PeerId, now: float) -> None:
        if b not in self.conns[a]:
            return
        del self.conns[a][b]
        del self.conns[b][a]
        sim = self.sim
        sim.nodes[a].on_peer_disconnected(b, now)
        sim.nodes[b].on_peer_disconnected(a, now)
        sim.tracer.disconnect(now, a, b)


class NodePort:
    """Per-node connectivity adapter handed to routers."""

    __slots__ = ("table", "node_id", "sim")

    def __init__(self, table: ConnectionTable, node_id: PeerId, sim: "Simulation"):
        self.table = table
        self.node_id = node_id
        self.sim = sim

    def is_connected(self, peer: PeerId) -> bool:
        return peer in self.table.conns[self.node_id]

    def try_connect(self, peer: PeerId, soft: bool = False) -> bool:
        return self.table.try_connect(self.node_id, peer, self.sim.now, soft=soft)

    def direction(self, peer: PeerId) -> str:
        return self.table.conns[self.node_id][peer]

    def connected_peers(self):
        return self.table.conns[self.node_id].keys()

    def degree(self) -> int:
        return len(self.table.conns[self.node_id])


# ---------------------------------------------------------------------------
# Node wrappers
# ---------------------------------------------------------------------------


class _Node:
    """Common shape the event loop drives."""

    __slots__ = ("node_id", "impl", "join_ms", "needs_heartbeat", "port", "sim")

    def __init__(self, node_id, impl, join_ms, needs_heartbeat, port, sim):
        self.node_id = node_id
        self.impl = impl
        self.join_ms = join_ms
        self.needs_heartbeat = needs_heartbeat
        self.port = port
        self.sim = sim

    def join(self, now: float) -> None:
        raise NotImplementedError

    def handle_rpc(self, sender, rpc, now):
        return self.impl.handle_rpc(sender, rpc, now)

    def heartbeat(self, now):
        return self.impl.heartbeat(now)

    def on_peer_connected(self, peer, ip, now):
        self.impl.on_peer_connected(peer, ip, now)

    def on_peer_disconnected(self, peer, now):
        self.impl.on_peer_disconnected(peer, now)

    def eviction_candidate(self, connected, now):
        return None

    def after_heartbeat(self, now) -> None:
        pass

    def publish(self, topic, msg, now):
        return self.impl.publish(topic, msg, now)


class HonestMeshNode(_Node):
    """Honest node running the scoring gossipsub router."""

    __slots__ = ()

    def join(self, now: float) -> None:
        sim = self.sim
        cfg = sim.cfg
        rng = self.impl.rng
        present = [p for p in sim.all_ids if p != self.node_id and sim.join_ms_map[p] <= now]
        sample_size = min(cfg.honest_max_conns, len(present))
        known = rng.sample(present, sample_size) if sample_size else []
        for topic in cfg.topics:
            self.impl.seed_known(topic, known)
        initial = known[:]
        rng.shuffle(initial)
        for peer in initial[: cfg.honest_initial_outbound]:
            self.port.try_connect(peer)
        for topic in cfg.topics:
            sim.process_effects(self.node_id, self.impl.join_topic(topic, now), now)

    def eviction_candidate(self, connected, now):
        router: Router = self.impl
        if not router.params.scoring_enabled:
            return None
        meshed = set()
        for members in router.mesh.values():
            meshed.update(members)
        best: list[PeerId] = []
        best_score = 0.0
        for peer in connected:
            if peer in meshed or peer in router.explicit_peers:
                continue
            s = router.scorebook.score(peer, now)
            if s > 0.0:
                continue
            if not best or s < best_score:
                best = [peer]
                best_score = s
            elif s == best_score:
                best.append(peer)
        if not best:
            return None
        return min(best)

    def after_heartbeat(self, now) -> None:
        router: Router = self.impl
        if not router.params.scoring_enabled:
            return
        threshold = self.sim.cfg.trim_threshold
        table = self.sim.connections
        doomed = [
            peer
            for peer in table.conns[self.node_id]
            if router.scorebook.score(peer, now) < threshold
        ]
        for peer in doomed:
            table.disconnect(self.node_id, peer, now)


class BaselineNode(_Node):
    """Flooding or sqrt(N) node; connects to a fixed-size random sample."""

    __slots__ = ("initial_outbound",)

    def __init__(self, node_id, impl, join_ms, port, sim, initial_outbound):
        super().__init__(node_id, impl, join_ms, needs_heartbeat=False, port=port, sim=sim)
        self.initial_outbound = initial_outbound

    def join(self, now: float) -> None:
        sim = self.sim
        rng = self.impl.rng
        present = [p for p in sim.all_ids if p != self.node_id and sim.join_ms_map[p] <= now]
        want = min(self.initial_outbound, len(present))
        if want < self.initial_outbound:
            sim.tracer.warning(
                now, f"node {self.node_id}: only {want} of {self.initial_outbound} peers available"
            )
        for peer in rng.sample(present, want) if want else []:
            self.port.try_connect(peer)
        for topic in sim.cfg.topics:
            self.impl.join_topic(topic, now)


class SybilNode(_Node):
    """Adversary-controlled node."""

    __slots__ = ()

    def join(self, now: float) -> None:
        sim = self.sim
        cfg = sim.cfg
        adv: AdversaryNode = self.impl
        rng = adv.rng
        present = [p for p in sim.all_ids if p != self.node_id and sim.join_ms_map[p] <= now]
        if adv.behavior.kind != ECLIPSE_DROP:
            sample_size = min(cfg.sybil_max_conns, len(present))
            known = rng.sample(present, sample_size) if sample_size else []
            for topic in cfg.topics:
                adv.seed_known(topic, known)
            initial = known[:]
            rng.shuffle(initial)
            for peer in initial[: cfg.honest_initial_outbound]:
                self.port.try_connect(peer)
        targets = [t for t in adv.targets if sim.join_ms_map[t] <= now]
        rng.shuffle(targets)
        for target in targets:
            if self.sim.connections.degree(self.node_id) >= adv.behavior.conn_budget:
                break
            self.port.try_connect(target)
        for topic in cfg.topics:
            sim.process_effects(self.node_id, adv.join_topic(topic, now), now)


# ---------------------------------------------------------------------------
# The simulation engine
# ---------------------------------------------------------------------------


class Simulation:
    """One deterministic run of a scenario."""

    def __init__(self, cfg: ScenarioConfig, extra_sink: TraceSink | None = None):
        cfg.validate()
        self.cfg = cfg
        self.now = 0.0
        self.collector = Collector()
        self.tracer: TraceSink = (
            self.collector if extra_sink is None else Tee(self.collector, extra_sink)
        )
        self.connections = ConnectionTable(self)
        self.nodes: dict[PeerId, _Node] = {}
        self.ips: dict[PeerId, str] = {}
        self.join_ms_map: dict[PeerId, float] = {}
        self.all_ids: list[PeerId] = []
        self._heap: list = []
        self._seq = 0
        self._latency_rng = Random(f"{cfg.seed}/latency")
        self._traffic_rng = Random(f"{cfg.seed}/traffic")
        self._link_last: dict[int, float] = {}
        self._seqnos: dict[PeerId, int] = {}
        self._link_key_stride = cfg.n_total + 1
        self._setup()

    # -- construction -----------------------------------------------------------

    def _node_rng(self, node_id: PeerId) -> Random:
        return Random(f"{self.cfg.seed}/node/{node_id}")

    def _setup(self) -> None:
        cfg = self.cfg
        mesh_params = cfg.resolved_mesh()
        score_params = cfg.resolved_score()
        spam_ids = (
            set(cfg.sybil_ids()) if cfg.n_sybil and cfg.sybil_behavior == SPAM else set()
        )
        honest_join = cfg.honest_join_ms
        sybil_join = cfg.sybil_join_ms

        for node_id in cfg.honest_ids():
            self.ips[node_id] = f"10.h.{node_id}"
            self.join_ms_map[node_id] = honest_join
        group = max(1, cfg.sybil_ip_group)
        for idx, node_id in enumerate(cfg.sybil_ids()):
            self.ips[node_id] = f"10.s.{idx // group}"
            self.join_ms_map[node_id] = sybil_join
        self.all_ids = sorted(self.join_ms_map)

        # honest nodes
        for node_id in cfg.honest_ids():
            port = NodePort(self.connections, node_id, self)
            rng = self._node_rng(node_id)
            if cfg.protocol in ("gossipsub", "plain"):
                validators = ValidatorRegistry()
                for topic in cfg.topics:
                    if spam_ids:
                        validators.register(
                            topic, lambda m, _bad=frozenset(spam_ids): m.publisher not in _bad
                        )
                    else:
                        validators.register(topic)
                router = Router(
                    node_id,
                    mesh_params,
                    score_params,
                    rng=rng,
                    network=port,
                    validators=validators,
                    tracer=self.tracer,
                )
                node = HonestMeshNode(node_id, router, honest_join, True, port, self)
                budget = cfg.honest_max_conns
            elif cfg.protocol == "flood":
                cfg.flood.validate()
                impl = FloodRouter(node_id, rng=rng, tracer=self.tracer)
                budget = cfg.flood.total
                node = BaselineNode(
                    node_id,
                    impl,
                    honest_join,
                    port,
                    self,
                    initial_outbound=min(cfg.flood.total, max(cfg.n_total - 1, 1)),
                )
            else:  # sqrtn
                params = SqrtNParams(
                    network_size=cfg.n_total,
                    degree_override=cfg.sqrt_degree,
                    max_conns=cfg.sqrt_max_conns,
                )
                impl = SqrtNRouter(node_id, params, rng=rng, tracer=self.tracer)
                budget = cfg.sqrt_max_conns
                node = BaselineNode(
                    node_id,
                    impl,
                    honest_join,
                    port,
                    self,
                    initial_outbound=max(1, cfg.sqrt_max_conns // 2),
                )
            self.nodes[node_id] = node
            self.connections.register(node_id, budget)
            self._schedule(honest_join, _K_JOIN, node_id)

        # sybil nodes
        if cfg.n_sybil:
            censor_target = cfg.censor_target
            if censor_target is None and cfg.sybil_behavior == "censor":
                censor_target = 0
            targets = list(cfg.honest_ids())
            for node_id in cfg.sybil_ids():
                behavior = AdversaryBehavior(
                    kind=cfg.sybil_behavior,
                    conn_budget=cfg.sybil_max_conns,
                    ip=self.ips[node_id],
                    censor_target=censor_target,
                    attack_ms=cfg.attack_ms,
                    invalid_rate=cfg.spam_invalid_rate,
                    reconnect_per_heartbeat=cfg.sybil_reconnect,
                )
                behavior.validate(cfg.duration_ms if cfg.duration_ms > 0 else None)
                port = NodePort(self.connections, node_id, self)
                adv = AdversaryNode(
                    node_id,
                    behavior,
                    targets,
                    mesh_params if cfg.protocol in ("gossipsub", "plain") else MeshParams(),
                    score_params,
                    rng=self._node_rng(node_id),
                    network=port,
                    tracer=None,
                )
                self.nodes[node_id] = SybilNode(node_id, adv, sybil_join, True, port, self)
                self.connections.register(node_id, cfg.sybil_max_conns)
                self._schedule(sybil_join, _K_JOIN, node_id)

        # explicit peering agreements
        for a, b in cfg.explicit_pairs:
            for x, y in ((a, b), (b, a)):
                impl = self.nodes[x].impl
                if isinstance(impl, Router):
                    impl.add_explicit_peer(y)

        # heartbeats, staggered by node id within the interval
        interval = mesh_params.heartbeat_interval_ms
        for node_id, node in self.nodes.items():
            if node.needs_heartbeat:
                first = self.join_ms_map[node_id] + (node_id % int(interval)) + interval
                self._schedule(first, _K_HEARTBEAT, node_id)

        # traffic
        publishers = list(cfg.publisher_ids())
        start = cfg.publish_start_ms if cfg.publish_start_ms is not None else honest_join
        start = max(start, honest_join)
        stop = cfg.duration_ms - cfg.drain_ms
        step = 1000.0 / cfg.message_rate
        t = float(start)
        while t < stop:
            publisher = self._traffic_rng.choice(publishers)
            self._schedule(t, _K_PUBLISH, publisher, payload=cfg.topics[0])
            t += step

        if cfg.attack_ms is not None:
            self._schedule(cfg.attack_ms, _K_ATTACK, -1)

        self.tracer.run_meta(
            {
                "label": cfg.label,
                "seed": cfg.seed,
                "protocol": cfg.protocol,
                "duration_ms": cfg.duration_ms,
                "message_rate": cfg.message_rate,
                "message_size": cfg.message_size,
                "honest": list(cfg.honest_ids()),
                "sybils": list(cfg.sybil_ids()),
                "publishers": publishers,
                "join_ms": {str(k): v for k, v in self.join_ms_map.items()},
                "topics": list(cfg.topics),
            }
        )

    # -- scheduling --------------------------------------------------------------

    def _schedule(self, at: float, kind: int, node: PeerId, src: PeerId = -1, payload=None) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (at, self._seq, kind, node, src, payload))

    def send_rpc(self, src: PeerId, dst: PeerId, rpc: Rpc, now: float) -> None:
        table = self.connections
        if not table.is_connected(src, dst) and not table.try_connect(src, dst, now):
            self.tracer.rpc_dropped(now, src, dst)
            return
        latency = sample_latency(self.cfg.latency, self._latency_rng)
        arrival = now + latency
        key = src * self._link_key_stride + dst
        prev = self._link_last.get(key, 0.0)
        if arrival < prev:
            arrival = prev
        self._link_last[key] = arrival
        self._schedule(arrival, _K_RPC, dst, src, rpc)

    def process_effects(self, src: PeerId, effects, now: float) -> None:
        for dst, rpc in effects.sends:
            self.send_rpc(src, dst, rpc, now)

    # -- main loop ------------------------------------------------------------------

    def run(self, until: float | None = None) -> None:
        duration = self.cfg.duration_ms
        heap = self._heap
        nodes = self.nodes
        interval = self.cfg.resolved_mesh().heartbeat_interval_ms
        while heap:
            at = heap[0][0]
            if at > duration or (until is not None and at > until):
                break
            at, _seq, kind, node_id, src, payload = heapq.heappop(heap)
            self.now = at
            if kind == _K_RPC:
                node = nodes[node_id]
                self.process_effects(node_id, node.handle_rpc(src, payload, at), at)
            elif kind == _K_HEARTBEAT:
                node = nodes[node_id]
                self.process_effects(node_id, node.heartbeat(at), at)
                node.after_heartbeat(at)
                nxt = at + interval
                if nxt <= duration:
                    self._schedule(nxt, _K_HEARTBEAT, node_id)
            elif kind == _K_PUBLISH:
                node = nodes[node_id]
                seqno = self._seqnos.get(node_id, 0)
                self._seqnos[node_id] = seqno + 1
                msg = Message(
                    publisher=node_id,
                    seqno=seqno,
                    topic=payload,
                    payload_size=self.cfg.message_size,
                    publish_time=at,
                )
                self.process_effects(node_id, node.publish(payload, msg, at), at)
            elif kind == _K_JOIN:
                nodes[node_id].join(at)
            elif kind == _K_ATTACK:
                for nid in self.cfg.sybil_ids():
                    impl = nodes[nid].impl
                    if isinstance(impl, AdversaryNode):
                        impl.start_attack(at)
        if until is None:
            self.now = duration
            self.tracer.run_end(duration)

    def report(self, version: str = "0") -> RunReport:
        return self.collector.finalize(version)


def run(cfg: ScenarioConfig, extra_sink: TraceSink | None = None, version: str = "0") -> RunReport:
    """Set up, execute and report one scenario."""
    sim = Simulation(cfg, extra_sink=extra_sink)
    sim.run()
    return sim.report(version)


def build_topology(cfg: ScenarioConfig) -> dict[PeerId, set[PeerId]]:
    """Adjacency after the first join wave (deterministic in the seed)."""
    sim = Simulation(cfg)
    first_wave = min(sim.join_ms_map.values())
    sim.run(until=first_wave)
    return {node: set(peers) for node, peers in sim.connections.conns.items()}
