"""Per-peer behaviour scoring.

Every node keeps a :class:`ScoreBook` for the peers it interacts with; scores
are never shared between nodes.  The score of a peer is a weighted sum of
observed-behaviour components, evaluated fresh from counters on demand:

* time in mesh              (per topic, capped, positive weight)
* first message deliveries  (per topic, capped, positive weight)
* mesh delivery deficit     (per topic, squared shortfall vs. an expected
                             delivery rate, capped, negative weight; only
                             active once a peer has been in the mesh longer
                             than an activation window)
* mesh failure penalty      (per topic, squared accumulated deficit recorded
                             when an under-delivering peer is pruned,
                             uncapped, negative weight -- this is what makes
                             bad history sticky)
* invalid messages          (per topic, uncapped, negative weight)
* application score         (global, arbitrary real, positive weight)
* IP collocation            (global, squared surplus of peers sharing an IP
                             above a threshold, negative weight)

The per-topic portion is capped from above (never from below), so good
behaviour saturates while misbehaviour keeps hurting.  Counters decay
multiplicatively on a fixed interval and snap to zero below a floor, so
neither credit nor blame lasts forever.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .types import PeerId, TopicId

#: Seconds per hour; the default time-in-mesh weight normalises a fully
#: capped hour of mesh residence to a contribution of 1.0.
_HOUR_S = 3600.0


@dataclass(frozen=True, slots=True)
class ScoreParams:
    """Weights, caps and decay configuration of the score function.

    Sign conventions are enforced in :meth:`validate`: delivery credits have
    positive weights, penalties have non-positive weights.  All defaults are
    overridable per scenario; ``deficit_threshold`` in particular should be
    derived from the expected per-peer traffic rate (see
    :func:`expected_deficit_threshold`).
    """

    topic_weights: dict[TopicId, float] = field(default_factory=dict)
    default_topic_weight: float = 1.0

    time_in_mesh_weight: float = 1.0 / _HOUR_S
    time_in_mesh_cap_s: float = 3600.0

    first_delivery_weight: float = 1.0
    first_delivery_cap: float = 100.0

    deficit_weight: float = -1.0
    deficit_threshold: float = 1.25
    deficit_cap: float = 100.0
    deficit_activation_ms: float = 2000.0
    delivery_window_ms: float = 1000.0

    failure_weight: float = -1.0

    invalid_weight: float = -10.0

    app_score_weight: float = 1.0

    ip_weight: float = -1.0
    ip_threshold: int = 1

    topic_score_cap: float = 100.0

    decay_interval_ms: float = 1000.0
    first_delivery_decay: float = 0.90
    mesh_delivery_decay: float = 0.90
    failure_decay: float = 0.90
    invalid_decay: float = 0.90
    decay_to_zero: float = 0.01

    def validate(self) -> None:
        if self.time_in_mesh_weight < 0 or self.first_delivery_weight < 0:
            raise ValueError("delivery credit weights must be >= 0")
        if self.deficit_weight > 0 or self.failure_weight > 0 or self.invalid_weight > 0:
            raise ValueError("penalty weights must be <= 0")
        if self.app_score_weight < 0:
            raise ValueError("app score weight must be >= 0")
        if self.ip_weight > 0:
            raise ValueError("ip collocation weight must be <= 0")
        if self.deficit_threshold <= 0:
            raise ValueError("deficit_threshold must be > 0")
        if self.decay_interval_ms <= 0:
            raise ValueError("decay_interval_ms must be > 0")
        for f in (
            self.first_delivery_decay,
            self.mesh_delivery_decay,
            self.failure_decay,
            self.invalid_decay,
        ):
            if not 0.0 < f <= 1.0:
                raise ValueError("decay factors must be in (0, 1]")

    def topic_weight(self, topic: TopicId) -> float:
        return self.topic_weights.get(topic, self.default_topic_weight)

    def with_overrides(self, **kwargs) -> "ScoreParams":
        return replace(self, **kwargs)


def expected_deficit_threshold(
    message_rate_per_s: float,
    decay_interval_ms: float = 1000.0,
    mesh_share: float = 0.5,
    safety: float = 0.25,
) -> float:
    """Per-interval mesh-delivery threshold derived from the traffic model.

    A mesh member relays roughly half the topic traffic to a given neighbour
    (either direction of each mesh edge carries a message once), so the
    expected deliveries per decay interval are scaled by ``mesh_share`` and a
    safety factor to avoid penalising honest jitter.
    """
    return max(1e-9, message_rate_per_s * (decay_interval_ms / 1000.0) * mesh_share * safety)


@dataclass(slots=True)
class TopicStats:
    """Per-topic observation counters for one peer."""

    mesh_since: float | None = None
    first_deliveries: float = 0.0
    mesh_deliveries: float = 0.0
    mesh_failure_penalty: float = 0.0
    invalid_messages: float = 0.0

    @property
    def in_mesh(self) -> bool:
        return self.mesh_since is not None


@dataclass(slots=True)
class PeerStats:
    """Everything one node remembers about one observed peer."""

    ip: str = ""
    app_score: float = 0.0
    connected: bool = False
    topics: dict[TopicId, TopicStats] = field(default_factory=dict)

    def topic(self, topic: TopicId) -> TopicStats:
        ts = self.topics.get(topic)
        if ts is None:
            ts = TopicStats()
            self.topics[topic] = ts
        return ts


class ScoreBook:
    """Score state owned by a single node; mutated only by its event handler.

    Stats are retained after disconnects so that a misbehaving peer cannot
    shed a bad record by reconnecting; only the IP census tracks live
    connections.
    """

    __slots__ = ("params", "stats", "ip_census")

    def __init__(self, params: ScoreParams):
        params.validate()
        self.params = params
        self.stats: dict[PeerId, PeerStats] = {}
        self.ip_census: dict[str, int] = {}

    # -- connection bookkeeping -------------------------------------------

    def on_connect(self, peer: PeerId, ip: str) -> None:
        ps = self.stats.get(peer)
        if ps is None:
            ps = PeerStats(ip=ip)
            self.stats[peer] = ps
        elif not ps.ip:
            ps.ip = ip
        if not ps.connected:
            ps.connected = True
            self.ip_census[ps.ip] = self.ip_census.get(ps.ip, 0) + 1

    def on_disconnect(self, peer: PeerId) -> None:
        ps = self.stats.get(peer)
        if ps is None or not ps.connected:
            return
        ps.connected = False
        n = self.ip_census.get(ps.ip, 0) - 1
        if n <= 0:
            self.ip_census.pop(ps.ip, None)
        else:
            self.ip_census[ps.ip] = n

    def known(self, peer: PeerId) -> bool:
        return peer in self.stats

    def _ensure(self, peer: PeerId) -> PeerStats:
        ps = self.stats.get(peer)
        if ps is None:
            ps = PeerStats()
            self.stats[peer] = ps
        return ps

    # -- event recording ---------------------------------------------------

    def record_graft(self, peer: PeerId, topic: TopicId, now: float) -> None:
        ts = self._ensure(peer).topic(topic)
        if ts.mesh_since is None:
            ts.mesh_since = now

    def record_prune(self, peer: PeerId, topic: TopicId, now: float) -> None:
        """Clear mesh membership; make under-delivery sticky.

        If the peer leaves the mesh with an active delivery deficit while its
        score is negative, the raw (pre-squaring) deficit is added to the
        uncapped failure penalty.
        """
        ps = self.stats.get(peer)
        if ps is None:
            return
        ts = ps.topics.get(topic)
        if ts is None or ts.mesh_since is None:
            return
        deficit = self._deficit(ts, now)
        if deficit > 0 and self.score(peer, now) < 0:
            ts.mesh_failure_penalty += deficit
        ts.mesh_since = None

    def record_delivery(
        self,
        peer: PeerId,
        topic: TopicId,
        *,
        first: bool,
        in_mesh: bool,
        within_window: bool = True,
    ) -> None:
        """Credit a message delivery.

        First deliveries always count toward the first-delivery credit and,
        for mesh members, toward the mesh delivery rate.  Duplicates only
        count toward the mesh rate when they arrive within the validity
        window, so a peer cannot build score by replaying old messages.
        """
        ts = self._ensure(peer).topic(topic)
        if first:
            ts.first_deliveries += 1.0
            if in_mesh:
                ts.mesh_deliveries += 1.0
        elif in_mesh and within_window:
            ts.mesh_deliveries += 1.0

    def record_invalid(self, peer: PeerId, topic: TopicId) -> None:
        self._ensure(peer).topic(topic).invalid_messages += 1.0

    def set_app_score(self, peer: PeerId, value: float) -> None:
        self._ensure(peer).app_score = value

    # -- decay ---------------------------------------------------------------

    def decay_tick(self, now: float) -> None:
        """Multiply every decaying counter by its factor; snap tiny values to 0.

        Mesh residence time does not decay (it is a timestamp, not a counter)
        and neither does the app score (owned by the application).
        """
        p = self.params
        zero = p.decay_to_zero
        for ps in self.stats.values():
            for ts in ps.topics.values():
                ts.first_deliveries *= p.first_delivery_decay
                if ts.first_deliveries < zero:
                    ts.first_deliveries = 0.0
                ts.mesh_deliveries *= p.mesh_delivery_decay
                if ts.mesh_deliveries < zero:
                    ts.mesh_deliveries = 0.0
                ts.mesh_failure_penalty *= p.failure_decay
                if ts.mesh_failure_penalty < zero:
                    ts.mesh_failure_penalty = 0.0
                ts.invalid_messages *= p.invalid_decay
                if ts.invalid_messages < zero:
                    ts.invalid_messages = 0.0

    # -- evaluation ------------------------------------------------------------

    def _deficit(self, ts: TopicStats, now: float) -> float:
        """Raw (pre-squaring) mesh delivery shortfall, 0 unless activated."""
        if ts.mesh_since is None:
            return 0.0
        if now - ts.mesh_since < self.params.deficit_activation_ms:
            return 0.0
        d = self.params.deficit_threshold - ts.mesh_deliveries
        return d if d > 0 else 0.0

    def score(self, peer: PeerId, now: float) -> float:
        """Evaluate the weighted score of a peer at virtual time ``now``."""
        ps = self.stats.get(peer)
        if ps is None:
            return 0.0
        p = self.params
        topic_sum = 0.0
        for topic, ts in ps.topics.items():
            t = 0.0
            if ts.mesh_since is not None:
                elapsed_s = (now - ts.mesh_since) / 1000.0
                if elapsed_s > p.time_in_mesh_cap_s:
                    elapsed_s = p.time_in_mesh_cap_s
                t += p.time_in_mesh_weight * elapsed_s
            fd = ts.first_deliveries
            if fd > p.first_delivery_cap:
                fd = p.first_delivery_cap
            t += p.first_delivery_weight * fd
            deficit = self._deficit(ts, now)
            if deficit > 0.0:
                sq = deficit * deficit
                if sq > p.deficit_cap:
                    sq = p.deficit_cap
                t += p.deficit_weight * sq
            if ts.mesh_failure_penalty > 0.0:
                t += p.failure_weight * ts.mesh_failure_penalty * ts.mesh_failure_penalty
            if ts.invalid_messages > 0.0:
                t += p.invalid_weight * ts.invalid_messages
            topic_sum += p.topic_weight(topic) * t
        if topic_sum > p.topic_score_cap:
            topic_sum = p.topic_score_cap
        total = topic_sum + p.app_score_weight * ps.app_score
        if p.ip_weight != 0.0 and ps.ip:
            surplus = self.ip_census.get(ps.ip, 0) - p.ip_threshold
            if surplus > 0:
                total += p.ip_weight * float(surplus * surplus)
        return total
