import random

import pytest

from gossipsim.router import INBOUND, OUTBOUND, AllConnected, Effects, MeshParams, MessageCache, Router
from gossipsim.scoring import ScoreParams
from gossipsim.types import Graft, IHave, IWant, Message, Prune, Rpc, compute_message_id

T = "blocks"


def mk_router(
    node_id=0,
    seed=7,
    mesh_overrides=None,
    score_overrides=None,
    directions=None,
    network=None,
    tracer=None,
) -> Router:
    mp = MeshParams(**(mesh_overrides or {}))
    sp_kwargs = dict(deficit_weight=0.0, time_in_mesh_weight=0.0)
    sp_kwargs.update(score_overrides or {})
    sp = ScoreParams(**sp_kwargs)
    net = network if network is not None else AllConnected(directions or {})
    return Router(node_id, mp, sp, rng=random.Random(seed), network=net, tracer=tracer)


def mk_msg(publisher=1, seqno=0, topic=T, t=0.0):
    return Message(publisher=publisher, seqno=seqno, topic=topic, payload_size=2000, publish_time=t)


def grafts_in(eff: Effects):
    return [(to, c) for to, rpc in eff.sends for c in rpc.control if isinstance(c, Graft)]


def prunes_in(eff: Effects):
    return [(to, c) for to, rpc in eff.sends for c in rpc.control if isinstance(c, Prune)]


def ihaves_in(eff: Effects):
    return [(to, c) for to, rpc in eff.sends for c in rpc.control if isinstance(c, IHave)]


def iwants_in(eff: Effects):
    return [(to, c) for to, rpc in eff.sends for c in rpc.control if isinstance(c, IWant)]


def subscribe_with_mesh(r: Router, members, now=0.0):
    r.join_topic(T, now)
    for peer in members:
        r.mesh[T][peer] = r.network.direction(peer)
        r.scorebook.record_graft(peer, T, now)
        r._learn(T, peer)


class TestJoinLeave:
    def test_join_grafts_exactly_d(self):
        r = mk_router()
        r.seed_known(T, range(1, 21))
        eff = r.join_topic(T, now=0.0)
        assert len(grafts_in(eff)) == 8
        assert len(r.mesh[T]) == 8

    def test_join_with_no_known_peers(self):
        r = mk_router()
        eff = r.join_topic(T, now=0.0)
        assert eff.sends == []
        assert T in r.topics

    def test_join_honors_backoff(self):
        r = mk_router()
        r.seed_known(T, [1, 2, 3, 4, 5])
        r._register_backoff(T, 1, now=0.0, duration=60_000.0)
        r._register_backoff(T, 2, now=0.0, duration=60_000.0)
        eff = r.join_topic(T, now=0.0)
        targets = {to for to, _ in grafts_in(eff)}
        assert targets == {3, 4, 5}

    def test_leave_prunes_every_member(self):
        r = mk_router()
        r.seed_known(T, range(1, 21))
        r.join_topic(T, now=0.0)
        eff = r.leave_topic(T, now=1.0)
        assert len(prunes_in(eff)) == 8
        assert r.mesh[T] == {}

    def test_leave_of_unsubscribed_topic_is_noop(self):
        r = mk_router()
        assert r.leave_topic(T, now=0.0).sends == []

    def test_leave_prunes_carry_px_from_known(self):
        r = mk_router()
        r.seed_known(T, range(1, 30))
        r.join_topic(T, now=0.0)
        eff = r.leave_topic(T, now=1.0)
        for _, prune in prunes_in(eff):
            assert prune.px
            assert set(prune.px) <= set(range(1, 30))


class TestHandleGraft:
    def test_accept_under_d_high(self):
        r = mk_router()
        subscribe_with_mesh(r, range(1, 8))
        eff = r.handle_graft(50, T, now=0.0)
        assert eff.sends == []
        assert 50 in r.mesh[T]

    def test_reject_when_full(self):
        r = mk_router()
        subscribe_with_mesh(r, range(1, 13))
        eff = r.handle_graft(50, T, now=0.0)
        assert len(prunes_in(eff)) == 1
        assert 50 not in r.mesh[T]

    def test_reject_during_backoff_window(self):
        r = mk_router()
        r.join_topic(T, now=0.0)
        r.handle_prune(9, T, px=(), backoff_ms=60_000.0, now=0.0)
        eff = r.handle_graft(9, T, now=30_000.0)
        assert len(prunes_in(eff)) == 1
        assert 9 not in r.mesh[T]
        # the rejection itself re-arms the backoff window
        eff = r.handle_graft(9, T, now=95_000.0)
        assert 9 in r.mesh[T]

    def test_reject_negative_score_peer(self):
        r = mk_router()
        r.join_topic(T, now=0.0)
        r.scorebook.set_app_score(66, -5.0)
        eff = r.handle_graft(66, T, now=0.0)
        assert len(prunes_in(eff)) == 1
        assert 66 not in r.mesh[T]

    def test_unsubscribed_topic_replies_prune(self):
        r = mk_router()
        eff = r.handle_graft(5, "elsewhere", now=0.0)
        assert len(prunes_in(eff)) == 1

    def test_double_graft_idempotent(self):
        r = mk_router()
        subscribe_with_mesh(r, [1])
        before = r.scorebook.stats[1].topic(T).mesh_since
        r.handle_graft(1, T, now=500.0)
        assert r.scorebook.stats[1].topic(T).mesh_since == before


class TestHandlePrune:
    def test_px_absorbed_from_positive_peer(self):
        r = mk_router()
        subscribe_with_mesh(r, [5])
        r.handle_prune(5, T, px=(101, 102, 103), backoff_ms=0.0, now=0.0)
        assert {101, 102, 103} <= r.known[T]
        assert 5 not in r.mesh[T]

    def test_px_from_negative_peer_discarded(self):
        r = mk_router()
        subscribe_with_mesh(r, [5])
        r.scorebook.set_app_score(5, -1.0)
        r.handle_prune(5, T, px=(101, 102), backoff_ms=0.0, now=0.0)
        assert 101 not in r.known[T] and 102 not in r.known[T]

    def test_prune_from_non_mesh_peer_registers_backoff(self):
        r = mk_router()
        r.join_topic(T, now=0.0)
        r.handle_prune(77, T, px=(), backoff_ms=60_000.0, now=0.0)
        assert r._backoff_active(T, 77, now=30_000.0)
        assert not r._backoff_active(T, 77, now=60_001.0)


class TestHandleMessage:
    def test_forward_counts(self):
        r = mk_router()
        subscribe_with_mesh(r, range(1, 9))
        r.add_explicit_peer(100)
        r.add_explicit_peer(101)
        eff = r.handle_message(1, mk_msg(), now=10.0)
        targets = [to for to, _ in eff.sends]
        assert len(targets) == 7 + 2
        assert 1 not in targets
        assert eff.local == [mk_msg()]

    def test_duplicate_produces_no_forwards(self):
        r = mk_router()
        subscribe_with_mesh(r, range(1, 9))
        r.handle_message(1, mk_msg(), now=10.0)
        eff = r.handle_message(2, mk_msg(), now=20.0)
        assert eff.sends == [] and eff.local == []

    def test_invalid_message_dropped_and_counted(self):
        r = mk_router()
        subscribe_with_mesh(r, range(1, 9))
        r.validators.register(T, lambda m: False)
        eff = r.handle_message(1, mk_msg(), now=10.0)
        assert eff.sends == [] and eff.local == []
        assert r.scorebook.stats[1].topic(T).invalid_messages == 1.0

    def test_unknown_topic_dropped_silently(self):
        r = mk_router()
        eff = r.handle_message(1, mk_msg(topic="nowhere"), now=0.0)
        assert eff.sends == [] and eff.local == []

    def test_local_delivery_exactly_once(self):
        r = mk_router()
        subscribe_with_mesh(r, [1, 2])
        first = r.handle_message(1, mk_msg(), now=0.0)
        second = r.handle_message(2, mk_msg(), now=1.0)
        assert len(first.local) == 1 and second.local == []

    def test_duplicate_credits_mesh_rate_within_window(self):
        r = mk_router(score_overrides={"delivery_window_ms": 1000.0})
        subscribe_with_mesh(r, [1, 2])
        r.handle_message(1, mk_msg(), now=0.0)
        r.handle_message(2, mk_msg(), now=500.0)
        assert r.scorebook.stats[2].topic(T).mesh_deliveries == 1.0
        r.handle_message(2, mk_msg(seqno=9), now=0.0)  # first from 2
        r.handle_message(2, mk_msg(), now=5000.0)  # stale duplicate
        assert r.scorebook.stats[2].topic(T).mesh_deliveries == 2.0


class TestPublish:
    def test_flood_publish_hits_all_known_subscribers(self):
        r = mk_router()
        r.join_topic(T, now=0.0)
        r.seed_known(T, range(1, 16))
        eff = r.publish(T, mk_msg(publisher=0), now=0.0)
        assert len(eff.sends) == 15

    def test_flood_publish_skips_negative_scores(self):
        r = mk_router()
        r.join_topic(T, now=0.0)
        r.seed_known(T, range(1, 16))
        for p in (3, 7, 11):
            r.scorebook.set_app_score(p, -4.0)
        eff = r.publish(T, mk_msg(publisher=0), now=0.0)
        assert len(eff.sends) == 12

    def test_mesh_only_publish_when_flood_off(self):
        r = mk_router(mesh_overrides={"flood_publish": False})
        subscribe_with_mesh(r, range(1, 9))
        r.seed_known(T, range(1, 16))
        eff = r.publish(T, mk_msg(publisher=0), now=0.0)
        assert {to for to, _ in eff.sends} == set(range(1, 9))

    def test_publish_without_subscription_is_legal(self):
        r = mk_router()
        r.seed_known(T, [1, 2, 3])
        eff = r.publish(T, mk_msg(publisher=0), now=0.0)
        assert len(eff.sends) == 3
        assert compute_message_id(mk_msg(publisher=0)) in r.mcache


class TestGossipControl:
    def test_iwant_for_unseen_subset(self):
        r = mk_router()
        subscribe_with_mesh(r, [1])
        seen_msg = mk_msg(seqno=1)
        r.handle_message(1, seen_msg, now=0.0)
        x, y, z = (compute_message_id(mk_msg(seqno=n)) for n in (0, 1, 2))
        eff = r.handle_ihave(2, T, [x, y, z], now=10.0)
        (to, iwant), = iwants_in(eff)
        assert to == 2 and set(iwant.ids) == {x, z}

    def test_no_iwant_when_everything_seen(self):
        r = mk_router()
        subscribe_with_mesh(r, [1])
        r.handle_message(1, mk_msg(), now=0.0)
        eff = r.handle_ihave(2, T, [compute_message_id(mk_msg())], now=1.0)
        assert eff.sends == []

    def test_iwant_budget_caps_at_512(self):
        r = mk_router()
        r.join_topic(T, now=0.0)
        ids = [compute_message_id(mk_msg(seqno=n)) for n in range(1000)]
        eff = r.handle_ihave(2, T, ids, now=0.0)
        (_, iwant), = iwants_in(eff)
        assert len(iwant.ids) == 512
        assert r.handle_ihave(2, T, ids, now=1.0).sends == []

    def test_iwant_served_from_cache(self):
        r = mk_router()
        subscribe_with_mesh(r, [1])
        msgs = [mk_msg(seqno=n) for n in range(3)]
        for m in msgs[:2]:
            r.handle_message(1, m, now=0.0)
        eff = r.handle_iwant(2, [compute_message_id(m) for m in msgs], now=1.0)
        ((to, rpc),) = eff.sends
        assert to == 2 and len(rpc.messages) == 2

    def test_evicted_id_not_served(self):
        r = mk_router()
        subscribe_with_mesh(r, [1])
        r.handle_message(1, mk_msg(), now=0.0)
        for _ in range(6):
            r.mcache.shift()
        eff = r.handle_iwant(2, [compute_message_id(mk_msg())], now=1.0)
        assert eff.sends == []


class TestMaintainMesh:
    def test_oversubscription_retains_top_scorers(self):
        r = mk_router()
        subscribe_with_mesh(r, range(1, 15))  # 14 members, d_high 12
        for peer in range(1, 15):
            r.scorebook.set_app_score(peer, float(peer))
        r.maintain_mesh(T, now=0.0)
        members = set(r.mesh[T])
        assert len(members) == 8
        assert {9, 10, 11, 12, 13, 14} <= members  # top d_score=6 all retained

    def test_undersubscription_grafts_to_d(self):
        r = mk_router()
        subscribe_with_mesh(r, [1, 2, 3, 4])
        r.seed_known(T, range(1, 15))
        eff = r.maintain_mesh(T, now=0.0)
        assert len(grafts_in(eff)) == 4
        assert len(r.mesh[T]) == 8

    def test_negative_member_pruned_on_heartbeat(self):
        r = mk_router()
        subscribe_with_mesh(r, range(1, 9))
        r.scorebook.set_app_score(3, -1.0)
        eff = r.heartbeat(now=1000.0)
        assert 3 not in r.mesh[T]
        assert any(to == 3 for to, _ in prunes_in(eff))

    def test_outbound_quota_repair(self):
        directions = {p: INBOUND for p in range(1, 9)}
        directions[1] = OUTBOUND
        directions[20] = OUTBOUND
        r = mk_router(directions=directions)
        subscribe_with_mesh(r, range(1, 9))
        r.seed_known(T, [20])
        assert r.outbound_mesh_count(T) == 1
        r.maintain_mesh(T, now=0.0)
        assert r.outbound_mesh_count(T) == 2
        assert 20 in r.mesh[T]
        assert len(r.mesh[T]) == 8

    def test_oversubscription_respects_outbound_quota(self):
        directions = {p: (OUTBOUND if p in (13, 14) else INBOUND) for p in range(1, 15)}
        r = mk_router(directions=directions)
        subscribe_with_mesh(r, range(1, 15))
        for peer in range(1, 13):
            r.scorebook.set_app_score(peer, float(peer + 10))
        r.maintain_mesh(T, now=0.0)
        assert r.outbound_mesh_count(T) >= 2

    def test_plain_mode_prunes_randomly_without_score_gate(self):
        r = mk_router(mesh_overrides={"scoring_enabled": False, "flood_publish": False})
        subscribe_with_mesh(r, range(1, 15))
        r.scorebook.set_app_score(1, -50.0)
        r.maintain_mesh(T, now=0.0)
        assert len(r.mesh[T]) == 8  # trimmed to d, negative score not special-cased

    def test_no_graft_to_backed_off_peer(self):
        r = mk_router()
        subscribe_with_mesh(r, [1, 2])
        r.seed_known(T, range(1, 10))
        for p in range(3, 10):
            r._register_backoff(T, p, now=0.0, duration=60_000.0)
        eff = r.maintain_mesh(T, now=0.0)
        assert grafts_in(eff) == []


class TestOpportunisticGraft:
    def mk(self):
        r = mk_router(mesh_overrides={"opp_graft_threshold": 5.0, "opp_graft_peers": 2})
        subscribe_with_mesh(r, [1, 2, 3])
        for p in (1, 2, 3):
            r.scorebook.set_app_score(p, 2.0)
        return r

    def test_grafts_above_median_candidates(self):
        r = self.mk()
        r.seed_known(T, [10, 11])
        r.scorebook.set_app_score(10, 6.0)
        r.scorebook.set_app_score(11, 8.0)
        eff = r.opportunistic_graft(T, now=0.0)
        assert {to for to, _ in grafts_in(eff)} == {10, 11}

    def test_noop_when_median_healthy(self):
        r = self.mk()
        for p in (1, 2, 3):
            r.scorebook.set_app_score(p, 10.0)
        r.seed_known(T, [10])
        r.scorebook.set_app_score(10, 50.0)
        assert r.opportunistic_graft(T, now=0.0).sends == []

    def test_noop_without_candidates_above_median(self):
        r = self.mk()
        r.seed_known(T, [10, 11])
        for p in (10, 11):
            r.scorebook.set_app_score(p, 1.0)
        assert r.opportunistic_graft(T, now=0.0).sends == []


class TestEmitGossip:
    def prime(self, r):
        r.join_topic(T, now=0.0)
        r.publish(T, mk_msg(publisher=r.node_id), now=0.0)

    def test_quarter_of_candidates_targeted(self):
        r = mk_router()
        self.prime(r)
        r.seed_known(T, range(1, 41))
        eff = r.emit_gossip(T, now=1.0)
        assert len(ihaves_in(eff)) == 10

    def test_no_candidates_no_gossip(self):
        r = mk_router()
        self.prime(r)
        assert r.emit_gossip(T, now=1.0).sends == []

    def test_no_cached_ids_no_gossip(self):
        r = mk_router()
        r.join_topic(T, now=0.0)
        r.seed_known(T, range(1, 41))
        assert r.emit_gossip(T, now=1.0).sends == []

    def test_small_candidate_floor_of_six(self):
        r = mk_router()
        self.prime(r)
        r.seed_known(T, range(1, 9))
        eff = r.emit_gossip(T, now=1.0)
        assert len(ihaves_in(eff)) == 6

    def test_gossip_factor_zero_disables_gossip(self):
        r = mk_router(mesh_overrides={"gossip_factor": 0.0})
        self.prime(r)
        r.seed_known(T, range(1, 41))
        assert r.emit_gossip(T, now=1.0).sends == []

    def test_mesh_members_excluded_by_default(self):
        r = mk_router()
        self.prime(r)
        subscribe_with_mesh(r, range(1, 9))
        r.seed_known(T, range(1, 20))
        eff = r.emit_gossip(T, now=1.0)
        assert all(to not in r.mesh[T] for to, _ in ihaves_in(eff))

    def test_negative_score_candidates_skipped(self):
        r = mk_router()
        self.prime(r)
        r.seed_known(T, [1, 2, 3])
        for p in (1, 2, 3):
            r.scorebook.set_app_score(p, -1.0)
        assert r.emit_gossip(T, now=1.0).sends == []


class TestHeartbeat:
    def test_id_gossiped_exactly_gossip_rounds_heartbeats(self):
        r = mk_router()
        r.join_topic(T, now=0.0)
        r.seed_known(T, range(1, 25))  # leaves non-mesh gossip candidates
        mid = compute_message_id(mk_msg(publisher=0))
        r.publish(T, mk_msg(publisher=0), now=0.0)
        rounds_with_id = 0
        for k in range(1, 7):
            eff = r.heartbeat(now=1000.0 * k)
            advertised = {i for _, ih in ihaves_in(eff) for i in ih.ids}
            if mid in advertised:
                rounds_with_id += 1
            elif rounds_with_id:
                break
        assert rounds_with_id == 3

    def test_steady_state_emits_only_gossip(self):
        r = mk_router()
        subscribe_with_mesh(r, range(1, 9))
        r.seed_known(T, range(1, 30))
        r.publish(T, mk_msg(publisher=0), now=0.0)
        eff = r.heartbeat(now=1000.0)
        assert prunes_in(eff) == [] and grafts_in(eff) == []
        assert ihaves_in(eff)

    def test_seen_set_expires(self):
        r = mk_router(mesh_overrides={"seen_ttl_ms": 2000.0})
        r.join_topic(T, now=0.0)
        r.handle_graft(1, T, now=0.0)
        r.handle_message(1, mk_msg(), now=0.0)
        mid = compute_message_id(mk_msg())
        assert mid in r.seen
        r.heartbeat(now=1000.0)
        assert mid in r.seen
        r.heartbeat(now=3000.0)
        assert mid not in r.seen

    def test_decay_runs_once_per_interval(self):
        r = mk_router()
        r.join_topic(T, now=0.0)
        r.handle_graft(1, T, now=0.0)
        r.scorebook.stats[1].topic(T).first_deliveries = 10.0
        r.heartbeat(now=1000.0)
        assert r.scorebook.stats[1].topic(T).first_deliveries == pytest.approx(9.0)


class TestMessageCache:
    def test_window_lifecycle(self):
        c = MessageCache(length=5, gossip_rounds=3)
        m = mk_msg()
        mid = compute_message_id(m)
        c.put(mid, m)
        assert c.gossip_ids(T) == [mid]
        for _ in range(3):
            c.shift()
        assert c.gossip_ids(T) == []
        assert c.get(mid) is m  # still resident for pulls
        for _ in range(3):
            c.shift()
        assert c.get(mid) is None

    def test_duplicate_put_ignored(self):
        c = MessageCache()
        m = mk_msg()
        c.put(compute_message_id(m), m)
        c.put(compute_message_id(m), m)
        assert len(c) == 1


class TestMeshParams:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            MeshParams(d_low=9).validate()
        with pytest.raises(ValueError):
            MeshParams(d_score=8).validate()
        with pytest.raises(ValueError):
            MeshParams(d_out=6).validate()
        with pytest.raises(ValueError):
            MeshParams(gossip_rounds=9).validate()

    def test_plain_preset(self):
        p = MeshParams.plain()
        p.validate()
        assert not p.scoring_enabled and not p.flood_publish
        assert p.opp_graft_peers == 0 and p.prune_backoff_ms == 0.0

    @pytest.mark.parametrize("d", [4, 8, 16, 32])
    def test_scaled_degrees_valid(self, d):
        p = MeshParams().scaled(d)
        p.validate()
        assert p.d == d and p.d_low == (d * 3) // 4 and p.d_high == (d * 3) // 2
