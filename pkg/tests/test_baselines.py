import random
from collections import Counter

import pytest

from gossipsim.baselines import FloodParams, FloodRouter, SqrtNParams, SqrtNRouter
from gossipsim.types import Message

T = "blocks"


def mk_msg(publisher=500, seqno=0):
    return Message(publisher=publisher, seqno=seqno, topic=T, payload_size=2000, publish_time=0.0)


def connect_all(router, peers):
    for p in peers:
        router.on_peer_connected(p, ip=f"10.0.0.{p}", now=0.0)


class TestFloodParams:
    def test_totals_match(self):
        p = FloodParams()
        assert p.max_inbound == 125 and p.max_outbound == 8
        assert p.total == 133


class TestFlood:
    def test_new_message_forwarded_to_all_but_sender(self):
        r = FloodRouter(0, rng=random.Random(1))
        r.join_topic(T, 0.0)
        connect_all(r, range(1, 134))
        eff = r.handle_message(1, mk_msg(), now=0.0)
        targets = [to for to, _ in eff.sends]
        assert len(targets) == 132
        assert 1 not in targets

    def test_duplicate_dropped(self):
        r = FloodRouter(0, rng=random.Random(1))
        r.join_topic(T, 0.0)
        connect_all(r, range(1, 10))
        r.handle_message(1, mk_msg(), now=0.0)
        eff = r.handle_message(2, mk_msg(), now=1.0)
        assert eff.sends == [] and eff.local == []

    def test_publish_reaches_every_connection(self):
        r = FloodRouter(0, rng=random.Random(1))
        r.join_topic(T, 0.0)
        connect_all(r, range(1, 134))
        eff = r.publish(T, mk_msg(publisher=0), now=0.0)
        assert len(eff.sends) == 133

    def test_forward_count_tracks_connections(self):
        r = FloodRouter(0, rng=random.Random(1))
        r.join_topic(T, 0.0)
        connect_all(r, range(1, 21))
        r.on_peer_disconnected(5, now=0.0)
        eff = r.handle_message(1, mk_msg(), now=0.0)
        assert len(eff.sends) == 18  # 19 connections minus the sender


class TestSqrtN:
    def test_degree_from_network_size(self):
        assert SqrtNParams(network_size=1000).degree == 32
        assert SqrtNParams(network_size=100).degree == 10
        assert SqrtNParams(network_size=1000, degree_override=16).degree == 16

    def test_forwards_degree_peers(self):
        r = SqrtNRouter(0, SqrtNParams(network_size=1000), rng=random.Random(1))
        r.join_topic(T, 0.0)
        connect_all(r, range(1, 41))
        eff = r.handle_message(1, mk_msg(), now=0.0)
        targets = [to for to, _ in eff.sends]
        assert len(targets) == 32
        assert 1 not in targets
        assert len(set(targets)) == 32

    def test_capped_by_availability(self):
        r = SqrtNRouter(0, SqrtNParams(network_size=1000), rng=random.Random(1))
        r.join_topic(T, 0.0)
        connect_all(r, range(1, 11))
        eff = r.handle_message(1, mk_msg(), now=0.0)
        assert len(eff.sends) == 9  # 10 connections minus sender

    def test_duplicate_dropped(self):
        r = SqrtNRouter(0, SqrtNParams(network_size=1000), rng=random.Random(1))
        r.join_topic(T, 0.0)
        connect_all(r, range(1, 41))
        r.handle_message(1, mk_msg(), now=0.0)
        assert r.handle_message(2, mk_msg(), now=1.0).sends == []

    def test_target_sampling_is_roughly_uniform(self):
        # seeded frequency check over 10^4 draws: every connection should be
        # picked close to its expected share
        r = SqrtNRouter(0, SqrtNParams(network_size=1000, degree_override=8), rng=random.Random(9))
        r.join_topic(T, 0.0)
        peers = list(range(1, 41))
        connect_all(r, peers)
        counts = Counter()
        draws = 10_000
        for i in range(draws):
            eff = r.handle_message(peers[0], mk_msg(publisher=600 + i, seqno=i), now=float(i))
            for to, _ in eff.sends:
                counts[to] += 1
        expected = draws * 8 / 39  # sender excluded from the 40
        assert set(counts) == set(peers) - {peers[0]}
        for peer, n in counts.items():
            assert abs(n - expected) < 0.15 * expected, f"peer {peer}: {n} vs {expected}"
