"""Trace consumption and run reporting.

The simulation emits events through a :class:`TraceSink`.  A
:class:`Collector` aggregates them online into a :class:`RunReport` (the
in-memory path used by the CLI); a :class:`JsonlWriter` serialises them to
disk as one JSON object per line, and :func:`compute_report` rebuilds the
same report from such a trace, so offline analysis and the live path agree
by construction.

Reported measures: the distribution of global per-message delivery latency
(the slowest eligible honest node's first delivery), message loss, duplicate
deliveries, the honest/Sybil composition of meshes over time, and a
bandwidth cost estimate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable

SECONDS_PER_MONTH = 30 * 24 * 3600
GB = 1e9

#: Hard delivery deadlines (ms) reported against by default.
DEADLINES_MS = (6000.0, 12000.0)


def quantile(samples, q: float) -> float:
    """Nearest-rank quantile: element ceil(q*n) of the ascending sort."""
    if len(samples) == 0:
        raise ValueError("quantile of empty sample set")
    if not (0.0 < q <= 1.0):
        raise ValueError(f"quantile fraction must be in (0, 1], got {q}")
    ordered = sorted(samples)
    n = len(ordered)
    # round() guards against float fuzz like 0.99 * 100 -> 99.00000000000001
    k = math.ceil(round(q * n, 9))
    return ordered[min(max(k, 1), n) - 1]


def bandwidth_estimate(msg_rate_per_s: float, msg_size_bytes: float, connections: float) -> float:
    """Monthly traffic volume in decimal GB for an eager-push fan-out.

    rate x size x connections, integrated over a 30-day month.
    """
    if msg_rate_per_s < 0 or msg_size_bytes < 0 or connections < 0:
        raise ValueError("bandwidth inputs must be nonnegative")
    return msg_rate_per_s * msg_size_bytes * connections * SECONDS_PER_MONTH / GB


# ---------------------------------------------------------------------------
# Trace sinks
# ---------------------------------------------------------------------------


class TraceSink:
    """No-op base; implementations override what they care about."""

    def run_meta(self, meta: dict) -> None: ...

    def publish(self, now: float, node: int, mid: int, msg) -> None: ...

    def deliver(self, now: float, node: int, mid: int, src: int) -> None: ...

    def duplicate(self, now: float, node: int, mid: int, src: int) -> None: ...

    def invalid(self, now: float, node: int, mid: int, src: int) -> None: ...

    def unknown_topic(self, now: float, node: int, src: int) -> None: ...

    def graft(self, now: float, node: int, peer: int, topic: str, accepted: bool) -> None: ...

    def prune(self, now: float, node: int, peer: int, topic: str) -> None: ...

    def ihave(self, now: float, node: int, peer: int, n_ids: int) -> None: ...

    def ihave_sent(self, now: float, node: int, peer: int, n_ids: int) -> None: ...

    def iwant(self, now: float, node: int, peer: int, n_ids: int) -> None: ...

    def mesh_snapshot(self, now: float, node: int, topic: str, members) -> None: ...

    def connect(self, now: float, a: int, b: int) -> None: ...

    def disconnect(self, now: float, a: int, b: int) -> None: ...

    def rpc_dropped(self, now: float, src: int, dst: int) -> None: ...

    def warning(self, now: float, text: str) -> None: ...

    def run_end(self, now: float) -> None: ...


class Tee(TraceSink):
    def __init__(self, *sinks: TraceSink):
        self.sinks = [s for s in sinks if s is not None]

    def __getattribute__(self, name):
        if name.startswith("_") or name == "sinks":
            return object.__getattribute__(self, name)
        sinks = object.__getattribute__(self, "sinks")

        def fanout(*args, **kwargs):
            for s in sinks:
                getattr(s, name)(*args, **kwargs)

        return fanout


class JsonlWriter(TraceSink):
    """One JSON object per line: {time_ms, node, event, ...}."""

    def __init__(self, fh: IO[str]):
        self.fh = fh

    def _w(self, rec: dict) -> None:
        self.fh.write(json.dumps(rec, sort_keys=True))
        self.fh.write("\n")

    def run_meta(self, meta):
        self._w({"time_ms": 0.0, "node": -1, "event": "run_meta", "meta": meta})

    def publish(self, now, node, mid, msg):
        self._w(
            {
                "time_ms": now,
                "node": node,
                "event": "publish",
                "mid": f"{mid:x}",
                "topic": msg.topic,
                "seqno": msg.seqno,
                "size": msg.payload_size,
            }
        )

    def deliver(self, now, node, mid, src):
        self._w({"time_ms": now, "node": node, "event": "deliver", "mid": f"{mid:x}", "src": src})

    def duplicate(self, now, node, mid, src):
        self._w({"time_ms": now, "node": node, "event": "duplicate", "mid": f"{mid:x}", "src": src})

    def invalid(self, now, node, mid, src):
        self._w({"time_ms": now, "node": node, "event": "invalid", "mid": f"{mid:x}", "src": src})

    def unknown_topic(self, now, node, src):
        self._w({"time_ms": now, "node": node, "event": "unknown_topic", "src": src})

    def graft(self, now, node, peer, topic, accepted):
        self._w(
            {
                "time_ms": now,
                "node": node,
                "event": "graft",
                "peer": peer,
                "topic": topic,
                "accepted": accepted,
            }
        )

    def prune(self, now, node, peer, topic):
        self._w({"time_ms": now, "node": node, "event": "prune", "peer": peer, "topic": topic})

    def ihave(self, now, node, peer, n_ids):
        self._w({"time_ms": now, "node": node, "event": "ihave", "peer": peer, "n": n_ids})

    def ihave_sent(self, now, node, peer, n_ids):
        self._w({"time_ms": now, "node": node, "event": "ihave_sent", "peer": peer, "n": n_ids})

    def iwant(self, now, node, peer, n_ids):
        self._w({"time_ms": now, "node": node, "event": "iwant", "peer": peer, "n": n_ids})

    def mesh_snapshot(self, now, node, topic, members):
        self._w(
            {
                "time_ms": now,
                "node": node,
                "event": "mesh_snapshot",
                "topic": topic,
                "members": [[p, d, s] for p, d, s in members],
            }
        )

    def connect(self, now, a, b):
        self._w({"time_ms": now, "node": a, "event": "connect", "peer": b})

    def disconnect(self, now, a, b):
        self._w({"time_ms": now, "node": a, "event": "disconnect", "peer": b})

    def rpc_dropped(self, now, src, dst):
        self._w({"time_ms": now, "node": src, "event": "rpc_dropped", "dst": dst})

    def warning(self, now, text):
        self._w({"time_ms": now, "node": -1, "event": "warning", "text": text})

    def run_end(self, now):
        self._w({"time_ms": now, "node": -1, "event": "run_end"})


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


class _MsgRecord:
    __slots__ = ("publish_ms", "publisher", "eligible", "delivered", "max_latency")

    def __init__(self, publish_ms: float, publisher: int, eligible: int):
        self.publish_ms = publish_ms
        self.publisher = publisher
        self.eligible = eligible
        self.delivered: set[int] = set()
        self.max_latency = 0.0


class Collector(TraceSink):
    """Online aggregation of a trace into a RunReport."""

    def __init__(self):
        self.meta: dict = {}
        self.honest: set[int] = set()
        self.sybils: set[int] = set()
        self.join_ms: dict[int, float] = {}
        self.records: dict[int, _MsgRecord] = {}
        self.duplicates = 0
        self.invalids = 0
        self.counters = {
            "grafts": 0,
            "grafts_rejected": 0,
            "prunes": 0,
            "ihave": 0,
            "iwant": 0,
            "connects": 0,
            "disconnects": 0,
            "rpc_dropped": 0,
            "unknown_topic": 0,
            "warnings": 0,
        }
        self.mesh_rows: list[tuple[float, int, int, int]] = []
        self._mesh_buckets: dict[int, list[float]] = {}
        self._degree: dict[int, int] = {}
        self.warnings: list[str] = []
        self.ended_at: float | None = None

    # -- sink implementation ---------------------------------------------------

    def run_meta(self, meta):
        self.meta = dict(meta)
        self.honest = set(meta["honest"])
        self.sybils = set(meta.get("sybils", ()))
        self.join_ms = {int(k): float(v) for k, v in meta["join_ms"].items()}

    def publish(self, now, node, mid, msg):
        eligible = sum(1 for h in self.honest if self.join_ms.get(h, 0.0) <= now)
        self.records[mid] = _MsgRecord(now, node, eligible)

    def deliver(self, now, node, mid, src):
        rec = self.records.get(mid)
        if rec is None or node not in self.honest:
            return
        if self.join_ms.get(node, 0.0) > rec.publish_ms:
            return
        if node in rec.delivered:
            return
        rec.delivered.add(node)
        lat = now - rec.publish_ms
        if lat > rec.max_latency:
            rec.max_latency = lat

    def duplicate(self, now, node, mid, src):
        self.duplicates += 1

    def invalid(self, now, node, mid, src):
        self.invalids += 1

    def unknown_topic(self, now, node, src):
        self.counters["unknown_topic"] += 1

    def graft(self, now, node, peer, topic, accepted):
        self.counters["grafts" if accepted else "grafts_rejected"] += 1

    def prune(self, now, node, peer, topic):
        self.counters["prunes"] += 1

    def ihave(self, now, node, peer, n_ids):
        self.counters["ihave"] += 1

    def iwant(self, now, node, peer, n_ids):
        self.counters["iwant"] += 1

    def mesh_snapshot(self, now, node, topic, members):
        h = s = 0
        for peer, _direction, _score in members:
            if peer in self.sybils:
                s += 1
            else:
                h += 1
        self.mesh_rows.append((now, node, h, s))
        bucket = int(now // 1000)
        acc = self._mesh_buckets.get(bucket)
        if acc is None:
            acc = [0.0, 0.0, 0.0, 0.0, 0.0]
            self._mesh_buckets[bucket] = acc
        acc[0] += h
        acc[1] += s
        total = h + s
        if total:
            acc[2] += h / total
            acc[3] += 1
        acc[4] += 1

    def connect(self, now, a, b):
        self.counters["connects"] += 1
        for n in (a, b):
            if n in self.honest:
                self._degree[n] = self._degree.get(n, 0) + 1

    def disconnect(self, now, a, b):
        self.counters["disconnects"] += 1
        for n in (a, b):
            if n in self.honest:
                self._degree[n] = self._degree.get(n, 0) - 1

    def rpc_dropped(self, now, src, dst):
        self.counters["rpc_dropped"] += 1

    def warning(self, now, text):
        self.counters["warnings"] += 1
        self.warnings.append(text)

    def run_end(self, now):
        self.ended_at = now

    # -- reduction ----------------------------------------------------------------

    def finalize(self, version: str) -> "RunReport":
        if self.ended_at is None:
            raise ValueError("truncated trace: no run_end record")
        messages = []
        latencies = []
        lost = 0
        pub_total: dict[int, int] = {}
        pub_lost: dict[int, int] = {}
        deadline_ok = {d: 0 for d in DEADLINES_MS}
        for mid in sorted(self.records):
            rec = self.records[mid]
            complete = len(rec.delivered) >= rec.eligible and rec.eligible > 0
            lat = rec.max_latency if complete else None
            pub_total[rec.publisher] = pub_total.get(rec.publisher, 0) + 1
            if complete:
                latencies.append(rec.max_latency)
                for d in DEADLINES_MS:
                    if rec.max_latency <= d:
                        deadline_ok[d] += 1
            else:
                lost += 1
                pub_lost[rec.publisher] = pub_lost.get(rec.publisher, 0) + 1
            messages.append(
                {
                    "mid": f"{mid:x}",
                    "publish_ms": rec.publish_ms,
                    "publisher": rec.publisher,
                    "delivered": len(rec.delivered),
                    "eligible": rec.eligible,
                    "latency_ms": lat,
                }
            )
        total = len(self.records)
        timeline = []
        for bucket in sorted(self._mesh_buckets):
            sh, ss, sfrac, n_nonempty, n_rows = self._mesh_buckets[bucket]
            timeline.append(
                {
                    "time_ms": bucket * 1000.0,
                    "honest_members_mean": sh / n_rows if n_rows else 0.0,
                    "sybil_members_mean": ss / n_rows if n_rows else 0.0,
                    "honest_fraction_mean": sfrac / n_nonempty if n_nonempty else None,
                }
            )
        mean_degree = (
            sum(self._degree.get(h, 0) for h in self.honest) / len(self.honest)
            if self.honest
            else 0.0
        )
        msg_rate = float(self.meta.get("message_rate", 0.0))
        msg_size = float(self.meta.get("message_size", 0.0))
        return RunReport(
            version=version,
            config_label=str(self.meta.get("label", "")),
            seed=int(self.meta.get("seed", 0)),
            duration_ms=float(self.meta.get("duration_ms", self.ended_at)),
            protocol=str(self.meta.get("protocol", "")),
            messages=messages,
            latency_ms=sorted(latencies),
            p50=quantile(latencies, 0.50) if latencies else None,
            p99=quantile(latencies, 0.99) if latencies else None,
            max_latency=max(latencies) if latencies else None,
            mean_latency=sum(latencies) / len(latencies) if latencies else None,
            loss_fraction=(lost / total) if total else 0.0,
            loss_by_publisher={
                str(p): pub_lost.get(p, 0) / pub_total[p] for p in sorted(pub_total)
            },
            duplicates=self.duplicates,
            invalids=self.invalids,
            deadline_pass={
                str(int(d)): (deadline_ok[d] / total if total else 1.0) for d in DEADLINES_MS
            },
            mesh_timeline=timeline,
            counters=dict(self.counters),
            mean_honest_degree=mean_degree,
            bandwidth={
                "msg_rate_per_s": msg_rate,
                "msg_size_bytes": msg_size,
                "connections": mean_degree,
                "gb_per_month": bandwidth_estimate(msg_rate, msg_size, mean_degree),
            },
        )


@dataclass(slots=True)
class RunReport:
    """Everything a run reports; serialisable to deterministic JSON."""

    version: str
    config_label: str
    seed: int
    duration_ms: float
    protocol: str
    messages: list
    latency_ms: list
    p50: float | None
    p99: float | None
    max_latency: float | None
    mean_latency: float | None
    loss_fraction: float
    loss_by_publisher: dict
    duplicates: int
    invalids: int
    deadline_pass: dict
    mesh_timeline: list
    counters: dict
    mean_honest_degree: float
    bandwidth: dict

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "config_label": self.config_label,
            "seed": self.seed,
            "duration_ms": self.duration_ms,
            "protocol": self.protocol,
            "p50_ms": self.p50,
            "p99_ms": self.p99,
            "max_latency_ms": self.max_latency,
            "mean_latency_ms": self.mean_latency,
            "loss_fraction": self.loss_fraction,
            "loss_by_publisher": self.loss_by_publisher,
            "duplicates": self.duplicates,
            "invalids": self.invalids,
            "deadline_pass": self.deadline_pass,
            "counters": self.counters,
            "mean_honest_degree": self.mean_honest_degree,
            "bandwidth": self.bandwidth,
            "mesh_timeline": self.mesh_timeline,
            "messages": self.messages,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    # -- windowed views (used by attack-recovery analysis) ---------------------

    def latencies_between(self, t0: float, t1: float) -> list[float]:
        return [
            m["latency_ms"]
            for m in self.messages
            if t0 <= m["publish_ms"] < t1 and m["latency_ms"] is not None
        ]

    def loss_between(self, t0: float, t1: float) -> float:
        window = [m for m in self.messages if t0 <= m["publish_ms"] < t1]
        if not window:
            return 0.0
        return sum(1 for m in window if m["latency_ms"] is None) / len(window)


def compute_report(trace: Iterable[dict] | str, version: str = "offline") -> RunReport:
    """Rebuild a RunReport from a trace (a jsonl path or dict records)."""
    if isinstance(trace, str):
        with open(trace, "r", encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
    else:
        records = list(trace)
    if not records or records[0].get("event") != "run_meta":
        raise ValueError("truncated trace: missing run_meta header")
    c = Collector()
    for rec in records:
        event = rec["event"]
        t = rec.get("time_ms", 0.0)
        node = rec.get("node", -1)
        if event == "run_meta":
            c.run_meta(rec["meta"])
        elif event == "publish":
            c.publish(t, node, int(rec["mid"], 16), _MsgStub(rec))
        elif event == "deliver":
            c.deliver(t, node, int(rec["mid"], 16), rec["src"])
        elif event == "duplicate":
            c.duplicate(t, node, int(rec["mid"], 16), rec["src"])
        elif event == "invalid":
            c.invalid(t, node, int(rec["mid"], 16), rec["src"])
        elif event == "unknown_topic":
            c.unknown_topic(t, node, rec["src"])
        elif event == "graft":
            c.graft(t, node, rec["peer"], rec["topic"], rec["accepted"])
        elif event == "prune":
            c.prune(t, node, rec["peer"], rec["topic"])
        elif event == "ihave":
            c.ihave(t, node, rec["peer"], rec["n"])
        elif event == "ihave_sent":
            c.ihave_sent(t, node, rec["peer"], rec["n"])
        elif event == "iwant":
            c.iwant(t, node, rec["peer"], rec["n"])
        elif event == "mesh_snapshot":
            c.mesh_snapshot(t, node, rec["topic"], [tuple(m) for m in rec["members"]])
        elif event == "connect":
            c.connect(t, node, rec["peer"])
        elif event == "disconnect":
            c.disconnect(t, node, rec["peer"])
        elif event == "rpc_dropped":
            c.rpc_dropped(t, node, rec["dst"])
        elif event == "warning":
            c.warning(t, rec["text"])
        elif event == "run_end":
            c.run_end(t)
    return c.finalize(version)


class _MsgStub:
    __slots__ = ("topic", "seqno", "payload_size")

    def __init__(self, rec: dict):
        self.topic = rec.get("topic", "")
        self.seqno = rec.get("seqno", 0)
        self.payload_size = rec.get("size", 0)


# ---------------------------------------------------------------------------
# Artifact writers
# ---------------------------------------------------------------------------


def write_cdf_csv(report: RunReport, fh: IO[str]) -> None:
    fh.write("latency_ms,cumulative_fraction\n")
    n = len(report.latency_ms)
    for i, lat in enumerate(report.latency_ms, start=1):
        fh.write(f"{lat},{i / n}\n")


def write_mesh_timeline_csv(collector: Collector, fh: IO[str]) -> None:
    fh.write("heartbeat_ms,node,honest_in_mesh,sybil_in_mesh\n")
    for now, node, h, s in collector.mesh_rows:
        fh.write(f"{now},{node},{h},{s}\n")


def render_cdf_svg(report: RunReport, title: str = "delivery latency CDF") -> str:
    """Line-path CDF plot as a standalone SVG string."""
    width, height, pad = 640, 400, 50
    lats = report.latency_ms
    if not lats:
        body = (
            f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle" '
            f'font-family="sans-serif">no delivered messages</text>'
        )
        return _svg_shell(width, height, title, body)
    xmax = max(lats[-1], 1.0)
    n = len(lats)

    def sx(v: float) -> float:
        return pad + (width - 2 * pad) * (v / xmax)

    def sy(frac: float) -> float:
        return height - pad - (height - 2 * pad) * frac

    pts = [f"{sx(0):.2f},{sy(0):.2f}"]
    for i, lat in enumerate(lats, start=1):
        pts.append(f"{sx(lat):.2f},{sy((i - 1) / n):.2f}")
        pts.append(f"{sx(lat):.2f},{sy(i / n):.2f}")
    path = " ".join(pts)
    ticks = []
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(frac)
        ticks.append(
            f'<line x1="{pad}" y1="{y:.1f}" x2="{width - pad}" y2="{y:.1f}" '
            f'stroke="#ddd" stroke-width="1"/>'
            f'<text x="{pad - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="11" '
            f'font-family="sans-serif">{frac:.2f}</text>'
        )
    for k in range(5):
        v = xmax * k / 4
        x = sx(v)
        ticks.append(
            f'<text x="{x:.1f}" y="{height - pad + 16}" text-anchor="middle" font-size="11" '
            f'font-family="sans-serif">{v:.0f}</text>'
        )
    body = (
        "".join(ticks)
        + f'<polyline fill="none" stroke="#0a6" stroke-width="2" points="{path}"/>'
        + f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif">latency (ms)</text>'
    )
    return _svg_shell(width, height, title, body)


def _svg_shell(width: int, height: int, title: str, body: str) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
        f'<rect width="{width}" height="{height}" fill="white"/>'
        f'<text x="{width / 2}" y="24" text-anchor="middle" font-size="14" '
        f'font-family="sans-serif" font-weight="bold">{title}</text>'
        f"{body}</svg>"
    )
