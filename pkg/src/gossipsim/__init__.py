"""gossipsim: deterministic simulation of attack-resilient gossip pubsub.

The package provides a scoring gossipsub router, flooding and sqrt(N)
baseline routers, pluggable Sybil behaviours, a seeded discrete-event
network, and a metrics pipeline that turns traces into run reports.
"""

from .adversary import AdversaryBehavior, AdversaryNode
from .baselines import FloodParams, FloodRouter, SqrtNParams, SqrtNRouter
from .metrics import (
    Collector,
    JsonlWriter,
    RunReport,
    bandwidth_estimate,
    compute_report,
    quantile,
)
from .router import Effects, MeshParams, MessageCache, Router
from .scoring import PeerStats, ScoreBook, ScoreParams, expected_deficit_threshold
from .simnet import LatencyModel, ScenarioConfig, Simulation, build_topology, run, sample_latency
from .types import (
    ControlMessage,
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
    validate_message,
)

__version__ = "0.1.0"

__all__ = [
    "AdversaryBehavior",
    "AdversaryNode",
    "Collector",
    "ControlMessage",
    "Effects",
    "FloodParams",
    "FloodRouter",
    "Graft",
    "IHave",
    "IWant",
    "JsonlWriter",
    "LatencyModel",
    "MeshParams",
    "Message",
    "MessageCache",
    "MessageId",
    "PeerId",
    "PeerStats",
    "Prune",
    "Router",
    "Rpc",
    "RunReport",
    "ScenarioConfig",
    "ScoreBook",
    "ScoreParams",
    "Simulation",
    "SqrtNParams",
    "SqrtNRouter",
    "TopicId",
    "ValidatorRegistry",
    "bandwidth_estimate",
    "build_topology",
    "compute_message_id",
    "compute_report",
    "expected_deficit_threshold",
    "quantile",
    "run",
    "sample_latency",
    "validate_message",
]
