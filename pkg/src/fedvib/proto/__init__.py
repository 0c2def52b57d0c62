"""Federated protocol: weight containers, wire codec, transports, nodes."""

from .aggregator import AggregationNode, RoundRecord, RoundState
from .node import NodeResult, NodeRoundStats, TrainingNode, TrainingNodeConfig
from .transport import (
    InProcessHub,
    SocketServer,
    connect_socket,
    serve_sockets,
)
from .weights import ModelWeights, WeightDelta, apply_delta, compute_delta, fedavg
from .wire import (
    MAGIC,
    VERSION,
    Ack,
    DeltaSubmission,
    Error,
    GlobalModel,
    Register,
    decode_frame,
    encode_frame,
    read_frame,
    weights_payload_size,
)

__all__ = [
    "AggregationNode",
    "RoundRecord",
    "RoundState",
    "NodeResult",
    "NodeRoundStats",
    "TrainingNode",
    "TrainingNodeConfig",
    "InProcessHub",
    "SocketServer",
    "connect_socket",
    "serve_sockets",
    "ModelWeights",
    "WeightDelta",
    "apply_delta",
    "compute_delta",
    "fedavg",
    "MAGIC",
    "VERSION",
    "Ack",
    "DeltaSubmission",
    "Error",
    "GlobalModel",
    "Register",
    "decode_frame",
    "encode_frame",
    "read_frame",
    "weights_payload_size",
]
