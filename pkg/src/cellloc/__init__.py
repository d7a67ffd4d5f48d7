"""Locate mobile nodes in a cellular network from hello-message timing."""

from .estimator import HelloLocalizer
from .geometry import (
    CircleConstraint,
    LinearEquation,
    Point,
    PropagationConstants,
    euclidean_distance,
    trilaterate,
)
from .metrics import LocalizationResult, ScenarioSummary, compare, summarize
from .protocol import Message, MessageType, Scenario, decode_message, encode_message
from .simulator import SimConfig, Topology, run_localization, run_scenario

__version__ = "0.1.0"

__all__ = [
    "CircleConstraint",
    "HelloLocalizer",
    "LinearEquation",
    "LocalizationResult",
    "Message",
    "MessageType",
    "Point",
    "PropagationConstants",
    "Scenario",
    "ScenarioSummary",
    "SimConfig",
    "Topology",
    "compare",
    "decode_message",
    "encode_message",
    "euclidean_distance",
    "run_localization",
    "run_scenario",
    "summarize",
    "trilaterate",
]
