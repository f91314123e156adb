"""Steering flows through middlebox chains with paths written into Ethernet addresses."""
from .annotation import (AnnotationPair, MacAddress, decode_path, encode_extended_path,
                         encode_nibble_path, encode_octet_path, shift_nibble, shift_octet,
                         step_extended)
from .controller import ActiveController, BaselineController, PolicyChain, build_port_path
from .engine import Engine, FlowSpec, Trace, TraceEvent, Workload, hop_budget, make_workload, run
from .metrics import check_affinity, check_symmetricality, emit_comparison, rule_census
from .packet import FlowKey, SimPacket, reverse_flow_key
from .scenario import Scenario, SchemaError, load_scenario
from .switch import FlowRule, MatchSpec, SwitchState

__version__ = "0.1.0"

__all__ = [
    "ActiveController", "AnnotationPair", "BaselineController", "Engine", "FlowKey", "FlowRule",
    "FlowSpec", "MacAddress", "MatchSpec", "PolicyChain", "Scenario", "SchemaError", "SimPacket",
    "SwitchState", "Trace", "TraceEvent", "Workload", "build_port_path", "check_affinity",
    "check_symmetricality", "decode_path", "emit_comparison", "encode_extended_path",
    "encode_nibble_path", "encode_octet_path", "hop_budget", "load_scenario", "make_workload",
    "reverse_flow_key", "rule_census", "run", "shift_nibble", "shift_octet", "step_extended",
]
