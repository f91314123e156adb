from __future__ import annotations

from activeswitch.controller import PolicyChain
from activeswitch.engine import Engine, FlowSpec, Workload
from activeswitch.middlebox import Transparent
from activeswitch.packet import FlowKey
from activeswitch.scenario import Scenario
from activeswitch.switch import MatchSpec
from activeswitch.topology import DeviceRef, Fabric, MeshTopology


def fabric_scenario(devices, chains=(), roles=None, encoding=None, reannotation="table",
                    hop_budget=None, seed=0, name="test"):
    """devices: (name, kind, switch, port[, behavior[, config]]) tuples."""
    refs = []
    for d in devices:
        name_, kind, sw, port = d[:4]
        behavior = d[4] if len(d) > 4 else (Transparent() if kind == "middlebox" else None)
        config = d[5] if len(d) > 5 else {}
        refs.append(DeviceRef(name_, kind, sw, port, None, behavior, config))
    switches = list(dict.fromkeys(r.switch for r in refs))
    topo = Fabric(switches, refs)
    return Scenario(name, topo, list(chains), roles or {}, {}, encoding, reannotation,
                    hop_budget, seed)


def chain(stages, dest, name="c", **match):
    return PolicyChain(name, MatchSpec(**match), tuple(tuple(s) for s in stages), dest)


def mesh_scenario(switches, links, devices, chains=(), encoding="destination", ingress=("A",),
                  overrides=None, seed=0):
    refs = []
    for d in devices:
        name_, kind, sw, port, ident = d[:5]
        behavior = d[5] if len(d) > 5 else (Transparent() if kind == "middlebox" else None)
        refs.append(DeviceRef(name_, kind, sw, port, ident, behavior, {}))
    topo = MeshTopology(switches, links, refs, overrides, ingress)
    return Scenario("mesh", topo, list(chains), {}, {}, encoding, "table", None, seed)


def key(i=0, dst="10.0.0.9", dport=80):
    return FlowKey.make(f"192.0.2.{1 + i % 250}", 1024 + i, dst, dport)


def one_flow(k, packets=1, pattern="downstream"):
    return Workload((FlowSpec(k, packets, pattern),))


def delivered_ports(trace):
    """payload -> emitted port list, for payloads that were delivered."""
    ports = trace.ports_by_payload()
    return {e.packet.payload_id: ports.get(e.packet.payload_id, [])
            for e in trace.of_kind("Deliver")}


def engine_for(scenario, mode="active", **kw):
    e = Engine(scenario, mode, **kw)
    e.program()
    return e
