"""Control planes.

:class:`ActiveController` steers flows by writing a hop path into the
Ethernet header at the ingress switch; every other switch runs a fixed,
flow-independent program.  :class:`BaselineController` is the conventional
alternative: exact-match rules for every flow on every switch it crosses.

Both talk to the network through a small interface (``net.install``) so
that rule installations show up in the engine's trace.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

from .annotation import (HOST, MAX_EXTENDED_HOPS, MAX_NIBBLE_HOPS, MAX_OCTET_HOPS,
                         RESERVED_OCTETS, ZERO_MAC, AnnotationPair, MacAddress, PathTooLong,
                         encode_extended_path, encode_nibble_path, encode_octet_path)
from .middlebox import Originating
from .packet import FlowKey, SimPacket
from .switch import (Drop, FlowRule, MatchSpec, OutputFixed, SetField, ToControllerAction,
                     compile_edge_shift_program, nibble_shift_actions, octet_shift_actions)
from .topology import DeviceRef, Fabric, MeshTopology, TopologyError

EDGE_PRIO = 10
UNANNOTATED_PRIO = 50
REANNOTATE_PRIO = 80
FLOW_PRIO = 100

# gateway device ports: toward the network, toward the upstream router
GATEWAY_NET_PORT = 1
GATEWAY_EXT_PORT = 2
DEFAULT_UPSTREAM_MAC = MacAddress("0a:00:00:00:00:01")

FABRIC_ENCODINGS = ("octet", "extended")
MESH_ENCODINGS = ("nibble", "destination")
CAPACITY = {"octet": MAX_OCTET_HOPS, "extended": MAX_EXTENDED_HOPS,
            "nibble": MAX_NIBBLE_HOPS, "destination": MAX_OCTET_HOPS}


class ControllerError(ValueError):
    pass


def key_matches(match: MatchSpec, key: FlowKey) -> bool:
    return ((match.src_ip is None or match.src_ip == key.src_ip)
            and (match.dst_ip is None or match.dst_ip == key.dst_ip)
            and (match.src_port is None or match.src_port == key.src_port)
            and (match.dst_port is None or match.dst_port == key.dst_port)
            and (match.protocol is None or match.protocol == key.protocol))


@dataclass(frozen=True)
class PolicyChain:
    name: str
    match: MatchSpec
    stages: tuple
    destination: tuple

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(tuple(s) for s in self.stages))
        dest = self.destination
        object.__setattr__(self, "destination", (dest,) if isinstance(dest, str) else tuple(dest))
        if not self.destination:
            raise ControllerError(f"chain {self.name}: no destination")

    def matches(self, key: FlowKey) -> bool:
        return key_matches(self.match, key)

    def check(self, topology) -> None:
        for group in self.stages:
            if not group:
                raise ControllerError(f"chain {self.name}: empty stage")
            for ref in group:
                if ref not in topology.devices or topology.devices[ref].kind != "middlebox":
                    raise ControllerError(f"chain {self.name}: unknown middlebox {ref!r}")
        for ref in self.destination:
            if ref not in topology.devices or topology.devices[ref].kind != "endpoint":
                raise ControllerError(f"chain {self.name}: unknown endpoint {ref!r}")


class Choice(NamedTuple):
    instances: tuple
    destination: str


class AffinityTable:
    """Per-flow instance choices; an entry never changes once written."""

    def __init__(self):
        self._table: dict[FlowKey, Choice] = {}

    def __contains__(self, key) -> bool:
        return key in self._table

    def __len__(self) -> int:
        return len(self._table)

    def get(self, key: FlowKey) -> Optional[Choice]:
        return self._table.get(key)

    def set(self, key: FlowKey, choice: Choice) -> None:
        old = self._table.get(key)
        if old is not None and old != choice:
            raise ControllerError(f"affinity for {key} already fixed to {old}")
        self._table[key] = choice

    def items(self):
        return self._table.items()


@dataclass
class FlowPlan:
    key: FlowKey
    chain: PolicyChain
    instances: tuple
    destination: str
    source: str
    forward: list
    reverse: list
    annotation: Optional[AnnotationPair] = None
    reverse_annotation: Optional[AnnotationPair] = None


class Reprocess(NamedTuple):
    """Controller verdict: run ``packet`` through the same switch again."""

    packet: SimPacket


def build_port_path(topology: Fabric, instances: Sequence[str], destination: str) -> list[int]:
    return [topology.device(ref).port for ref in instances] + [topology.device(destination).port]


def mesh_port_path(topology: MeshTopology, start: str, targets: Sequence[str]) -> list[int]:
    """Egress ports visiting ``targets`` in order, walking next-hop tables."""
    ports = []
    cur = start
    for ref in targets:
        dev = topology.device(ref)
        for _ in range(len(topology.switches) + 1):
            if dev.switch == cur:
                break
            port = topology.next_hop(cur, ref)
            ports.append(port)
            peer = topology.links.get((cur, port))
            if peer is None:
                raise TopologyError(f"next hop of {cur} toward {ref} is not a link")
            cur = peer[0]
        else:
            raise TopologyError(f"next-hop tables loop on the way to {ref}")
        ports.append(dev.port)
    return ports


class Controller:
    mode = ""

    def __init__(self, topology, chains: Iterable[PolicyChain], net, seed: int = 0,
                 upstream_macs: Optional[dict] = None):
        self.topology = topology
        self.chains = list(chains)
        for chain in self.chains:
            chain.check(topology)
        self.net = net
        self.seed = seed
        self.rng = random.Random(seed)
        self.affinity = AffinityTable()
        self.plans: dict[FlowKey, FlowPlan] = {}
        self.upstream_macs = dict(upstream_macs or {})

    def install(self, switch: str, priority: int, match: MatchSpec, actions, cause=None, note="") -> int:
        return self.net.install(switch, FlowRule(priority, match, tuple(actions), note=note), cause)

    def match_chain(self, key: FlowKey) -> Optional[PolicyChain]:
        for chain in self.chains:
            if chain.matches(key):
                return chain
        return None

    def select(self, key: FlowKey, chain: PolicyChain) -> Choice:
        choice = self.affinity.get(key)
        if choice is not None:
            return choice
        picks = []
        for group in chain.stages:
            if not group:
                raise ControllerError(f"chain {chain.name}: empty stage")
            picks.append(group[0] if len(group) == 1 else self.rng.choice(group))
        dests = chain.destination
        dest = dests[0] if len(dests) == 1 else self.rng.choice(dests)
        choice = Choice(tuple(picks), dest)
        self.affinity.set(key, choice)
        return choice

    def select_instances(self, key: FlowKey, chain: PolicyChain) -> tuple:
        return self.select(key, chain).instances

    def origin_switches(self) -> list[str]:
        out = []
        for dev in self.topology.devices.values():
            if dev.kind == "gateway" or isinstance(dev.behavior, Originating):
                if dev.switch not in out:
                    out.append(dev.switch)
        return out

    def program(self) -> None:
        for gw in self.topology.gateways():
            upstream = self.upstream_macs.get(gw.name, DEFAULT_UPSTREAM_MAC)
            self.install(gw.name, FLOW_PRIO, MatchSpec(in_port=GATEWAY_NET_PORT),
                         (SetField("dst_mac", upstream), OutputFixed(GATEWAY_EXT_PORT)),
                         note="upstream")
        for sw in self.origin_switches():
            self.install_unannotated_rule(sw)

    def install_unannotated_rule(self, switch: str) -> int:
        return self.install(switch, UNANNOTATED_PRIO, MatchSpec(dst_mac=0),
                            (ToControllerAction(),), note="unannotated")

    def _source_device(self, switch: str, in_port) -> Optional[DeviceRef]:
        if isinstance(self.topology, Fabric):
            dev = self.topology.ports.get(in_port)
        else:
            dev = self.topology.attached.get((switch, in_port))
        if dev is None or dev.switch != switch:
            return None
        if dev.kind == "gateway" or isinstance(dev.behavior, Originating):
            return dev
        return None

    def packet_in(self, switch: str, in_port, p: SimPacket):
        raise NotImplementedError

    def _new_flow(self, switch: str, in_port, p: SimPacket):
        source = self._source_device(switch, in_port)
        if source is None:
            return Drop("unexpected", p)
        chain = self.match_chain(p.flow_key)
        if chain is None:
            return Drop("policy", p)
        choice = self.select(p.flow_key, chain)
        try:
            self.setup_flow(p.flow_key, chain, choice, source, cause=p)
        except (PathTooLong, TopologyError):
            return Drop("path-too-long", p)
        return Reprocess(p)

    def setup_flow(self, key, chain, choice, source, cause=None) -> FlowPlan:
        raise NotImplementedError


class ActiveController(Controller):
    mode = "active"

    def __init__(self, topology, chains, net, encoding: Optional[str] = None,
                 reannotation: str = "table", seed: int = 0, upstream_macs=None):
        super().__init__(topology, chains, net, seed, upstream_macs)
        is_mesh = isinstance(topology, MeshTopology)
        encoding = encoding or ("nibble" if is_mesh else "octet")
        allowed = MESH_ENCODINGS if is_mesh else FABRIC_ENCODINGS
        if encoding not in allowed:
            raise ControllerError(f"encoding {encoding!r} does not fit a {topology.kind} "
                                  f"(choose from {', '.join(allowed)})")
        if reannotation not in ("table", "controller"):
            raise ControllerError(f"unknown re-annotation mode {reannotation!r}")
        self.encoding = encoding
        self.reannotation = reannotation
        self.capacity = CAPACITY[encoding]
        self.pending: dict[tuple, AnnotationPair] = {}
        self._indices: dict[str, dict[int, AnnotationPair]] = {}
        self._index_of: dict[str, dict[AnnotationPair, int]] = {}
        self._unannotated: set[str] = set()

    # -- programming time ------------------------------------------------

    def program(self) -> None:
        super().program()
        if self.encoding in FABRIC_ENCODINGS:
            hosts = sorted({d.switch for d in self.topology.devices.values() if d.kind == "middlebox"},
                           key=self.topology.switches.index)
            for sw in hosts:
                self.install_edge_program(sw)
        elif self.encoding == "nibble":
            for sw in self.topology.switches:
                self.install_edge_program(sw)
        else:
            self.program_network_destination_encoding()

    def install_unannotated_rule(self, switch: str) -> int:
        self._unannotated.add(switch)
        return super().install_unannotated_rule(switch)

    def install_edge_program(self, switch: str) -> list[int]:
        mode = "nibble" if self.encoding == "nibble" else self.encoding
        program = compile_edge_shift_program(mode)
        ids = []
        for i, (match, actions) in enumerate(program):
            ids.append(self.install(switch, EDGE_PRIO + len(program) - 1 - i, match, actions,
                                    note="edge"))
        return ids

    def program_network_destination_encoding(self) -> int:
        t = self.topology
        count = 0
        for sw in t.switches:
            for dev in sorted(t.devices.values(), key=lambda d: d.ident):
                match = MatchSpec(dst_mac=dev.ident, dst_mask=0xFF)
                if dev.switch == sw:
                    actions = octet_shift_actions(out_port=dev.port)
                else:
                    actions = (OutputFixed(t.next_hop(sw, dev.name)),)
                self.install(sw, EDGE_PRIO, match, actions, note=f"id {dev.ident}")
                count += 1
        return count

    # -- path encoding ---------------------------------------------------

    def _encode(self, hops: Sequence[int], terminal: int = HOST) -> AnnotationPair:
        if self.encoding == "extended":
            return encode_extended_path(hops, terminal)
        if self.encoding == "nibble":
            if terminal != HOST:
                raise PathTooLong("nibble annotations cannot be re-annotated")
            return AnnotationPair(encode_nibble_path(hops), ZERO_MAC)
        return AnnotationPair(encode_octet_path(hops, terminal), ZERO_MAC)

    def _hops(self, start_switch: str, targets: Sequence[str]) -> list[int]:
        t = self.topology
        if self.encoding == "nibble":
            return mesh_port_path(t, start_switch, targets)
        if self.encoding == "destination":
            return [t.device(ref).ident for ref in targets]
        return [t.device(ref).port for ref in targets]

    def entry_actions(self, switch: str, ann: AnnotationPair) -> tuple:
        """Write ``ann`` and apply this switch's edge logic to it in one go."""
        acts = [SetField("dst_mac", ann.dst)]
        if self.encoding == "extended":
            acts.append(SetField("src_mac", ann.src))
        if self.encoding == "nibble":
            acts += nibble_shift_actions()
        elif self.encoding == "destination":
            dev = self.topology.device(ann.dst & 0xFF)
            if dev.switch == switch:
                acts += octet_shift_actions(out_port=dev.port)
            else:
                acts.append(OutputFixed(self.topology.next_hop(switch, dev.name)))
        else:
            acts += octet_shift_actions()
        return tuple(acts)

    def encode_path(self, key: FlowKey, hops: Sequence[int], cause=None) -> AnnotationPair:
        """Annotation for ``hops``, splitting it with re-annotation if needed."""
        if len(hops) <= self.capacity:
            return self._encode(hops)
        if self.encoding in MESH_ENCODINGS:
            raise PathTooLong(f"{len(hops)} hops exceed the {self.capacity}-hop {self.encoding} layout")
        head, rest = list(hops[:self.capacity]), list(hops[self.capacity:])
        point = self.topology.device_at(head[-1])
        if point.kind != "middlebox":
            raise PathTooLong(f"re-annotation point {point.name} does not return traffic")
        cont = self.encode_path(key, rest, cause)
        if self.reannotation == "table":
            terminal = self._index_for(point.switch, cont, cause)
        else:
            self.pending[(key, point.switch, point.port)] = cont
            if point.switch not in self._unannotated:
                self.install_unannotated_rule(point.switch)
            terminal = 0
        return self._encode(head, terminal)

    def _index_for(self, switch: str, cont: AnnotationPair, cause=None) -> int:
        known = self._index_of.setdefault(switch, {})
        if cont in known:
            return known[cont]
        used = self._indices.setdefault(switch, {})
        for i in range(1, 0x100):
            if i not in RESERVED_OCTETS and i not in used:
                self._install_index(switch, i, cont, cause)
                return i
        raise PathTooLong(f"switch {switch}: re-annotation table full")

    def _install_index(self, switch: str, index: int, cont: AnnotationPair, cause=None) -> int:
        if not 1 <= index <= 253 or index in RESERVED_OCTETS:
            raise ControllerError(f"re-annotation index {index} not in 1..253")
        used = self._indices.setdefault(switch, {})
        if index in used:
            raise ControllerError(f"switch {switch}: re-annotation index {index} already in use")
        used[index] = cont
        self._index_of.setdefault(switch, {})[cont] = index
        return self.install(switch, REANNOTATE_PRIO, MatchSpec(dst_mac=index),
                            self.entry_actions(switch, cont), cause, note=f"index {index}")

    def install_reannotation_rule(self, switch: str, index: int, continuation: Sequence[int],
                                  next_index: Optional[int] = None) -> int:
        """Rule turning a residual ``index`` into ``continuation`` at ``switch``.

        ``next_index`` ends the continuation in another table index instead
        of the host sentinel.
        """
        cont = self._encode(continuation, HOST if next_index is None else next_index)
        return self._install_index(switch, index, cont)

    # -- flow setup ------------------------------------------------------

    def setup_flow(self, key, chain, choice, source, cause=None) -> FlowPlan:
        t = self.topology
        dest = t.device(choice.destination)
        fwd = self._hops(source.switch, list(choice.instances) + [dest.name])
        rev = self._hops(dest.switch, list(reversed(choice.instances)) + [source.name])
        plan = FlowPlan(key, chain, choice.instances, dest.name, source.name, fwd, rev)
        plan.annotation = self.encode_path(key, fwd, cause)
        plan.reverse_annotation = self.encode_path(key.reverse(), rev, cause)
        self.install(source.switch, FLOW_PRIO, MatchSpec.for_flow(key, in_port=source.port),
                     self.entry_actions(source.switch, plan.annotation), cause, note="ingress")
        self.install(dest.switch, FLOW_PRIO, MatchSpec.for_flow(key.reverse(), in_port=dest.port),
                     self.entry_actions(dest.switch, plan.reverse_annotation), cause, note="reverse")
        self.plans[key] = plan
        return plan

    def install_flow_path(self, key: FlowKey, source: str, hops: Sequence[int],
                          terminal: Optional[int] = None, cause=None) -> AnnotationPair:
        """Steer ``key`` entering at ``source`` along explicit ``hops``.

        A ``terminal`` other than the host sentinel hands the packet to a
        re-annotation rule once the hops run out.
        """
        src = self.topology.device(source)
        if terminal is None:
            ann = self.encode_path(key, hops, cause)
        else:
            ann = self._encode(hops, terminal)
        self.install(src.switch, FLOW_PRIO, MatchSpec.for_flow(key, in_port=src.port),
                     self.entry_actions(src.switch, ann), cause, note="ingress")
        return ann

    def packet_in(self, switch: str, in_port, p: SimPacket):
        if p.dst_mac != 0:
            return Drop("unexpected", p)
        cont = self.pending.get((p.flow_key, switch, in_port))
        if cont is not None:
            return Reprocess(p.evolve(dst_mac=cont.dst, src_mac=cont.src if self.encoding == "extended"
                                      else p.src_mac))
        return self._new_flow(switch, in_port, p)

    on_packet_in_active = packet_in


class BaselineController(Controller):
    """Exact-match forwarding along the whole path, set up per flow."""

    mode = "baseline"

    def __init__(self, topology, chains, net, seed: int = 0, upstream_macs=None):
        if not isinstance(topology, Fabric):
            raise ControllerError("the match-and-forward controller runs on fabrics only")
        super().__init__(topology, chains, net, seed, upstream_macs)

    def setup_flow(self, key, chain, choice, source, cause=None) -> FlowPlan:
        t = self.topology
        rkey = key.reverse()
        dest = t.device(choice.destination)
        seq = [source] + [t.device(ref) for ref in choice.instances] + [dest]
        plan = FlowPlan(key, chain, choice.instances, dest.name, source.name,
                        [d.port for d in seq[1:]], [d.port for d in reversed(seq[:-1])])

        def rule(sw, in_port, k, out, extra=()):
            self.install(sw, FLOW_PRIO, MatchSpec.for_flow(k, in_port=in_port),
                         tuple(extra) + (OutputFixed(out),), cause)

        # addressing as a conventional network would see it
        rule(source.switch, source.port, key, t.trunk(seq[1].switch), (SetField("dst_mac", HOST),))
        for prev, mbox, nxt in zip(seq, seq[1:-1], seq[2:]):
            sw = mbox.switch
            rule(sw, t.trunk(prev.switch), key, mbox.port)
            rule(sw, mbox.port, key, t.trunk(nxt.switch))
            rule(sw, t.trunk(nxt.switch), rkey, mbox.port)
            rule(sw, mbox.port, rkey, source.port if prev is source else t.trunk(prev.switch))
        last = seq[-2]
        rule(dest.switch, t.trunk(last.switch), key, dest.port)
        rule(dest.switch, dest.port, rkey, source.port if last is source else t.trunk(last.switch))
        self.plans[key] = plan
        return plan

    def packet_in(self, switch: str, in_port, p: SimPacket):
        if p.dst_mac != 0:
            return Drop("unexpected", p)
        return self._new_flow(switch, in_port, p)

    on_packet_in_baseline = packet_in


def make_controller(mode: str, topology, chains, net, **kw) -> Controller:
    if mode == "active":
        return ActiveController(topology, chains, net, **kw)
    if mode == "baseline":
        kw.pop("encoding", None)
        kw.pop("reannotation", None)
        return BaselineController(topology, chains, net, **kw)
    raise ControllerError(f"unknown controller mode {mode!r}")


__all__ = [
    "ActiveController", "AffinityTable", "BaselineController", "Choice", "Controller",
    "ControllerError", "FlowPlan", "PolicyChain", "Reprocess", "build_port_path",
    "key_matches", "make_controller", "mesh_port_path",
]
