"""Deterministic packet-walk simulator.

Time advances in ticks.  Every packet injected during a tick is walked to
completion (delivery, drop, or absorption) before the next one starts, so
the trace is a pure function of scenario, workload and seed.
"""
from __future__ import annotations

import itertools
import random
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

from .annotation import HOST_MAC, MAX_EXTENDED_HOPS, ZERO_MAC, format_mac
from .controller import (GATEWAY_EXT_PORT, GATEWAY_NET_PORT, Reprocess, make_controller)
from .encapsulation import EncapBox, EncapError
from .middlebox import MiddleboxInstance, Originating, Terminating, Transparent
from .packet import DOWNSTREAM, TCP, UPSTREAM, FlowKey, SimPacket, ip_to_int
from .switch import Drop, Emit, FlowRule, SwitchState, ToController
from .topology import ToDevice, ToSwitch

DEFAULT_HOP_BUDGET = 4 * MAX_EXTENDED_HOPS
PATTERNS = ("downstream", "upstream", "bidirectional")

KINDS = ("Inject", "SwitchProcess", "MiddleboxTraverse", "ControllerPacketIn",
         "RuleInstall", "Deliver", "Drop", "Absorb")


@dataclass(frozen=True, slots=True)
class TraceEvent:
    tick: int
    seq: int
    kind: str
    loc: str
    packet: Optional[SimPacket] = None
    detail: str = ""
    port: Optional[int] = None

    @property
    def reason(self) -> str:
        return self.detail if self.kind == "Drop" else ""

    def render(self) -> str:
        p = self.packet
        if p is None:
            pkt = "flow=- dst_mac=- src_mac=- dscp=- payload=-"
        else:
            pkt = (f"flow={p.flow_key} dst_mac={format_mac(p.dst_mac)} "
                   f"src_mac={format_mac(p.src_mac)} dscp={p.dscp} payload={p.payload_id}")
        line = f"tick={self.tick} kind={self.kind} loc={self.loc} {pkt}"
        return f"{line} detail={self.detail}" if self.detail else line


class Trace:
    def __init__(self, events: Iterable[TraceEvent] = ()):
        self.events: list[TraceEvent] = list(events)
        # payload id -> (flow label, direction); filled in by the engine
        self.flow_of: dict[int, tuple] = {}

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def __getitem__(self, i):
        return self.events[i]

    def of_kind(self, *kinds: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind in kinds]

    def for_payload(self, payload_id: int) -> list[TraceEvent]:
        return [e for e in self.events if e.packet is not None and e.packet.payload_id == payload_id]

    def emitted_ports(self, payload_id: int) -> list[int]:
        return [e.port for e in self.for_payload(payload_id) if e.kind == "SwitchProcess"]

    def ports_by_payload(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for e in self.events:
            if e.kind == "SwitchProcess":
                out.setdefault(e.packet.payload_id, []).append(e.port)
        return out

    def lines(self) -> Iterator[str]:
        return (e.render() for e in self.events)

    def render(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")


@dataclass(frozen=True)
class FlowSpec:
    key: FlowKey
    packets: int = 1
    pattern: str = "downstream"
    start: int = 0
    source: Optional[str] = None

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown direction pattern {self.pattern!r}")
        if self.packets < 0 or self.start < 0:
            raise ValueError("packet count and start tick must be non-negative")

    def direction(self, i: int) -> str:
        if self.pattern == "bidirectional":
            return DOWNSTREAM if i % 2 == 0 else UPSTREAM
        return self.pattern


@dataclass(frozen=True)
class Workload:
    flows: tuple = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(self.flows))
        keys = [f.key for f in self.flows]
        if len(set(keys)) != len(keys):
            raise ValueError("flow keys in a workload must be unique")


def make_workload(chains, flows: int, packets: int = 1, pattern: str = "downstream",
                  seed: int = 0, start: int = 0, addresses: Optional[dict] = None) -> Workload:
    """``flows`` distinct flows spread round-robin over ``chains``.

    Fields a chain's match leaves open are filled from a seeded generator;
    an open destination address falls back to the chain's first endpoint's
    address from ``addresses``.
    """
    rng = random.Random(seed)
    addresses = addresses or {}
    base = ip_to_int("198.18.0.0")
    seen: set[FlowKey] = set()
    out = []
    chains = list(chains)
    for i in range(flows):
        m = chains[i % len(chains)].match
        dst_ip = m.dst_ip
        if dst_ip is None:
            dst_ip = ip_to_int(addresses.get(chains[i % len(chains)].destination[0], "10.0.0.9"))
        while True:
            key = FlowKey(
                m.src_ip if m.src_ip is not None else base + rng.randrange(1 << 17),
                dst_ip,
                m.src_port if m.src_port is not None else rng.randint(1024, 65535),
                m.dst_port if m.dst_port is not None else 80,
                m.protocol if m.protocol is not None else TCP,
            )
            if key not in seen:
                break
            if m.src_ip is not None and m.src_port is not None:
                raise ValueError("chain match pins the whole flow key; cannot make distinct flows")
        seen.add(key)
        out.append(FlowSpec(key, packets, pattern, start))
    return Workload(tuple(out), seed)


def hop_budget(scenario) -> int:
    value = getattr(scenario, "hop_budget", None)
    return DEFAULT_HOP_BUDGET if value is None else value


def build_device(dev):
    """Fresh runtime object for a middlebox device (None for others)."""
    if dev.kind != "middlebox":
        return None
    cfg = dev.config or {}
    inner = MiddleboxInstance(dev.name, dev.behavior or Transparent(),
                              cfg.get("interface_model", "ingress/egress"))
    encap = cfg.get("encapsulation")
    if encap:
        return EncapBox(dev.name, inner, **encap)
    return inner


class Engine:
    def __init__(self, scenario, mode: str = "active", seed: Optional[int] = None,
                 budget: Optional[int] = None, encoding: Optional[str] = None,
                 reannotation: Optional[str] = None, record: bool = True):
        self.scenario = scenario
        self.topology = t = scenario.topology
        self.mode = mode
        self.seed = scenario.seed if seed is None else seed
        self.budget = hop_budget(scenario) if budget is None else budget
        self.record = record
        self.trace = Trace()
        self.tick = 0
        self._seq = itertools.count()
        self._payloads = itertools.count(1)
        self.switches: dict[str, SwitchState] = {}
        for sw in t.switches:
            self.switches[sw] = SwitchState(sw, scenario.default_actions.get(sw, "drop"),
                                            t.switch_ports(sw), scenario.roles.get(sw, ""))
        for gw in t.gateways():
            self.switches[gw.name] = SwitchState(gw.name, "drop", (GATEWAY_NET_PORT, GATEWAY_EXT_PORT),
                                                 "gateway")
        self.devices = {name: build_device(dev) for name, dev in t.devices.items()}
        kw = {"seed": self.seed, "upstream_macs": scenario.upstream_macs}
        if mode == "active":
            kw["encoding"] = encoding or scenario.encoding
            kw["reannotation"] = reannotation or scenario.reannotation
        self.controller = make_controller(mode, t, scenario.chains, self, **kw)
        self.counts = {"injected": 0, "delivered": 0, "dropped": 0, "absorbed": 0}
        self.drops: dict[str, int] = {}
        self._box_keys: dict = {}
        self._flow_base = 0
        self._programmed = False

    # -- tracing ---------------------------------------------------------

    def _event(self, kind, loc, packet=None, detail="", port=None) -> None:
        if self.record:
            self.trace.events.append(TraceEvent(self.tick, next(self._seq), kind, loc,
                                                packet, detail, port))

    def _drop(self, loc, reason, packet) -> None:
        self.counts["dropped"] += 1
        self.drops[reason] = self.drops.get(reason, 0) + 1
        self._event("Drop", loc, packet, reason)

    # -- network interface used by controllers -----------------------------

    def install(self, switch: str, rule: FlowRule, cause: Optional[SimPacket] = None) -> int:
        sw = self.switches[switch]
        rid = sw.install(rule)
        if self.record:
            detail = f"rule={rid},prio={rule.priority}" + (",replaced" if sw.last_replaced else "")
            self._event("RuleInstall", switch, cause, detail)
        return rid

    def program(self) -> None:
        if not self._programmed:
            self._programmed = True
            self.controller.program()

    # -- packet walk -------------------------------------------------------

    def new_payload(self) -> int:
        return next(self._payloads)

    def inject(self, device: str, packet: SimPacket) -> None:
        """Hand ``packet`` to the network as if ``device`` had just sent it."""
        dev = self.topology.device(device)
        self.counts["injected"] += 1
        self._event("Inject", dev.name, packet)
        self._walk(deque([(dev.switch, dev.port, packet, 0)]))

    def _walk(self, work: deque) -> None:
        t = self.topology
        while work:
            sw_id, in_port, p, hops = work.popleft()
            hops += 1
            if hops > self.budget:
                self._drop(sw_id, "loop", p)
                continue
            out = self.switches[sw_id].process(in_port, p)
            kind = type(out)
            if kind is ToController:
                self._event("ControllerPacketIn", sw_id, out.packet, f"in={in_port}")
                verdict = self.controller.packet_in(sw_id, in_port, out.packet)
                if isinstance(verdict, Reprocess):
                    work.appendleft((sw_id, in_port, verdict.packet, hops))
                else:
                    self._drop(sw_id, verdict.reason, verdict.packet)
                continue
            if kind is Drop:
                self._drop(sw_id, out.reason, out.packet)
                continue
            q = out.packet
            rid = out.rule.id if out.rule is not None else "-"
            if self.record:
                self._event("SwitchProcess", sw_id, q, f"in={in_port},rule={rid},out={out.port}",
                            out.port)
            hop = t.resolve(sw_id, out.port)
            if type(hop) is ToSwitch:
                work.append((hop.switch, hop.in_port, q, hops))
            elif type(hop) is ToDevice:
                self._arrive(hop.device, q, hops, work)
            else:
                self._drop(sw_id, "blackhole", q)

    def _arrive(self, name: str, p: SimPacket, hops: int, work: deque) -> None:
        dev = self.topology.devices[name]
        if dev.kind == "endpoint":
            if p.dst_mac == HOST_MAC:
                self.counts["delivered"] += 1
                self._event("Deliver", name, p)
            else:
                self._drop(name, "l2-mismatch", p)
            return
        if dev.kind == "gateway":
            out = self.switches[name].process(GATEWAY_NET_PORT, p)
            if type(out) is Emit and out.port == GATEWAY_EXT_PORT:
                self.counts["delivered"] += 1
                self._event("Deliver", name, out.packet, "external")
            else:
                self._drop(name, getattr(out, "reason", "gateway"), p)
            return
        if dev.kind == "external":
            self.counts["delivered"] += 1
            self._event("Deliver", name, p)
            return
        box = self.devices[name]
        inner = box.inner if isinstance(box, EncapBox) else box
        if isinstance(box, EncapBox):
            flow = self.trace.flow_of.get(p.payload_id, (p.flow_key,))[0]
            self._box_keys.setdefault(flow, {}).setdefault(name, set()).add(p.flow_key)
        self._event("MiddleboxTraverse", name, p, f"if={inner.receive_interface(p)}")
        try:
            outs = box.traverse(p)
        except EncapError as exc:
            self._drop(name, exc.reason, p)
            return
        if not outs:
            if isinstance(inner.behavior, Terminating):
                self.counts["absorbed"] += 1
                self._event("Absorb", name, p)
            else:
                self._drop(name, "filtered", p)
            return
        for q in outs:
            work.append((dev.switch, dev.port, q, hops))

    # -- workloads ---------------------------------------------------------

    def _flow_packet(self, idx: int, flow: FlowSpec, i: int) -> tuple[str, SimPacket]:
        pid = self.new_payload()
        direction = flow.direction(i)
        self.trace.flow_of[pid] = (idx, direction)
        if direction == DOWNSTREAM:
            source = flow.source or self.topology.gateways()[0].name
            return source, SimPacket(flow.key, pid, ZERO_MAC, ZERO_MAC, 0, DOWNSTREAM)
        return (self._endpoint_for(flow.key),
                SimPacket(flow.key.reverse(), pid, HOST_MAC, HOST_MAC, 0, UPSTREAM))

    def _endpoint_for(self, key: FlowKey) -> str:
        plan = self.controller.plans.get(key)
        if plan is not None:
            return plan.destination
        chain = self.controller.match_chain(key)
        if chain is not None:
            return chain.destination[0]
        return next(d.name for d in self.topology.devices.values() if d.kind == "endpoint")

    def _originators(self) -> list[tuple[str, MiddleboxInstance]]:
        out = []
        for name, box in self.devices.items():
            inner = box.inner if isinstance(box, EncapBox) else box
            if inner is not None and isinstance(inner.behavior, Originating):
                out.append((name, inner))
        return out

    def _end_flow(self, flow) -> None:
        for name, keys in self._box_keys.pop(flow, {}).items():
            for key in sorted(keys):
                self.devices[name].flow_ended(key)

    def run(self, workload: Optional[Workload] = None) -> Trace:
        """Play ``workload``.  Repeated calls continue on the same network."""
        self.program()
        workload = workload or Workload()
        base = self._flow_base
        self._flow_base += len(workload.flows)
        by_tick: dict[int, list[tuple[int, int]]] = {}
        last_tick: dict[int, int] = {}
        for idx, flow in enumerate(workload.flows):
            for i in range(flow.packets):
                by_tick.setdefault(flow.start + i, []).append((idx, i))
            if flow.packets:
                last_tick[idx] = flow.start + flow.packets - 1
        ends: dict[int, list[int]] = {}
        for idx, tick in last_tick.items():
            ends.setdefault(tick, []).append(idx)
        originators = self._originators()
        ticks = set(by_tick)
        for _, inner in originators:
            ticks.update(t for t, _ in inner.behavior.schedule)
        for tick in sorted(ticks):
            self.tick = tick
            for idx, i in by_tick.get(tick, ()):
                source, p = self._flow_packet(base + idx, workload.flows[idx], i)
                self.inject(source, p)
            for name, inner in originators:
                for p in inner.originate(tick, self.new_payload):
                    self.trace.flow_of[p.payload_id] = (p.flow_key, DOWNSTREAM)
                    self.inject(name, p)
                    self._end_flow(p.flow_key)
            for idx in ends.get(tick, ()):
                self._end_flow(base + idx)
        return self.trace

    # -- inspection --------------------------------------------------------

    def rules(self) -> str:
        from .switch import dump_rules
        return dump_rules(self.switches.values())

    def dropped(self, exclude: Sequence[str] = ()) -> int:
        return sum(n for r, n in self.drops.items() if r not in exclude)


def run(scenario, workload: Optional[Workload] = None, mode: str = "active", **kw) -> Trace:
    return Engine(scenario, mode, **kw).run(workload)
