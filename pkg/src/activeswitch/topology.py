"""Network shapes: the abstract fabric and the switch mesh.

Fabric
    Every device sits on a numbered fabric port (1..253).  A port is hosted
    by an edge switch, which performs flow-table lookups on traffic the
    device sends into the fabric.  Outputting on a fabric port hands the
    packet to the core, which delivers it straight to that port's device.
    Edge switches are also joined by trunk ports (numbered from 256, out of
    reach of any 8-bit annotation) which deliver into another edge switch's
    flow table instead; only the match-and-forward controller uses them.

Mesh
    Switches joined by explicit (switch, port) <-> (switch, port) links with
    devices attached to switch ports.  Devices carry unique 8-bit
    identifiers for destination encoding.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple, Optional, Union

from .annotation import RESERVED_OCTETS

DEVICE_KINDS = ("endpoint", "middlebox", "gateway", "external")
MAX_FABRIC_PORT = 253
TRUNK_BASE = 256
MAX_MESH_PORTS = 32
MAX_MESH_DEVICES_PER_SWITCH = 15
MAX_MESH_INTERIOR = 15


class TopologyError(ValueError):
    pass


@dataclass
class DeviceRef:
    name: str
    kind: str
    switch: str
    port: int
    ident: Optional[int] = None
    behavior: Any = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DEVICE_KINDS:
            raise TopologyError(f"device {self.name}: unknown kind {self.kind!r}")


class ToSwitch(NamedTuple):
    switch: str
    in_port: int


class ToDevice(NamedTuple):
    device: str


Hop = Union[ToSwitch, ToDevice, None]


class _Base:
    kind = ""

    def __init__(self, switches: Iterable[str], devices: Iterable[DeviceRef]):
        self.switches = list(switches)
        if len(set(self.switches)) != len(self.switches):
            raise TopologyError("duplicate switch id")
        self.devices: dict[str, DeviceRef] = {}
        for dev in devices:
            if dev.name in self.devices:
                raise TopologyError(f"duplicate device id {dev.name!r}")
            if dev.switch not in self.switches:
                raise TopologyError(f"device {dev.name}: unknown switch {dev.switch!r}")
            self.devices[dev.name] = dev

    def device(self, ref: "str | int") -> DeviceRef:
        if isinstance(ref, str):
            try:
                return self.devices[ref]
            except KeyError:
                raise TopologyError(f"unknown device {ref!r}") from None
        for dev in self.devices.values():
            if dev.ident == ref:
                return dev
        raise TopologyError(f"unknown device id {ref!r}")

    def attachment(self, ref: "str | int") -> tuple[str, int]:
        dev = self.device(ref)
        return dev.switch, dev.port

    def devices_on(self, switch: str) -> list[DeviceRef]:
        return [d for d in self.devices.values() if d.switch == switch]

    def gateways(self) -> list[DeviceRef]:
        return [d for d in self.devices.values() if d.kind == "gateway"]


class Fabric(_Base):
    kind = "fabric"

    def __init__(self, switches: Iterable[str], devices: Iterable[DeviceRef],
                 ingress_ports: Iterable[int] = ()):
        super().__init__(switches, devices)
        self.ports: dict[int, DeviceRef] = {}
        for dev in self.devices.values():
            if not 1 <= dev.port <= MAX_FABRIC_PORT or dev.port in RESERVED_OCTETS:
                raise TopologyError(f"device {dev.name}: fabric port {dev.port} outside 1..{MAX_FABRIC_PORT}")
            if dev.port in self.ports:
                raise TopologyError(f"fabric port {dev.port} used twice")
            self.ports[dev.port] = dev
            if dev.ident is None:
                dev.ident = dev.port
        self.ingress_ports = set(ingress_ports) or {d.port for d in self.gateways()}
        self._index = {s: i for i, s in enumerate(self.switches)}
        all_ports = set(self.ports) | {TRUNK_BASE + i for i in range(len(self.switches))}
        self._switch_ports = frozenset(all_ports)

    def trunk(self, toward: str) -> int:
        """Port number (on any switch) of the trunk leading to ``toward``."""
        return TRUNK_BASE + self._index[toward]

    def device_at(self, port: int) -> DeviceRef:
        try:
            return self.ports[port]
        except KeyError:
            raise TopologyError(f"nothing attached at fabric port {port}") from None

    def switch_ports(self, switch: str) -> frozenset:
        return self._switch_ports

    def resolve(self, switch: str, port: int) -> Hop:
        if port >= TRUNK_BASE:
            idx = port - TRUNK_BASE
            if idx >= len(self.switches):
                return None
            return ToSwitch(self.switches[idx], self.trunk(switch))
        dev = self.ports.get(port)
        return ToDevice(dev.name) if dev is not None else None

    def check_connected(self) -> None:
        # the core joins every edge switch
        return None


class MeshTopology(_Base):
    kind = "mesh"

    def __init__(self, switches: Iterable[str], links: Iterable[tuple[str, int, str, int]],
                 devices: Iterable[DeviceRef], next_hop_overrides: Optional[dict] = None,
                 ingress: Iterable[str] = ()):
        super().__init__(switches, devices)
        self.ingress = set(ingress)
        interior = [s for s in self.switches if s not in self.ingress]
        if len(interior) > MAX_MESH_INTERIOR:
            raise TopologyError(f"{len(interior)} interior switches; at most {MAX_MESH_INTERIOR}")
        self._claimed: set[tuple[str, int]] = set()
        self.links: dict[tuple[str, int], tuple[str, int]] = {}
        self.attached: dict[tuple[str, int], DeviceRef] = {}
        for a, p, b, q in links:
            for s, port in ((a, p), (b, q)):
                if s not in self.switches:
                    raise TopologyError(f"link endpoint on unknown switch {s!r}")
                self._claim(s, port)
            self.links[(a, p)] = (b, q)
            self.links[(b, q)] = (a, p)
        idents = set()
        for dev in self.devices.values():
            self._claim(dev.switch, dev.port)
            self.attached[(dev.switch, dev.port)] = dev
            if dev.ident is None or not 0 < dev.ident < 0xFF or dev.ident in RESERVED_OCTETS:
                raise TopologyError(f"device {dev.name}: identifier {dev.ident!r} not in 1..253")
            if dev.ident in idents:
                raise TopologyError(f"device identifier {dev.ident} used twice")
            idents.add(dev.ident)
        for s in self.switches:
            if len(self.devices_on(s)) > MAX_MESH_DEVICES_PER_SWITCH:
                raise TopologyError(f"switch {s}: more than {MAX_MESH_DEVICES_PER_SWITCH} devices")
        self.overrides = {s: dict(t) for s, t in (next_hop_overrides or {}).items()}
        self._tables: Optional[dict[str, dict[int, int]]] = None

    def _claim(self, switch: str, port: int) -> None:
        if not 1 <= port <= MAX_MESH_PORTS:
            raise TopologyError(f"switch {switch}: port {port} outside 1..{MAX_MESH_PORTS}")
        if (switch, port) in self._claimed:
            raise TopologyError(f"switch {switch}: port {port} used twice")
        self._claimed.add((switch, port))

    def switch_ports(self, switch: str) -> frozenset:
        return frozenset(p for (s, p) in self._claimed if s == switch)

    def resolve(self, switch: str, port: int) -> Hop:
        peer = self.links.get((switch, port))
        if peer is not None:
            return ToSwitch(*peer)
        dev = self.attached.get((switch, port))
        return ToDevice(dev.name) if dev is not None else None

    def neighbours(self, switch: str) -> list[tuple[int, str]]:
        return sorted((p, self.links[(s, p)][0]) for (s, p) in self.links if s == switch)

    def _distances(self, target: str) -> dict[str, int]:
        dist = {target: 0}
        queue = deque([target])
        while queue:
            cur = queue.popleft()
            for _, nxt in self.neighbours(cur):
                if nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    queue.append(nxt)
        return dist

    def check_connected(self) -> None:
        if not self.switches:
            return
        reach = self._distances(self.switches[0])
        missing = [s for s in self.switches if s not in reach]
        if missing:
            raise TopologyError(f"mesh is disconnected: {', '.join(missing)} unreachable "
                                f"from {self.switches[0]}")

    def compute_next_hop_tables(self) -> dict[str, dict[int, int]]:
        """Per switch, the egress port toward every device identifier.

        Shortest path over inter-switch links; equal-cost first hops are
        broken by lowest port.  Explicit overrides from the scenario win.
        """
        dist_to = {t: self._distances(t) for t in self.switches}
        tables: dict[str, dict[int, int]] = {}
        for s in self.switches:
            table = {}
            for dev in sorted(self.devices.values(), key=lambda d: d.ident):
                if dev.switch == s:
                    table[dev.ident] = dev.port
                    continue
                dist = dist_to[dev.switch]
                if s not in dist:
                    raise TopologyError(f"device {dev.name} unreachable from switch {s}")
                table[dev.ident] = min(p for p, nxt in self.neighbours(s)
                                       if dist.get(nxt, -2) == dist[s] - 1)
            for ref, port in self.overrides.get(s, {}).items():
                table[self.device(ref).ident] = port
            tables[s] = table
        return tables

    @property
    def next_hop_tables(self) -> dict[str, dict[int, int]]:
        if self._tables is None:
            self._tables = self.compute_next_hop_tables()
        return self._tables

    def is_adjacent(self, switch: str, ref: "str | int") -> bool:
        if switch not in self.switches:
            raise TopologyError(f"unknown switch {switch!r}")
        return self.device(ref).switch == switch

    def next_hop(self, switch: str, ref: "str | int") -> int:
        if switch not in self.switches:
            raise TopologyError(f"unknown switch {switch!r}")
        return self.next_hop_tables[switch][self.device(ref).ident]


def is_adjacent(t: MeshTopology, switch: str, ref: "str | int") -> bool:
    return t.is_adjacent(switch, ref)


def next_hop(t: MeshTopology, switch: str, ref: "str | int") -> int:
    return t.next_hop(switch, ref)


def compute_next_hop_tables(t: MeshTopology) -> dict[str, dict[int, int]]:
    return t.compute_next_hop_tables()
