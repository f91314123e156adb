"""Middlebox behaviour models.

Each behaviour describes what the network can observe of a device: which
packets come back out, and which header fields differ.  Instances are
deterministic given their seed and the packets they see.
"""
from __future__ import annotations

import itertools
import random
import zlib
from dataclasses import dataclass, replace
from typing import Callable, Iterator, Optional, Union

from .annotation import MacAddress, parse_mac
from .packet import DOWNSTREAM, TCP, FlowKey, SimPacket, ip_to_int

FIELD_BITS = {"src_ip": 32, "dst_ip": 32, "src_port": 16, "dst_port": 16, "protocol": 8}


@dataclass(frozen=True)
class Transparent:
    pass


@dataclass(frozen=True)
class Translucent:
    seed: int = 0
    drop_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ValueError("drop_rate must lie in [0, 1]")


@dataclass(frozen=True)
class Mangling:
    seed: int = 0
    fields: tuple = ("src_ip", "src_port")

    def __post_init__(self):
        bad = set(self.fields) - set(FIELD_BITS)
        if bad or not self.fields:
            raise ValueError(f"cannot rewrite {sorted(bad) or 'nothing'}")


@dataclass(frozen=True)
class ManglingRouter(Mangling):
    """A mangling box that also rewrites the L2 header like a router would."""

    fields: tuple = ("dst_ip", "dst_port")
    own_mac: int = MacAddress("02:00:00:00:00:01")
    next_hop_mac: int = MacAddress("02:00:00:00:00:fe")


@dataclass(frozen=True)
class Originating:
    """Starts ``schedule[tick]`` new flows at each listed tick.

    New flows go to one of ``targets`` (dst_ip, dst_port, protocol) and leave
    with empty L2 addresses, so the adjacent edge switch hands them to the
    controller.
    """

    schedule: tuple = ()
    seed: int = 0
    targets: tuple = ()
    address: Optional[int] = None


@dataclass(frozen=True)
class Terminating:
    pass


MiddleboxBehavior = Union[Transparent, Translucent, Mangling, ManglingRouter, Originating, Terminating]

BEHAVIORS = {
    "transparent": Transparent,
    "translucent": Translucent,
    "mangling": Mangling,
    "mangling_router": ManglingRouter,
    "originating": Originating,
    "terminating": Terminating,
}


def behavior_from_dict(spec: dict) -> MiddleboxBehavior:
    spec = dict(spec)
    kind = spec.pop("type", "transparent")
    try:
        cls = BEHAVIORS[kind]
    except KeyError:
        raise ValueError(f"unknown middlebox behaviour {kind!r}") from None
    if "fields" in spec:
        spec["fields"] = tuple(spec["fields"])
    for mac in ("own_mac", "next_hop_mac"):
        if mac in spec:
            spec[mac] = parse_mac(spec[mac])
    if cls is Originating:
        spec["schedule"] = tuple(sorted((int(t), int(n)) for t, n in dict(spec.get("schedule", {})).items()))
        spec["targets"] = tuple(
            (ip_to_int(t["dst_ip"]), int(t.get("dst_port", 80)), int(t.get("protocol", TCP)))
            for t in spec.get("targets", ()))
        if spec.get("address") is not None:
            spec["address"] = ip_to_int(spec["address"])
    return cls(**spec)


def _stable_seed(*parts) -> int:
    return zlib.crc32(":".join(str(p) for p in parts).encode())


class MiddleboxInstance:
    """A running middlebox.

    ``interface_model`` is either ``"ingress/egress"`` or
    ``"upstream/downstream"``; both physical interfaces of the latter map
    onto the abstract ingress (receive) and egress (transmit) pair.
    """

    def __init__(self, name: str, behavior: MiddleboxBehavior = Transparent(),
                 interface_model: str = "ingress/egress"):
        if interface_model not in ("ingress/egress", "upstream/downstream"):
            raise ValueError(f"unknown interface model {interface_model!r}")
        self.name = name
        self.behavior = behavior
        self.interface_model = interface_model
        self.rewrites: dict[FlowKey, FlowKey] = {}
        self._rewritten: set[FlowKey] = set()
        self._rng = random.Random(_stable_seed("mangle", getattr(behavior, "seed", 0), name))
        self._flow_rng = random.Random(_stable_seed("origin", getattr(behavior, "seed", 0), name))
        self._ports_used: set[int] = set()
        self._local_ids: Iterator[int] = itertools.count(1)
        self.originated: list[FlowKey] = []

    @property
    def own_mac(self) -> Optional[int]:
        return getattr(self.behavior, "own_mac", None)

    def receive_interface(self, p: SimPacket) -> str:
        """Physical interface a packet arrives on under this box's model."""
        if self.interface_model == "ingress/egress":
            return "ingress"
        # traffic from the external network arrives upstream
        return "upstream" if p.direction == DOWNSTREAM else "downstream"

    def _rewrite(self, key: FlowKey) -> FlowKey:
        out = self.rewrites.get(key)
        if out is not None:
            return out
        while True:
            values = key._asdict()
            for name in self.behavior.fields:
                bits = FIELD_BITS[name]
                lo = 1024 if bits == 16 else 1
                values[name] = self._rng.randint(lo, (1 << bits) - 2)
            out = FlowKey(**values)
            if out != key and out not in self._rewritten:
                break
        self.rewrites[key] = out
        self._rewritten.add(out)
        return out

    def traverse(self, p: SimPacket) -> list[SimPacket]:
        b = self.behavior
        kind = type(b)
        if kind in (Transparent, Originating):
            return [p]
        if kind is Terminating:
            return []
        if kind is Translucent:
            draw = _stable_seed("drop", b.seed, self.name, p.payload_id) / 2**32
            return [] if draw < b.drop_rate else [p]
        if kind is Mangling:
            return [replace(p, flow_key=self._rewrite(p.flow_key))]
        if kind is ManglingRouter:
            return [replace(p, flow_key=self._rewrite(p.flow_key),
                            src_mac=b.own_mac, dst_mac=b.next_hop_mac)]
        raise TypeError(f"unknown behaviour {b!r}")

    def originate(self, tick: int, new_payload: Optional[Callable[[], int]] = None) -> list[SimPacket]:
        b = self.behavior
        if not isinstance(b, Originating):
            return []
        count = dict(b.schedule).get(tick, 0)
        if not count:
            return []
        if not b.targets:
            raise ValueError(f"{self.name}: originating middlebox has no targets")
        src_ip = b.address if b.address is not None else ip_to_int("10.128.0.0") | (_stable_seed(self.name) & 0x7FFF)
        new_payload = new_payload or (lambda: next(self._local_ids))
        packets = []
        for _ in range(count):
            port = self._flow_rng.randint(1024, 65535)
            while port in self._ports_used:
                port = self._flow_rng.randint(1024, 65535)
            self._ports_used.add(port)
            dst_ip, dst_port, proto = self._flow_rng.choice(b.targets)
            key = FlowKey(src_ip, dst_ip, port, dst_port, proto)
            self.originated.append(key)
            packets.append(SimPacket(key, new_payload(), direction=DOWNSTREAM))
        return packets


def traverse(m: MiddleboxInstance, p: SimPacket) -> list[SimPacket]:
    return m.traverse(p)


def originate(m: MiddleboxInstance, tick: int) -> list[SimPacket]:
    return m.originate(tick)


__all__ = [
    "BEHAVIORS", "MiddleboxBehavior", "MiddleboxInstance", "Mangling", "ManglingRouter",
    "Originating", "Terminating", "Translucent", "Transparent", "behavior_from_dict",
    "originate", "traverse",
]
