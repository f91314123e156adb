from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass, replace
from typing import NamedTuple

from .annotation import ZERO_MAC, MacAddress, format_mac

DOWNSTREAM = "downstream"
UPSTREAM = "upstream"

TCP = 6
UDP = 17

_KEY_RE = re.compile(r"^([\d.]+):(\d+)-([\d.]+):(\d+)/(\d+)$")


def ip_to_int(addr: "str | int") -> int:
    return int(ipaddress.IPv4Address(addr))


def int_to_ip(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


class FlowKey(NamedTuple):
    """L3/L4 flow identity.  Addresses are stored as integers."""

    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    protocol: int

    @classmethod
    def make(cls, src: str, sport: int, dst: str, dport: int, protocol: int = TCP) -> "FlowKey":
        return cls(ip_to_int(src), ip_to_int(dst), sport, dport, protocol)

    @classmethod
    def parse(cls, text: str) -> "FlowKey":
        m = _KEY_RE.match(text)
        if not m:
            raise ValueError(f"not a flow key: {text!r}")
        src, sport, dst, dport, proto = m.groups()
        return cls.make(src, int(sport), dst, int(dport), int(proto))

    def reverse(self) -> "FlowKey":
        return FlowKey(self.dst_ip, self.src_ip, self.dst_port, self.src_port, self.protocol)

    def __str__(self) -> str:
        return (f"{int_to_ip(self.src_ip)}:{self.src_port}-"
                f"{int_to_ip(self.dst_ip)}:{self.dst_port}/{self.protocol}")


def reverse_flow_key(key: FlowKey) -> FlowKey:
    return key.reverse()


@dataclass(frozen=True, slots=True)
class SimPacket:
    flow_key: FlowKey
    payload_id: int
    dst_mac: int = ZERO_MAC
    src_mac: int = ZERO_MAC
    dscp: int = 0
    direction: str = DOWNSTREAM

    def __post_init__(self):
        if not 0 <= self.dscp < 64:
            raise ValueError(f"dscp {self.dscp} does not fit in 6 bits")

    def evolve(self, **changes) -> "SimPacket":
        return replace(self, **changes)

    def headers(self) -> tuple[MacAddress, MacAddress]:
        return MacAddress(self.dst_mac), MacAddress(self.src_mac)

    def describe(self) -> str:
        return (f"flow={self.flow_key} dst_mac={format_mac(self.dst_mac)} "
                f"src_mac={format_mac(self.src_mac)} dscp={self.dscp} payload={self.payload_id}")
