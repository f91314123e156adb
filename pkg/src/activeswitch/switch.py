"""Edge switch model: a priority-ordered flow table and an action interpreter.

Besides plain outputs the interpreter supports the three register actions
the path encoding relies on: partial load from a header field into a
register, partial store from a register into a field, and output to the
port held in a register.  Registers are 64 bits wide and are zeroed for
every packet.
"""
from __future__ import annotations

import bisect
import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence, Union

from .annotation import MAC_MASK, SWAP, format_mac
from .packet import FlowKey, SimPacket, int_to_ip

FIELD_WIDTHS = {
    "dst_mac": 48,
    "src_mac": 48,
    "dscp": 6,
    "src_ip": 32,
    "dst_ip": 32,
    "src_port": 16,
    "dst_port": 16,
    "protocol": 8,
}
FLOW_FIELDS = FlowKey._fields
NUM_REGISTERS = 8


def _bits(width: int) -> int:
    return (1 << width) - 1


def _check_slice(name: str, offset: int, length: int) -> None:
    width = FIELD_WIDTHS.get(name)
    if width is None:
        raise ValueError(f"unknown field {name!r}")
    if offset < 0 or length <= 0 or offset + length > width:
        raise ValueError(f"bits [{offset}:{offset + length}) outside {name} ({width} bits)")


def _check_register(reg: int) -> None:
    if not 0 <= reg < NUM_REGISTERS:
        raise ValueError(f"no register r{reg}")


@dataclass(frozen=True)
class MatchSpec:
    """Fields left as ``None`` are wildcards; MAC fields take a bit mask."""

    in_port: Optional[int] = None
    dst_mac: Optional[int] = None
    dst_mask: int = MAC_MASK
    src_mac: Optional[int] = None
    src_mask: int = MAC_MASK
    dscp: Optional[int] = None
    src_ip: Optional[int] = None
    dst_ip: Optional[int] = None
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    protocol: Optional[int] = None

    def __post_init__(self):
        if self.dst_mac is not None:
            object.__setattr__(self, "dst_mac", self.dst_mac & self.dst_mask)
        if self.src_mac is not None:
            object.__setattr__(self, "src_mac", self.src_mac & self.src_mask)

    @classmethod
    def for_flow(cls, key: FlowKey, **extra) -> "MatchSpec":
        return cls(src_ip=key[0], dst_ip=key[1], src_port=key[2], dst_port=key[3],
                   protocol=key[4], **extra)

    def flow_tuple(self) -> Optional[tuple]:
        t = (self.src_ip, self.dst_ip, self.src_port, self.dst_port, self.protocol)
        return None if None in t else t

    def matches(self, in_port: Optional[int], p: SimPacket) -> bool:
        if self.in_port is not None and self.in_port != in_port:
            return False
        if self.dst_mac is not None and (p.dst_mac & self.dst_mask) != self.dst_mac:
            return False
        if self.src_mac is not None and (p.src_mac & self.src_mask) != self.src_mac:
            return False
        if self.dscp is not None and p.dscp != self.dscp:
            return False
        k = p.flow_key
        return ((self.src_ip is None or self.src_ip == k.src_ip)
                and (self.dst_ip is None or self.dst_ip == k.dst_ip)
                and (self.src_port is None or self.src_port == k.src_port)
                and (self.dst_port is None or self.dst_port == k.dst_port)
                and (self.protocol is None or self.protocol == k.protocol))

    def render(self) -> str:
        parts = []
        if self.in_port is not None:
            parts.append(f"in_port={self.in_port}")
        for name, mask in (("dst_mac", self.dst_mask), ("src_mac", self.src_mask)):
            value = getattr(self, name)
            if value is not None:
                text = f"{name}={format_mac(value)}"
                if mask != MAC_MASK:
                    text += f"&{format_mac(mask)}"
                parts.append(text)
        if self.dscp is not None:
            parts.append(f"dscp={self.dscp}")
        for name in FLOW_FIELDS:
            value = getattr(self, name)
            if value is not None:
                parts.append(f"{name}={int_to_ip(value) if name.endswith('_ip') else value}")
        return ",".join(parts) or "*"


# -- action primitives -------------------------------------------------------

@dataclass(frozen=True)
class LoadField:
    field: str
    offset: int
    length: int
    reg: int

    def __post_init__(self):
        _check_slice(self.field, self.offset, self.length)
        _check_register(self.reg)

    def mnemonic(self) -> str:
        return f"load({self.field}[{self.offset}:{self.offset + self.length}]->r{self.reg})"


@dataclass(frozen=True)
class StoreField:
    reg: int
    field: str
    offset: int
    length: int

    def __post_init__(self):
        _check_slice(self.field, self.offset, self.length)
        _check_register(self.reg)

    def mnemonic(self) -> str:
        return f"store(r{self.reg}->{self.field}[{self.offset}:{self.offset + self.length}])"


@dataclass(frozen=True)
class SetField:
    """Write a constant into ``field``; the whole field unless sliced."""

    field: str
    value: int
    offset: int = 0
    length: Optional[int] = None

    def __post_init__(self):
        if self.length is None:
            object.__setattr__(self, "length", FIELD_WIDTHS.get(self.field, 0) - self.offset)
        _check_slice(self.field, self.offset, self.length)
        if not 0 <= self.value <= _bits(self.length):
            raise ValueError(f"constant {self.value:#x} wider than {self.length} bits")

    def mnemonic(self) -> str:
        return f"set({self.field}[{self.offset}:{self.offset + self.length}]={self.value:#x})"


@dataclass(frozen=True)
class OutputFixed:
    port: int

    def mnemonic(self) -> str:
        return f"output({self.port})"


@dataclass(frozen=True)
class OutputRegister:
    reg: int

    def __post_init__(self):
        _check_register(self.reg)

    def mnemonic(self) -> str:
        return f"output(r{self.reg})"


@dataclass(frozen=True)
class ToControllerAction:
    def mnemonic(self) -> str:
        return "controller"


Action = Union[LoadField, StoreField, SetField, OutputFixed, OutputRegister, ToControllerAction]


@dataclass(frozen=True)
class FlowRule:
    priority: int
    match: MatchSpec
    actions: tuple
    id: Optional[int] = None
    note: str = ""

    @property
    def sort_key(self) -> tuple[int, int]:
        return (-self.priority, self.id)

    def render(self) -> str:
        acts = ";".join(a.mnemonic() for a in self.actions) or "-"
        return f"id={self.id} prio={self.priority} match={self.match.render()} actions={acts}"


# -- processing outcomes -----------------------------------------------------

@dataclass(frozen=True)
class Emit:
    port: int
    packet: SimPacket
    rule: Optional[FlowRule] = None


@dataclass(frozen=True)
class ToController:
    packet: SimPacket
    rule: Optional[FlowRule] = None


@dataclass(frozen=True)
class Drop:
    reason: str
    packet: SimPacket
    rule: Optional[FlowRule] = None


Outcome = Union[Emit, ToController, Drop]


def execute(actions: Sequence[Action], packet: SimPacket,
            ports: Optional[frozenset] = None, rule: Optional[FlowRule] = None) -> Outcome:
    """Run an action program over ``packet`` with fresh zeroed registers.

    Header writes go to a copy.  The first output or controller action ends
    the program.
    """
    regs = [0] * NUM_REGISTERS
    key = packet.flow_key
    values = {
        "dst_mac": packet.dst_mac,
        "src_mac": packet.src_mac,
        "dscp": packet.dscp,
        "src_ip": key.src_ip,
        "dst_ip": key.dst_ip,
        "src_port": key.src_port,
        "dst_port": key.dst_port,
        "protocol": key.protocol,
    }
    dirty = False
    out: Optional[int] = None
    controller = False
    for act in actions:
        kind = type(act)
        if kind is LoadField:
            regs[act.reg] = (values[act.field] >> act.offset) & _bits(act.length)
        elif kind is StoreField:
            mask = _bits(act.length) << act.offset
            values[act.field] = (values[act.field] & ~mask) | ((regs[act.reg] << act.offset) & mask)
            dirty = True
        elif kind is SetField:
            mask = _bits(act.length) << act.offset
            values[act.field] = (values[act.field] & ~mask) | (act.value << act.offset)
            dirty = True
        elif kind is OutputFixed:
            out = act.port
            break
        elif kind is OutputRegister:
            out = regs[act.reg] & 0xFF
            break
        elif kind is ToControllerAction:
            controller = True
            break
        else:
            raise TypeError(f"unknown action {act!r}")

    if dirty:
        new_key = FlowKey(*(values[f] for f in FLOW_FIELDS))
        packet = SimPacket(new_key if new_key != key else key, packet.payload_id,
                           values["dst_mac"], values["src_mac"], values["dscp"], packet.direction)
    if controller:
        return ToController(packet, rule)
    if out is None:
        return Drop("no-output", packet, rule)
    if out == 0 or (ports is not None and out not in ports):
        return Drop("blackhole", packet, rule)
    return Emit(out, packet, rule)


class SwitchState:
    """One switch's flow table.

    Rules are scanned by descending priority, then ascending id; the first
    hit wins.  Rules matching a complete flow key are additionally indexed
    by that key so large per-flow tables stay cheap to search.
    """

    def __init__(self, switch_id: str, default_action: str = "drop",
                 ports: Optional[Iterable[int]] = None, role: str = ""):
        if default_action not in ("drop", "controller"):
            raise ValueError(f"default action must be 'drop' or 'controller', not {default_action!r}")
        self.id = switch_id
        self.default_action = default_action
        self.ports = frozenset(ports) if ports is not None else None
        self.role = role
        self.installs = 0
        self.last_replaced = False
        self._ids = itertools.count(1)
        self._by_id: dict[int, FlowRule] = {}
        self._by_slot: dict[tuple[int, MatchSpec], int] = {}
        self._exact: dict[tuple, list[FlowRule]] = {}
        self._wild: list[FlowRule] = []

    @property
    def rule_count(self) -> int:
        return len(self._by_id)

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self) -> Iterator[FlowRule]:
        return iter(sorted(self._by_id.values(), key=lambda r: r.sort_key))

    def get(self, rule_id: int) -> FlowRule:
        return self._by_id[rule_id]

    def find(self, match: MatchSpec, priority: int) -> Optional[FlowRule]:
        rid = self._by_slot.get((priority, match))
        return None if rid is None else self._by_id[rid]

    def _bucket(self, rule: FlowRule) -> list[FlowRule]:
        ft = rule.match.flow_tuple()
        if ft is None:
            return self._wild
        return self._exact.setdefault(ft, [])

    def install(self, rule: FlowRule) -> int:
        """Add ``rule``; an identical (priority, match) slot is replaced in place."""
        self.installs += 1
        slot = (rule.priority, rule.match)
        old_id = self._by_slot.get(slot)
        self.last_replaced = old_id is not None
        if old_id is not None:
            self._unlink(self._by_id[old_id])
        rule = FlowRule(rule.priority, rule.match, rule.actions,
                        old_id if old_id is not None else next(self._ids), rule.note)
        self._by_id[rule.id] = rule
        self._by_slot[slot] = rule.id
        bucket = self._bucket(rule)
        keys = [r.sort_key for r in bucket]
        bucket.insert(bisect.bisect(keys, rule.sort_key), rule)
        return rule.id

    def _unlink(self, rule: FlowRule) -> None:
        bucket = self._bucket(rule)
        bucket.remove(rule)
        ft = rule.match.flow_tuple()
        if ft is not None and not bucket:
            del self._exact[ft]

    def remove(self, rule_id: int) -> FlowRule:
        rule = self._by_id.pop(rule_id)
        del self._by_slot[(rule.priority, rule.match)]
        self._unlink(rule)
        return rule

    def lookup(self, in_port: Optional[int], packet: SimPacket) -> Optional[FlowRule]:
        best = None
        for rule in self._exact.get(packet.flow_key, ()):
            if rule.match.matches(in_port, packet):
                best = rule
                break
        for rule in self._wild:
            if best is not None and rule.sort_key > best.sort_key:
                break
            if rule.match.matches(in_port, packet):
                return rule
        return best

    def process(self, in_port: Optional[int], packet: SimPacket) -> Outcome:
        rule = self.lookup(in_port, packet)
        if rule is None:
            if self.default_action == "controller":
                return ToController(packet)
            return Drop("table-miss", packet)
        return execute(rule.actions, packet, self.ports, rule)

    def dump(self) -> list[str]:
        return [f"{self.id} {rule.render()}" for rule in self]


def install_rule(switch: SwitchState, rule: FlowRule) -> int:
    return switch.install(rule)


def process(switch: SwitchState, in_port: Optional[int], packet: SimPacket) -> Outcome:
    return switch.process(in_port, packet)


# -- edge programs -----------------------------------------------------------

def octet_shift_actions(out_port: Optional[int] = None) -> tuple:
    """Shift the destination right one octet and output on the octet removed.

    With ``out_port`` the removed octet is discarded and the packet goes to
    that fixed port instead (destination-encoding rewrite rules).
    """
    acts = []
    if out_port is None:
        acts.append(LoadField("dst_mac", 0, 8, 0))
    acts += [
        LoadField("dst_mac", 8, 40, 1),
        StoreField(1, "dst_mac", 0, 40),
        SetField("dst_mac", 0, 40, 8),
    ]
    acts.append(OutputRegister(0) if out_port is None else OutputFixed(out_port))
    return tuple(acts)


def nibble_shift_actions() -> tuple:
    return (
        LoadField("dst_mac", 0, 4, 0),
        LoadField("dst_mac", 4, 44, 1),
        StoreField(1, "dst_mac", 0, 44),
        SetField("dst_mac", 0, 44, 4),
        OutputRegister(0),
    )


def swap_actions() -> tuple:
    """Move the source address into the destination and clear the source."""
    return (
        LoadField("src_mac", 0, 48, 1),
        StoreField(1, "dst_mac", 0, 48),
        SetField("src_mac", 0),
    )


SWAP_MATCH = MatchSpec(dst_mac=SWAP, dst_mask=0xFF)


def compile_edge_shift_program(mode: str) -> list[tuple[MatchSpec, tuple]]:
    """Edge logic for ``mode`` as (match, actions) pairs, highest priority first.

    The octet and nibble layouts need a single catch-all rule.  The extended
    layout has a branch on the 0xfe marker, which a flat action list cannot
    express, so it compiles to a second, more specific rule that performs
    the swap before shifting.
    """
    if mode == "octet":
        return [(MatchSpec(), octet_shift_actions())]
    if mode == "nibble":
        return [(MatchSpec(), nibble_shift_actions())]
    if mode == "extended":
        return [(SWAP_MATCH, swap_actions() + octet_shift_actions()),
                (MatchSpec(), octet_shift_actions())]
    raise ValueError(f"unknown edge mode {mode!r}")


def dump_rules(switches: Iterable[SwitchState]) -> str:
    lines: list[str] = []
    for sw in switches:
        lines.extend(sw.dump())
    return "\n".join(lines) + ("\n" if lines else "")

