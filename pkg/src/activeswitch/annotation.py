"""Hop paths encoded into Ethernet address fields.

Three layouts are supported:

* octet:    one 8-bit egress port per hop, up to 5 hops in the destination
            address, terminated by the 0xff host sentinel.
* nibble:   one 4-bit egress port per hop, up to 10 hops, same sentinel.
* extended: octet layout split over destination and source addresses for
            paths of 6 to 10 hops; a 0xfe octet in the destination tells the
            switch to move the source address into the destination.

Octet 0 is the least significant byte of the address, i.e. the last one in
its textual form.  Hops are consumed from the least significant end.
"""
from __future__ import annotations

import re
from typing import NamedTuple, Sequence

MAC_BITS = 48
MAC_MASK = (1 << MAC_BITS) - 1

EXHAUSTED = 0x00
SWAP = 0xFE
HOST = 0xFF
RESERVED_OCTETS = frozenset({EXHAUSTED, SWAP, HOST})
RESERVED_NIBBLES = frozenset({0x0, 0xF})

MAX_OCTET_HOPS = 5
MAX_EXTENDED_HOPS = 10
MAX_NIBBLE_HOPS = 10

MODES = ("octet", "nibble", "extended")

_MAC_RE = re.compile(r"^[0-9a-fA-F]{2}(:[0-9a-fA-F]{2}){5}$")


class AnnotationError(ValueError):
    pass


class PathTooLong(AnnotationError):
    pass


class ReservedPort(AnnotationError):
    pass


class MalformedAnnotation(AnnotationError):
    """No host sentinel is reachable within the layout's capacity."""


class NotForwarding(AnnotationError):
    """The low octet (or nibble) is a sentinel rather than a port.

    ``value`` holds the offending octet/nibble so callers can tell delivery
    (0xff), exhaustion (0x00) and the extended-mode swap marker apart.
    """

    def __init__(self, value: int, annotation: int):
        self.value = value
        self.annotation = annotation
        super().__init__(f"low bits {value:#x} of {format_mac(annotation)} are not a port")

    @property
    def reason(self) -> str:
        if self.value == EXHAUSTED:
            return "exhausted"
        if self.value in (HOST, 0xF):
            return "deliver"
        return "swap"


def format_mac(value: int) -> str:
    return ":".join(f"{b:02x}" for b in int(value).to_bytes(6, "big"))


def parse_mac(text: str) -> "MacAddress":
    if not _MAC_RE.match(text.strip()):
        raise ValueError(f"not a MAC address: {text!r}")
    return MacAddress(int(text.strip().replace(":", ""), 16))


class MacAddress(int):
    """A 48-bit address.  Compares and hashes as the underlying integer."""

    __slots__ = ()

    def __new__(cls, value: "int | str" = 0):
        if isinstance(value, str):
            return parse_mac(value)
        value = int(value)
        if not 0 <= value <= MAC_MASK:
            raise ValueError(f"{value:#x} does not fit in 48 bits")
        return super().__new__(cls, value)

    parse = staticmethod(parse_mac)

    def __str__(self) -> str:
        return format_mac(self)

    def __repr__(self) -> str:
        return f"MacAddress('{format_mac(self)}')"

    @property
    def low_octet(self) -> int:
        return self & 0xFF


ZERO_MAC = MacAddress(0)
HOST_MAC = MacAddress(HOST)


class AnnotationPair(NamedTuple):
    dst: MacAddress
    src: MacAddress


def _check_terminal(terminal: int) -> None:
    # a segment may end in the host sentinel, a re-annotation index, or zero
    if not 0 <= terminal <= 0xFF or terminal == SWAP:
        raise ReservedPort(f"terminal octet {terminal:#x} is not allowed")


def _check_octet_ports(path: Sequence[int]) -> None:
    for hop in path:
        if not 0 <= hop <= 0xFF:
            raise ReservedPort(f"port {hop} does not fit in an octet")
        if hop in RESERVED_OCTETS:
            raise ReservedPort(f"port {hop:#x} is reserved")


def encode_octet_path(path: Sequence[int], terminal: int = HOST) -> MacAddress:
    """Fold ``path`` into a destination address, first hop in the low octet.

    ``terminal`` is what remains once every hop is consumed; the default is
    the host sentinel.  Re-annotation uses a table index here instead.
    """
    if len(path) > MAX_OCTET_HOPS:
        raise PathTooLong(f"{len(path)} hops exceed the {MAX_OCTET_HOPS}-hop octet layout")
    _check_octet_ports(path)
    _check_terminal(terminal)
    value = terminal
    for hop in reversed(path):
        value = ((value << 8) & MAC_MASK) | hop
    return MacAddress(value)


def shift_octet(annotation: int) -> tuple[int, MacAddress]:
    port = annotation & 0xFF
    if port in RESERVED_OCTETS:
        raise NotForwarding(port, annotation)
    return port, MacAddress(annotation >> 8)


def encode_nibble_path(path: Sequence[int]) -> MacAddress:
    if len(path) > MAX_NIBBLE_HOPS:
        raise PathTooLong(f"{len(path)} hops exceed the {MAX_NIBBLE_HOPS}-hop nibble layout")
    for hop in path:
        if not 0 <= hop <= 0xF:
            raise ReservedPort(f"port {hop} does not fit in a nibble")
        if hop in RESERVED_NIBBLES:
            raise ReservedPort(f"nibble {hop:#x} is reserved")
    value = HOST
    for hop in reversed(path):
        value = ((value << 4) & MAC_MASK) | hop
    return MacAddress(value)


def shift_nibble(annotation: int) -> tuple[int, MacAddress]:
    port = annotation & 0xF
    if port in RESERVED_NIBBLES:
        raise NotForwarding(port, annotation)
    return port, MacAddress(annotation >> 4)


def encode_extended_path(path: Sequence[int], terminal: int = HOST) -> AnnotationPair:
    if len(path) > MAX_EXTENDED_HOPS:
        raise PathTooLong(f"{len(path)} hops exceed the {MAX_EXTENDED_HOPS}-hop extended layout")
    if len(path) <= MAX_OCTET_HOPS:
        return AnnotationPair(encode_octet_path(path, terminal), ZERO_MAC)
    _check_octet_ports(path)
    dst = SWAP
    for hop in reversed(path[:MAX_OCTET_HOPS]):
        dst = (dst << 8) | hop
    return AnnotationPair(MacAddress(dst), encode_octet_path(path[MAX_OCTET_HOPS:], terminal))


def step_extended(dst: int, src: int) -> tuple[int, AnnotationPair]:
    """One switch traversal in the extended layout."""
    if dst & 0xFF == SWAP:
        dst, src = src, 0
        if dst & 0xFF == SWAP:
            raise MalformedAnnotation(f"swap marker in both halves of {format_mac(dst)}")
    port, rest = shift_octet(dst)
    return port, AnnotationPair(rest, MacAddress(src))


def decode_path(annotation, mode: str = "octet", terminal: int = HOST) -> list[int]:
    """Consume an annotation hop by hop and return the emitted ports.

    ``annotation`` is a single address for the octet and nibble layouts and
    an :class:`AnnotationPair` (or ``(dst, src)`` tuple) for the extended
    layout; a bare address is accepted there too, with a zero source.
    """
    if mode == "extended":
        if isinstance(annotation, tuple):
            dst, src = annotation
        else:
            dst, src = annotation, 0
        ports: list[int] = []
        for _ in range(MAX_EXTENDED_HOPS + 1):
            if dst == terminal and src == 0:
                return ports
            try:
                port, (dst, src) = step_extended(dst, src)
            except NotForwarding as exc:
                raise MalformedAnnotation(f"stuck at {format_mac(exc.annotation)}") from exc
            ports.append(port)
        raise MalformedAnnotation("no sentinel within 10 hops")

    if mode == "octet":
        step, capacity = shift_octet, MAX_OCTET_HOPS
    elif mode == "nibble":
        step, capacity = shift_nibble, MAX_NIBBLE_HOPS
    else:
        raise ValueError(f"unknown annotation mode {mode!r}")
    value = int(annotation)
    ports = []
    for _ in range(capacity + 1):
        if value == terminal:
            return ports
        try:
            port, value = step(value)
        except NotForwarding as exc:
            raise MalformedAnnotation(f"stuck at {format_mac(exc.annotation)}") from exc
        ports.append(port)
    raise MalformedAnnotation(f"no sentinel within {capacity} hops")
