"""Wrapper that saves and restores L2 headers around a router-style middlebox.

The box has four interfaces.  Traffic from the fabric arrives on the
upstream-outer side and is handed to the inner device with the L2 header
it expects; whatever the inner device emits comes back on the
downstream-inner side, where the saved header is put back before the
packet returns to the fabric.
"""
from __future__ import annotations

from dataclasses import replace
from typing import Iterable, Optional

from .annotation import MacAddress
from .middlebox import FIELD_BITS, MiddleboxInstance
from .packet import FlowKey, SimPacket

ASSOC = "assoc"
DSCP = "dscp"
DEFAULT_BOX_MAC = MacAddress("02:00:00:00:00:0e")


class EncapError(Exception):
    reason = "encap"


class TagPoolExhausted(EncapError):
    reason = "dscp-exhausted"


class ReassociationFailure(EncapError):
    reason = "reassociation"


class EncapBox:
    """Coerces L2 transparency from ``inner``.

    ``mode`` is ``"assoc"`` (save headers under a key built from the flow
    fields named in ``key_fields``) or ``"dscp"`` (save headers under a DSCP
    tag drawn from ``tag_pool``).  The inner device's L2 expectations come
    from its declared own MAC.
    """

    def __init__(self, name: str, inner: MiddleboxInstance, mode: str = ASSOC,
                 key_fields: Iterable[str] = ("src_ip", "src_port", "protocol"),
                 tag_pool: Optional[Iterable[int]] = None, default_dscp: int = 0,
                 box_mac: int = DEFAULT_BOX_MAC):
        if mode not in (ASSOC, DSCP):
            raise ValueError(f"unknown encapsulation mode {mode!r}")
        self.name = name
        self.inner = inner
        self.mode = mode
        self.key_fields = tuple(key_fields)
        bad = set(self.key_fields) - set(FIELD_BITS)
        if bad or not self.key_fields:
            raise ValueError(f"bad key fields {sorted(bad) or 'none'}")
        self.tag_pool = sorted(set(range(64) if tag_pool is None else tag_pool))
        if any(not 0 <= t < 64 for t in self.tag_pool):
            raise ValueError("DSCP tags must lie in 0..63")
        self.default_dscp = default_dscp
        self.box_mac = MacAddress(box_mac)
        self.saved: dict = {}
        self._tag_of: dict[tuple[int, int], int] = {}
        self._users: dict[int, set[FlowKey]] = {}
        self._keys_by_flow: dict[FlowKey, set] = {}

    @property
    def router_mac(self) -> int:
        mac = self.inner.own_mac
        return mac if mac is not None else 0

    def extract(self, key: FlowKey) -> tuple:
        return tuple(getattr(key, f) for f in self.key_fields)

    def live_tags(self) -> list[int]:
        return sorted(self._users)

    def upstream_outer_receive(self, p: SimPacket) -> SimPacket:
        l2 = (p.src_mac, p.dst_mac)
        inward = replace(p, src_mac=self.box_mac, dst_mac=self.router_mac)
        if self.mode == ASSOC:
            k = self.extract(p.flow_key)
            self.saved[k] = l2
            self._keys_by_flow.setdefault(p.flow_key, set()).add(k)
            return inward
        tag = self._tag_of.get(l2)
        if tag is None:
            free = [t for t in self.tag_pool if t not in self.saved]
            if not free:
                raise TagPoolExhausted(
                    f"{self.name}: all {len(self.tag_pool)} tags hold live continuations")
            tag = free[0]
            self._tag_of[l2] = tag
            self.saved[tag] = l2
        self._users.setdefault(tag, set()).add(p.flow_key)
        return replace(inward, dscp=tag)

    def downstream_inner_receive(self, p: SimPacket) -> SimPacket:
        if self.mode == ASSOC:
            k = self.extract(p.flow_key)
            entry = self.saved.get(k)
            if entry is None:
                raise ReassociationFailure(f"{self.name}: no saved headers for {k}")
            src, dst = entry
            return replace(p, src_mac=src, dst_mac=dst)
        entry = self.saved.get(p.dscp)
        if entry is None:
            raise ReassociationFailure(f"{self.name}: no continuation under tag {p.dscp}")
        src, dst = entry
        return replace(p, src_mac=src, dst_mac=dst, dscp=self.default_dscp)

    def traverse(self, p: SimPacket) -> list[SimPacket]:
        inward = self.upstream_outer_receive(p)
        return [self.downstream_inner_receive(q) for q in self.inner.traverse(inward)]

    def flow_ended(self, key: FlowKey) -> None:
        """Forget state held on behalf of ``key`` (as observed at the box)."""
        if self.mode == ASSOC:
            for k in self._keys_by_flow.pop(key, ()):
                self.saved.pop(k, None)
            return
        for tag in [t for t, users in self._users.items() if key in users]:
            users = self._users[tag]
            users.discard(key)
            if not users:
                del self._users[tag]
                l2 = self.saved.pop(tag)
                del self._tag_of[l2]


def upstream_outer_receive(b: EncapBox, p: SimPacket) -> SimPacket:
    return b.upstream_outer_receive(p)


def downstream_inner_receive(b: EncapBox, p: SimPacket) -> SimPacket:
    return b.downstream_inner_receive(p)
