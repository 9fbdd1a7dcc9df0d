"""Deterministic model of the node's egress packet path.

A packet leaves the pod, crosses the veth pair and the bridge, may get its
fwmark written at the mangle/PREROUTING point, is VXLAN-style encapsulated,
and reaches the physical interface. The mark is kernel metadata: it never
appears in the wire bytes, and the inner overlay bytes ride through the
encapsulation untouched. That pairing (mark visible to filters, packet bytes
unmodified) is exactly what the enforcement design relies on.
"""
from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field

from .emulator.core import DeliveredPacket

INNER_MAGIC = b"OVL1"
OUTER_MAGIC = b"VXL1"

#: fixed hop order on the egress side
HOPS = ("pod-eth0", "veth", "cni0", "mark-point", "flannel.0", "phys-if")

# Outer-header constants; nothing downstream reads them, they only shape the
# encapsulated byte layout.
OUTER_SRC = "192.168.10.11"
OUTER_DST = "192.168.10.12"
VXLAN_ID = 42

MARK_MAX = 0xFFFFFFFF


def _ip4(address: str) -> bytes:
    return int(ipaddress.IPv4Address(address)).to_bytes(4, "big")


@dataclass
class SimPacket:
    """One packet plus its kernel-side metadata.

    ``mark`` and ``trace`` are metadata; serialization functions never touch
    them. ``payload`` is the application bytes inside the overlay packet.
    """

    payload: bytes
    overlay_src: str
    overlay_dst: str
    mark: int = 0
    encapsulated: bool = False
    outer_header: dict | None = None
    trace: tuple = field(default_factory=tuple)  # ((hop, mark), ...) once traversed


def serialize_inner(packet: SimPacket) -> bytes:
    """Wire bytes of the overlay packet. The mark is deliberately absent."""
    return (
        INNER_MAGIC
        + _ip4(packet.overlay_src)
        + _ip4(packet.overlay_dst)
        + struct.pack(">I", len(packet.payload))
        + packet.payload
    )


def serialize_outer(packet: SimPacket) -> bytes:
    """Wire bytes of the encapsulated packet: outer header + inner bytes."""
    if not packet.encapsulated or packet.outer_header is None:
        raise ValueError("packet is not encapsulated")
    outer = packet.outer_header
    inner = serialize_inner(packet)
    return (
        OUTER_MAGIC
        + _ip4(outer["src"])
        + _ip4(outer["dst"])
        + struct.pack(">I", outer["vxlan_id"])
        + struct.pack(">I", len(inner))
        + inner
    )


def inner_bytes_of(outer_bytes: bytes) -> bytes:
    """Extract the encapsulated overlay packet from outer wire bytes."""
    if outer_bytes[:4] != OUTER_MAGIC:
        raise ValueError("not an encapsulated packet")
    (length,) = struct.unpack(">I", outer_bytes[16:20])
    return outer_bytes[20 : 20 + length]


@dataclass(frozen=True)
class NodePath:
    """The fixed egress hop sequence plus the mark rules installed on it."""

    phys_if: str = "eth0"
    mark_rules: tuple = ()

    @property
    def hops(self):
        return HOPS


def traverse(packet: SimPacket, path: NodePath) -> SimPacket:
    """Carry a packet across the whole egress path.

    At the mark point, the first rule whose source matches writes its mark
    value through its mask (bits outside the mask are preserved, so other
    software's reserved bits survive). Encapsulation happens at the VXLAN
    device; the mark rides along as metadata. The input packet is not
    mutated.
    """
    if packet.encapsulated:
        raise ValueError("packet is already encapsulated")
    mark = packet.mark
    encapsulated = False
    outer_header = None
    trace = []
    for hop in HOPS:
        if hop == "mark-point":
            for rule in path.mark_rules:
                if rule.match_source == packet.overlay_src:
                    mark = (mark & ~rule.set_mark_mask & MARK_MAX) | rule.set_mark_value
                    break
        elif hop == "flannel.0":
            encapsulated = True
            outer_header = {"src": OUTER_SRC, "dst": OUTER_DST, "vxlan_id": VXLAN_ID}
        trace.append((hop, mark))
    return SimPacket(
        payload=packet.payload,
        overlay_src=packet.overlay_src,
        overlay_dst=packet.overlay_dst,
        mark=mark,
        encapsulated=encapsulated,
        outer_header=outer_header,
        trace=tuple(trace),
    )


def end_to_end(
    packet: SimPacket, path: NodePath, emulator, send_time_us: int = 0
) -> DeliveredPacket:
    """Traverse, classify by the resulting mark, transmit through the flow."""
    out = traverse(packet, path)
    size = len(serialize_inner(packet))
    where = emulator.classify(out.mark)
    return emulator.transmit(where.session_id, where.qfi, send_time_us, size)
