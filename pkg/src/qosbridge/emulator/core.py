"""In-memory 5G network emulator built around a qdisc/class/filter tree.

Clients create radio links, PDU sessions, QoS flows, and fwmark filters; the
tree realizes each flow as a class under one root qdisc, carrying a delay and
an optional token-bucket rate limit. Packets are pure metadata: classification
reads the fwmark, transmission computes a virtual-time arrival, and payload
bytes are never touched.

Time is integer microseconds and token state integer micro-bytes throughout,
so identical inputs give identical outputs on the scalar and batch paths.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .._kernels import classify_marks, shaped_arrivals, shaper_step
from ..errors import Conflict, DependencyViolation, NotFound

MARK_MAX = 0xFFFFFFFF

DEFAULT_CLASS = "1:1"
#: bucket depth when a rate-limited flow states no averaging window
DEFAULT_WINDOW_MS = 2000

# 1 kbps = 125 bytes/s; micro-byte token granularity (matches the kernels).
BYTES_PER_S_PER_KBPS = 125
UBYTES_PER_BYTE = 1_000_000


@dataclass
class RadioLink:
    id: str
    state: str = "up"

    def to_json(self) -> dict:
        return {"id": self.id, "state": self.state}


@dataclass
class PduSession:
    id: str
    radio_link_id: str

    def to_json(self) -> dict:
        return {"id": self.id, "radio_link_id": self.radio_link_id}


@dataclass
class QosFlow:
    """One QoS flow and its class in the tree.

    Configuration is immutable after creation (delete and recreate to
    change); ``tokens_ub``/``clock_us`` are the live shaper state.
    """

    id: str
    session_id: str
    qfi: int
    five_qi: int
    delay_us: int
    rate_kbps: int | float | None
    rate_bytes_per_s: int  # 0 = unlimited
    window_ms: int | None
    cap_ub: int
    class_minor: int
    tokens_ub: int = 0
    clock_us: int = 0

    @property
    def class_handle(self) -> str:
        return f"1:{self.class_minor}"

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "session_id": self.session_id,
            "qfi": self.qfi,
            "five_qi": self.five_qi,
            "delay_ms": _us_to_ms(self.delay_us),
            "rate_kbps": self.rate_kbps,
            "averaging_window_ms": self.window_ms,
            "class_handle": self.class_handle,
        }


@dataclass
class MarkFilter:
    id: str
    prio: int
    match_mark: int
    match_mask: int
    session_id: str
    qfi: int

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "prio": self.prio,
            "mark": self.match_mark,
            "mask": self.match_mask,
            "session_id": self.session_id,
            "qfi": self.qfi,
        }


@dataclass(frozen=True)
class Classification:
    """Where a mark lands: a flow's (session, qfi) or the default class."""

    session_id: str | None
    qfi: int | None
    class_handle: str

    @property
    def is_default(self) -> bool:
        return self.session_id is None

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "qfi": self.qfi,
            "class_handle": self.class_handle,
        }


@dataclass(frozen=True)
class DeliveredPacket:
    send_time_us: int
    arrival_time_us: int
    session_id: str | None
    qfi: int | None
    class_handle: str

    def to_json(self) -> dict:
        return {
            "send_time_us": self.send_time_us,
            "arrival_time_us": self.arrival_time_us,
            "session_id": self.session_id,
            "qfi": self.qfi,
            "class_handle": self.class_handle,
        }


def _us_to_ms(us: int):
    ms = us / 1000
    return int(ms) if ms == int(ms) else ms


def _suffix(resource_id: str) -> int:
    return int(resource_id.rsplit("-", 1)[1])


class EmulatorCore:
    """The tree plus lifecycle operations; every method is thread-safe.

    One coarse lock serializes everything. Mutations are transactional:
    all validation happens before the first state change.

    With ``wall_clock=True``, ``transmit`` also sleeps the virtual delay
    away, for live demos; nothing in the test suites uses that mode.
    """

    def __init__(self, wall_clock: bool = False):
        self._lock = threading.RLock()
        self._wall_clock = wall_clock
        self._links: dict[str, RadioLink] = {}
        self._sessions: dict[str, PduSession] = {}
        self._flows: dict[str, QosFlow] = {}
        self._filters: list[MarkFilter] = []
        self._seq = {"rl": 0, "ps": 0, "fl": 0, "ft": 0}
        # Default-class shaper state kept for symmetry; it never delays.
        self._default_clock_us = 0

    def _next_id(self, kind: str) -> str:
        self._seq[kind] += 1
        return f"{kind}-{self._seq[kind]}"

    # -- lifecycle ---------------------------------------------------------

    def create_radio_link(self) -> RadioLink:
        with self._lock:
            link = RadioLink(self._next_id("rl"))
            self._links[link.id] = link
            return link

    def delete_radio_link(self, link_id: str, idempotent: bool = False, cascade: bool = False):
        with self._lock:
            if link_id not in self._links:
                if idempotent:
                    return
                raise NotFound(f"radio link {link_id} does not exist")
            dependents = [s.id for s in self._sessions.values() if s.radio_link_id == link_id]
            if dependents and not cascade:
                raise DependencyViolation(
                    f"radio link {link_id} still carries sessions {sorted(dependents)}"
                )
            for session_id in dependents:
                self.delete_pdu_session(session_id, cascade=True)
            del self._links[link_id]

    def create_pdu_session(self, radio_link_id: str) -> PduSession:
        with self._lock:
            link = self._links.get(radio_link_id)
            if link is None:
                raise NotFound(f"radio link {radio_link_id} does not exist")
            if link.state != "up":
                raise DependencyViolation(f"radio link {radio_link_id} is not up")
            session = PduSession(self._next_id("ps"), radio_link_id)
            self._sessions[session.id] = session
            return session

    def delete_pdu_session(self, session_id: str, idempotent: bool = False, cascade: bool = False):
        with self._lock:
            if session_id not in self._sessions:
                if idempotent:
                    return
                raise NotFound(f"PDU session {session_id} does not exist")
            flows = [f for f in self._flows.values() if f.session_id == session_id]
            if flows and not cascade:
                raise DependencyViolation(
                    f"PDU session {session_id} still carries {len(flows)} flow(s)"
                )
            for flow in flows:
                self.delete_qos_flow(flow.id, cascade=True)
            del self._sessions[session_id]

    def create_qos_flow(
        self,
        session_id: str,
        five_qi: int,
        delay_ms,
        rate_kbps=None,
        qfi: int | None = None,
        averaging_window_ms: int | None = None,
    ) -> QosFlow:
        """Create a flow in a session; QFI defaults to the lowest unused one.

        The emulator treats ``five_qi`` as opaque metadata; delay and rate
        come from the request, not from any built-in table.
        """
        with self._lock:
            if session_id not in self._sessions:
                raise NotFound(f"PDU session {session_id} does not exist")
            if not isinstance(five_qi, int) or not 1 <= five_qi <= 255:
                raise ValueError(f"five_qi must be an integer in 1..255, got {five_qi!r}")
            delay_us = int(round(float(delay_ms) * 1000))
            if delay_us < 0:
                raise ValueError(f"delay_ms may not be negative, got {delay_ms!r}")
            in_session = {f.qfi for f in self._flows.values() if f.session_id == session_id}
            if qfi is None:
                qfi = 1
                while qfi in in_session:
                    qfi += 1
            else:
                if not isinstance(qfi, int) or qfi <= 0:
                    raise ValueError(f"qfi must be a positive integer, got {qfi!r}")
                if qfi in in_session:
                    raise Conflict(f"qfi {qfi} already exists in session {session_id}")
            if rate_kbps is None:
                rate_bytes_per_s = 0
                cap_ub = 0
                window_ms = None
            else:
                rate_bytes_per_s = int(round(float(rate_kbps) * BYTES_PER_S_PER_KBPS))
                if rate_bytes_per_s <= 0:
                    raise ValueError(f"rate_kbps must be positive, got {rate_kbps!r}")
                window_ms = DEFAULT_WINDOW_MS if averaging_window_ms is None else averaging_window_ms
                if not isinstance(window_ms, int) or window_ms <= 0:
                    raise ValueError(f"averaging_window_ms must be positive, got {window_ms!r}")
                # bucket = one window's worth of bytes; full at creation
                cap_ub = rate_bytes_per_s * window_ms * 1000
            flow = QosFlow(
                id=self._next_id("fl"),
                session_id=session_id,
                qfi=qfi,
                five_qi=five_qi,
                delay_us=delay_us,
                rate_kbps=rate_kbps,
                rate_bytes_per_s=rate_bytes_per_s,
                window_ms=window_ms,
                cap_ub=cap_ub,
                class_minor=10 + self._seq["fl"],
                tokens_ub=cap_ub,
            )
            self._flows[flow.id] = flow
            return flow

    def delete_qos_flow(self, flow_id: str, idempotent: bool = False, cascade: bool = False):
        with self._lock:
            flow = self._flows.get(flow_id)
            if flow is None:
                if idempotent:
                    return
                raise NotFound(f"QoS flow {flow_id} does not exist")
            referencing = [
                ft.id for ft in self._filters
                if ft.session_id == flow.session_id and ft.qfi == flow.qfi
            ]
            if referencing and not cascade:
                raise DependencyViolation(
                    f"QoS flow {flow_id} is still targeted by filters {referencing}"
                )
            for filter_id in referencing:
                self.delete_filter(filter_id, idempotent=True)
            del self._flows[flow_id]

    def create_filter(self, mark: int, mask: int, session_id: str, qfi: int) -> MarkFilter:
        with self._lock:
            if not 0 < mask <= MARK_MAX:
                raise ValueError(f"mask must be a nonzero 32-bit value, got {mask!r}")
            if not 0 <= mark <= MARK_MAX or mark & mask != mark:
                raise ValueError(f"mark {mark:#x} must lie within mask {mask:#x}")
            if self._find_flow(session_id, qfi) is None:
                raise NotFound(f"no QoS flow at session {session_id} qfi {qfi}")
            for existing in self._filters:
                if existing.match_mark == mark and existing.match_mask == mask:
                    raise Conflict(
                        f"filter for {mark:#x}/{mask:#x} already exists ({existing.id})"
                    )
            self._seq["ft"] += 1
            filt = MarkFilter(
                id=f"ft-{self._seq['ft']}",
                prio=self._seq["ft"],
                match_mark=mark,
                match_mask=mask,
                session_id=session_id,
                qfi=qfi,
            )
            self._filters.append(filt)
            return filt

    def delete_filter(self, filter_id: str, idempotent: bool = False):
        with self._lock:
            for i, filt in enumerate(self._filters):
                if filt.id == filter_id:
                    del self._filters[i]
                    return
            if not idempotent:
                raise NotFound(f"filter {filter_id} does not exist")

    # -- lookups -----------------------------------------------------------

    def _find_flow(self, session_id: str, qfi: int) -> QosFlow | None:
        for flow in self._flows.values():
            if flow.session_id == session_id and flow.qfi == qfi:
                return flow
        return None

    def list_radio_links(self) -> list[RadioLink]:
        with self._lock:
            return sorted(self._links.values(), key=lambda l: _suffix(l.id))

    def list_pdu_sessions(self) -> list[PduSession]:
        with self._lock:
            return sorted(self._sessions.values(), key=lambda s: _suffix(s.id))

    def list_qos_flows(self) -> list[QosFlow]:
        with self._lock:
            return sorted(self._flows.values(), key=lambda f: f.class_minor)

    def list_filters(self) -> list[MarkFilter]:
        with self._lock:
            return list(self._filters)

    # -- data path ---------------------------------------------------------

    def classify(self, mark: int) -> Classification:
        """First filter (priority order) whose masked mark matches wins."""
        with self._lock:
            for filt in self._filters:
                if mark & filt.match_mask == filt.match_mark:
                    flow = self._find_flow(filt.session_id, filt.qfi)
                    # create_filter checked existence; flow deletion cascades
                    # filters, so a dangling target cannot survive the lock.
                    assert flow is not None
                    return Classification(filt.session_id, filt.qfi, flow.class_handle)
            return Classification(None, None, DEFAULT_CLASS)

    def transmit(
        self,
        session_id: str | None,
        qfi: int | None,
        send_time_us: int,
        size_bytes: int,
    ) -> DeliveredPacket:
        """Run one packet through a flow's class (or the default class).

        Arrival is send time plus the class delay, plus token-bucket queueing
        when a rate limit is set. FIFO per class: a packet never departs
        before its predecessor in the same class.
        """
        with self._lock:
            if size_bytes <= 0:
                raise ValueError(f"size_bytes must be positive, got {size_bytes!r}")
            if session_id is None:
                arrival = send_time_us
                handle = DEFAULT_CLASS
            else:
                flow = self._find_flow(session_id, qfi)
                if flow is None:
                    raise NotFound(f"no QoS flow at session {session_id} qfi {qfi}")
                if flow.rate_bytes_per_s == 0:
                    arrival = send_time_us + flow.delay_us
                else:
                    departure, flow.tokens_ub, flow.clock_us = shaper_step(
                        flow.tokens_ub,
                        flow.clock_us,
                        send_time_us,
                        size_bytes,
                        flow.rate_bytes_per_s,
                        flow.cap_ub,
                    )
                    arrival = departure + flow.delay_us
                handle = flow.class_handle
            delivered = DeliveredPacket(send_time_us, arrival, session_id, qfi, handle)
        if self._wall_clock and delivered.arrival_time_us > delivered.send_time_us:
            time.sleep((delivered.arrival_time_us - delivered.send_time_us) / 1e6)
        return delivered

    def deliver_batch(self, marks, send_us, sizes):
        """Classify and transmit a send-ordered packet batch in one pass.

        Returns ``(arrivals, session_ids, qfis, class_handles)`` as parallel
        sequences (arrivals is an int64 array). Semantically identical to
        ``classify`` + ``transmit`` per packet, but runs on the array kernels.
        """
        marks = np.asarray(marks, dtype=np.uint32)
        send_us = np.asarray(send_us, dtype=np.int64)
        sizes = np.asarray(sizes, dtype=np.int64)
        if not (len(marks) == len(send_us) == len(sizes)):
            raise ValueError("marks, send_us, and sizes must have equal length")
        with self._lock:
            filters = list(self._filters)
            fmarks = np.array([f.match_mark for f in filters], dtype=np.uint32)
            fmasks = np.array([f.match_mask for f in filters], dtype=np.uint32)
            hit = classify_marks(marks, fmarks, fmasks)
            arrivals = np.empty(len(marks), dtype=np.int64)
            session_ids: list[str | None] = [None] * len(marks)
            qfis: list[int | None] = [None] * len(marks)
            handles = [DEFAULT_CLASS] * len(marks)
            default_idx = np.nonzero(hit < 0)[0]
            arrivals[default_idx] = send_us[default_idx]
            for fi in np.unique(hit[hit >= 0]):
                filt = filters[int(fi)]
                flow = self._find_flow(filt.session_id, filt.qfi)
                assert flow is not None
                idx = np.nonzero(hit == fi)[0]
                out, flow.tokens_ub, flow.clock_us = shaped_arrivals(
                    send_us[idx],
                    sizes[idx],
                    flow.rate_bytes_per_s,
                    flow.cap_ub,
                    flow.tokens_ub,
                    flow.clock_us,
                    flow.delay_us,
                )
                arrivals[idx] = out
                for i in idx:
                    session_ids[i] = filt.session_id
                    qfis[i] = filt.qfi
                    handles[i] = flow.class_handle
            return arrivals, session_ids, qfis, handles

    # -- observability -----------------------------------------------------

    def dump_tree(self) -> str:
        """Deterministic text rendering of the whole tree for golden diffs."""
        with self._lock:
            lines = [f"link {l.id} {l.state}" for l in self.list_radio_links()]
            lines += [f"session {s.id} link {s.radio_link_id}" for s in self.list_pdu_sessions()]
            lines.append(f"qdisc 1: root default {DEFAULT_CLASS}")
            lines.append(f"class {DEFAULT_CLASS} default delay 0us rate unlimited")
            for flow in self.list_qos_flows():
                rate = (
                    "rate unlimited"
                    if flow.rate_bytes_per_s == 0
                    else f"rate {flow.rate_kbps:g}kbps window {flow.window_ms}ms"
                )
                lines.append(
                    f"class {flow.class_handle} session {flow.session_id} qfi {flow.qfi} "
                    f"five-qi {flow.five_qi} delay {flow.delay_us}us {rate}"
                )
            for filt in self._filters:
                flow = self._find_flow(filt.session_id, filt.qfi)
                assert flow is not None
                lines.append(
                    f"filter prio {filt.prio} fw {filt.match_mark:#x}/{filt.match_mask:#x} "
                    f"-> session {filt.session_id} qfi {filt.qfi} class {flow.class_handle}"
                )
        return "\n".join(lines) + "\n"
