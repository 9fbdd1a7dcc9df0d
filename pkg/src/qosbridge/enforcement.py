"""Reversible mark/classifier enforcement plans.

A plan turns one pod binding into exactly two metadata-only steps: a mangle/
PREROUTING rule that writes the pod's mark into the free bits of packets from
the pod's overlay source address, and an fw classifier filter on the physical
interface steering marked packets into the pod's QoS flow. Marks are always
written and matched in value/mask form over the space's free mask, so bits
reserved by other software are read-modify-write preserved. Egress only; no
step ever touches packet bytes.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field

from .errors import BackendFailure, IncompleteBinding

log = logging.getLogger(__name__)

MARK_MAX = 0xFFFFFFFF


def _check_value_mask(value: int, mask: int) -> None:
    if not 0 < mask <= MARK_MAX:
        raise ValueError(f"mask must be a nonzero 32-bit value, got {mask:#x}")
    if not 0 < value <= MARK_MAX:
        raise ValueError(f"mark must be a nonzero 32-bit value, got {value:#x}")
    if value & ~mask:
        raise ValueError(f"mark {value:#x} uses bits outside mask {mask:#x}")


@dataclass(frozen=True)
class MarkRuleSpec:
    """mangle/PREROUTING rule: mark egress packets from one pod source IP."""

    match_source: str
    set_mark_value: int
    set_mark_mask: int
    table: str = field(default="mangle", init=False)
    chain: str = field(default="PREROUTING", init=False)

    def __post_init__(self):
        if not self.match_source:
            raise ValueError("mark rule needs a source address")
        _check_value_mask(self.set_mark_value, self.set_mark_mask)


@dataclass(frozen=True)
class FilterSpec:
    """fw classifier filter on the physical interface: mark -> QoS flow."""

    attach_interface: str
    match_mark: int
    match_mask: int
    session_id: str
    qfi: int
    prio: int = 1
    classifier: str = field(default="fw", init=False)

    def __post_init__(self):
        if not self.attach_interface:
            raise ValueError("filter needs an interface to attach to")
        _check_value_mask(self.match_mark, self.match_mask)
        if self.qfi <= 0:
            raise ValueError(f"qfi must be a positive integer, got {self.qfi}")


@dataclass(frozen=True)
class EnforcementPlan:
    steps: tuple = ()


class ApplyReceipt:
    """Backend handles for the applied steps, in application order."""

    def __init__(self, pairs):
        self.pairs = tuple(pairs)  # (handle, spec) in apply order
        self.reverted = False

    @property
    def handles(self):
        return tuple(handle for handle, _ in self.pairs)


def build_plan(binding, free_mask: int, phys_if: str) -> EnforcementPlan:
    """Derive the two-step plan for a complete binding.

    ``binding`` needs ``pod_ip``, ``mark``, ``pdu_session_id`` and ``qfi``;
    anything missing is an incomplete binding.
    """
    missing = [
        name
        for name in ("pod_ip", "mark", "pdu_session_id", "qfi")
        if getattr(binding, name, None) in (None, "")
    ]
    if missing:
        raise IncompleteBinding(f"binding is missing {', '.join(missing)}")
    rule = MarkRuleSpec(
        match_source=binding.pod_ip,
        set_mark_value=binding.mark,
        set_mark_mask=free_mask,
    )
    filt = FilterSpec(
        attach_interface=phys_if,
        match_mark=binding.mark,
        match_mask=free_mask,
        session_id=binding.pdu_session_id,
        qfi=binding.qfi,
    )
    return EnforcementPlan(steps=(rule, filt))


def apply(plan: EnforcementPlan, backend) -> ApplyReceipt:
    """Apply all steps in order; on failure at step k, steps 1..k-1 are undone."""
    applied: list[tuple[str, object]] = []
    for index, spec in enumerate(plan.steps):
        try:
            handle = backend.apply_step(spec)
        except BackendFailure as exc:
            for done_handle, done_spec in reversed(applied):
                backend.revert_step(done_handle, done_spec)
            raise BackendFailure(
                f"apply failed at step {index}: {exc.msg}", exc.details, step_index=index
            ) from exc
        applied.append((handle, spec))
    return ApplyReceipt(applied)


def revert(receipt: ApplyReceipt, backend) -> None:
    """Undo an applied plan in reverse order; repeat calls are no-ops."""
    if receipt.reverted:
        return
    for handle, spec in reversed(receipt.pairs):
        backend.revert_step(handle, spec)
    receipt.reverted = True


def _render_step(spec) -> str:
    if isinstance(spec, MarkRuleSpec):
        return (
            f"iptables -t {spec.table} -A {spec.chain} -s {spec.match_source}/32 "
            f"-j MARK --set-xmark {spec.set_mark_value:#x}/{spec.set_mark_mask:#x}"
        )
    if isinstance(spec, FilterSpec):
        return (
            f"tc filter add dev {spec.attach_interface} parent 1: protocol all "
            f"prio {spec.prio} handle {spec.match_mark:#x}/{spec.match_mask:#x} "
            f"fw flowid 1:{10 + spec.qfi}"
        )
    raise TypeError(f"unrenderable step {spec!r}")


def _render_revert_step(spec) -> str:
    if isinstance(spec, MarkRuleSpec):
        return (
            f"iptables -t {spec.table} -D {spec.chain} -s {spec.match_source}/32 "
            f"-j MARK --set-xmark {spec.set_mark_value:#x}/{spec.set_mark_mask:#x}"
        )
    if isinstance(spec, FilterSpec):
        return (
            f"tc filter del dev {spec.attach_interface} parent 1: protocol all "
            f"prio {spec.prio} handle {spec.match_mark:#x}/{spec.match_mask:#x} fw"
        )
    raise TypeError(f"unrenderable step {spec!r}")


def render_commands(plan: EnforcementPlan) -> list[str]:
    """Exact command text for each step; format pinned in docs/command-grammar.md."""
    return [_render_step(spec) for spec in plan.steps]


def render_revert_commands(plan: EnforcementPlan) -> list[str]:
    return [_render_revert_step(spec) for spec in reversed(plan.steps)]


class SimBackend:
    """In-memory backend; the one exercised by the test and acceptance suites."""

    def __init__(self):
        self._applied: dict[str, object] = {}
        self._seq = 0
        self._lock = threading.Lock()

    def apply_step(self, spec) -> str:
        with self._lock:
            if spec in self._applied.values():
                raise BackendFailure(f"step already applied: {spec}")
            self._seq += 1
            handle = f"h{self._seq}"
            self._applied[handle] = spec
            return handle

    def revert_step(self, handle: str, spec) -> None:
        with self._lock:
            if handle not in self._applied:
                log.warning("revert of %s found nothing to remove (drift?)", handle)
                return
            self._applied.pop(handle)

    def has_step(self, spec) -> bool:
        with self._lock:
            return spec in self._applied.values()

    def applied_steps(self):
        with self._lock:
            return dict(self._applied)

    def mark_rules(self) -> list[MarkRuleSpec]:
        with self._lock:
            return [s for s in self._applied.values() if isinstance(s, MarkRuleSpec)]

    def dump_state(self) -> str:
        """Canonical sorted text of everything applied."""
        with self._lock:
            lines = sorted(_render_step(spec) for spec in self._applied.values())
        return "\n".join(lines) + ("\n" if lines else "")


class ShellBackend:
    """Renders commands for a real node.

    By default commands are only recorded (dry run); pass ``runner`` (a
    callable taking the command string) to execute them. Never exercised
    against a live kernel in CI.
    """

    def __init__(self, runner=None):
        self._runner = runner
        self._applied: dict[str, object] = {}
        self._seq = 0
        self._lock = threading.Lock()
        self.issued: list[str] = []

    def _run(self, command: str) -> None:
        self.issued.append(command)
        if self._runner is not None:
            self._runner(command)

    def apply_step(self, spec) -> str:
        with self._lock:
            if spec in self._applied.values():
                raise BackendFailure(f"step already applied: {spec}")
            try:
                self._run(_render_step(spec))
            except Exception as exc:
                raise BackendFailure(f"command failed: {exc}") from exc
            self._seq += 1
            handle = f"h{self._seq}"
            self._applied[handle] = spec
            return handle

    def revert_step(self, handle: str, spec) -> None:
        with self._lock:
            if handle not in self._applied:
                log.warning("revert of %s found nothing to remove (drift?)", handle)
                return
            try:
                self._run(_render_revert_step(spec))
            except Exception as exc:
                raise BackendFailure(f"command failed: {exc}") from exc
            self._applied.pop(handle)

    def has_step(self, spec) -> bool:
        with self._lock:
            return spec in self._applied.values()

    def applied_steps(self):
        with self._lock:
            return dict(self._applied)

    def mark_rules(self) -> list[MarkRuleSpec]:
        with self._lock:
            return [s for s in self._applied.values() if isinstance(s, MarkRuleSpec)]

    def dump_state(self) -> str:
        with self._lock:
            lines = sorted(_render_step(spec) for spec in self._applied.values())
        return "\n".join(lines) + ("\n" if lines else "")
