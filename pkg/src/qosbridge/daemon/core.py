"""The QoS daemon: owns allocator, binding store, backend, and emulator client.

``handle_add`` runs the pipeline (map requirement, allocate mark, ensure the
node's radio link and PDU session, create the QoS flow, apply enforcement,
install the emulator filter, commit) under a per-container lock, journaling
each completed step. Any failure unwinds the journal in reverse; a crash
leaves the journal behind, and recovery at the next startup finishes the
unwind. ``handle_del`` is the idempotent inverse with retry-then-drift
semantics: the allocator record never survives a DEL.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass

from .. import enforcement
from .._util import atomic_write_text
from ..emulator.client import (
    HttpEmulatorClient,
    LocalEmulatorClient,
    find_filter,
    find_flow,
)
from ..emulator.core import EmulatorCore
from ..errors import (
    DuplicateContainer,
    EmulatorUnreachable,
    IncompleteBinding,
    NetworkRejection,
    NotFound,
    PersistenceError,
    QosBridgeError,
)
from ..fwmark import FwMarkSpace, default_registry, load_registry
from ..qosmodel import (
    FiveQiProfile,
    ProfileTable,
    QosRequirement,
    default_profile_table,
    load_profile_table,
    map_requirement,
)
from .config import DaemonConfig

log = logging.getLogger(__name__)

STORE_HEADER = "bindings v1"

# Pipeline step names, in order; each is journaled once completed.
STEP_JOURNAL = "journal-written"
STEP_MARK = "mark-allocated"
STEP_SESSION = "session-ensured"
STEP_FLOW = "flow-created"
STEP_PLAN = "plan-applied"
STEP_FILTER = "filter-created"
STEP_COMMIT = "binding-committed"
PIPELINE_STEPS = (
    STEP_JOURNAL,
    STEP_MARK,
    STEP_SESSION,
    STEP_FLOW,
    STEP_PLAN,
    STEP_FILTER,
    STEP_COMMIT,
)


class SimulatedCrash(BaseException):
    """Kills the pipeline the way a process death would.

    Deliberately not an ``Exception`` so the abort handling in
    ``handle_add`` cannot catch it: state is left exactly as a real crash
    would leave it, journal included.
    """


@dataclass(frozen=True)
class FlowBinding:
    """The pod / fwmark / QoS-flow association, one per container."""

    container_id: str
    pod_ip: str
    mark: int
    requirement: QosRequirement
    profile: FiveQiProfile
    radio_link_id: str
    pdu_session_id: str
    qfi: int
    created_at: float

    def to_json(self) -> dict:
        return {
            "container_id": self.container_id,
            "pod_ip": self.pod_ip,
            "mark": self.mark,
            "requirement": self.requirement.to_json(),
            "profile": self.profile.to_json(),
            "radio_link_id": self.radio_link_id,
            "pdu_session_id": self.pdu_session_id,
            "qfi": self.qfi,
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FlowBinding":
        return cls(
            container_id=obj["container_id"],
            pod_ip=obj["pod_ip"],
            mark=obj["mark"],
            requirement=QosRequirement.from_json(obj["requirement"]),
            profile=FiveQiProfile.from_json(obj["profile"]),
            radio_link_id=obj["radio_link_id"],
            pdu_session_id=obj["pdu_session_id"],
            qfi=obj["qfi"],
            created_at=obj["created_at"],
        )

    def dump_json(self) -> dict:
        """Canonical form for state dumps; creation time is wall clock and
        would break replay comparisons, so it stays out."""
        obj = self.to_json()
        del obj["created_at"]
        return obj


class BindingStore:
    """Durable map of live bindings plus the node record and add journals.

    Every mutation rewrites the whole file atomically; at per-node pod
    counts that is cheap and keeps recovery trivial.
    """

    def __init__(self, persistence_path: str | None = None):
        self._path = persistence_path
        self._lock = threading.Lock()
        self._bindings: dict[str, FlowBinding] = {}
        self._node: dict = {"radio_link_id": None, "pdu_session_id": None}
        self._journals: dict[str, dict] = {}
        if self._path and os.path.exists(self._path):
            self._load()

    def _persist_locked(self) -> None:
        if not self._path:
            return
        lines = [STORE_HEADER]
        if self._node["radio_link_id"] or self._node["pdu_session_id"]:
            lines.append("node " + json.dumps(self._node, sort_keys=True))
        for cid in sorted(self._bindings):
            lines.append("binding " + json.dumps(self._bindings[cid].to_json(), sort_keys=True))
        for cid in sorted(self._journals):
            lines.append("journal " + json.dumps(self._journals[cid], sort_keys=True))
        try:
            atomic_write_text(self._path, "\n".join(lines) + "\n")
        except OSError as exc:
            raise PersistenceError(f"could not persist binding store: {exc}") from exc

    def _load(self) -> None:
        with open(self._path) as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != STORE_HEADER:
            raise PersistenceError(f"unrecognized store header in {self._path}")
        for line in lines[1:]:
            if not line.strip():
                continue
            kind, _, payload = line.partition(" ")
            obj = json.loads(payload)
            if kind == "node":
                self._node = obj
            elif kind == "binding":
                binding = FlowBinding.from_json(obj)
                self._bindings[binding.container_id] = binding
            elif kind == "journal":
                self._journals[obj["container_id"]] = obj
            else:
                raise PersistenceError(f"unrecognized store line {line!r}")

    def get(self, container_id: str) -> FlowBinding | None:
        with self._lock:
            return self._bindings.get(container_id)

    def list(self) -> list[FlowBinding]:
        with self._lock:
            return [self._bindings[cid] for cid in sorted(self._bindings)]

    def count(self) -> int:
        with self._lock:
            return len(self._bindings)

    def remove(self, container_id: str) -> None:
        with self._lock:
            if self._bindings.pop(container_id, None) is not None:
                self._persist_locked()

    def node(self) -> dict:
        with self._lock:
            return dict(self._node)

    def set_node(self, radio_link_id, pdu_session_id) -> None:
        with self._lock:
            self._node = {"radio_link_id": radio_link_id, "pdu_session_id": pdu_session_id}
            self._persist_locked()

    def put_journal(self, journal: dict) -> None:
        with self._lock:
            self._journals[journal["container_id"]] = journal
            self._persist_locked()

    def remove_journal(self, container_id: str) -> None:
        with self._lock:
            if self._journals.pop(container_id, None) is not None:
                self._persist_locked()

    def journals(self) -> list[dict]:
        with self._lock:
            return [self._journals[cid] for cid in sorted(self._journals)]

    def commit_binding(self, binding: FlowBinding) -> None:
        """Insert the binding and drop its journal in one durable write."""
        with self._lock:
            self._bindings[binding.container_id] = binding
            self._journals.pop(binding.container_id, None)
            self._persist_locked()

    def dump(self) -> str:
        """Canonical text of the store for state diffs."""
        with self._lock:
            lines = []
            if self._node["radio_link_id"] or self._node["pdu_session_id"]:
                lines.append("node " + json.dumps(self._node, sort_keys=True))
            for cid in sorted(self._bindings):
                lines.append(
                    "binding " + json.dumps(self._bindings[cid].dump_json(), sort_keys=True)
                )
            for cid in sorted(self._journals):
                lines.append("journal " + json.dumps(self._journals[cid], sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class CheckReport:
    """Element-by-element consistency verdict for one container."""

    container_id: str
    expected: bool  # False when no binding exists (vacuous pass)
    elements: tuple = ()  # (name, present) pairs

    @property
    def ok(self) -> bool:
        return all(present for _, present in self.elements)

    @property
    def missing(self) -> list[str]:
        return [name for name, present in self.elements if not present]

    def to_json(self) -> dict:
        return {
            "container_id": self.container_id,
            "expected": self.expected,
            "elements": [[name, present] for name, present in self.elements],
            "ok": self.ok,
            "missing": self.missing,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CheckReport":
        return cls(
            container_id=obj["container_id"],
            expected=obj["expected"],
            elements=tuple((name, present) for name, present in obj["elements"]),
        )


class QosDaemon:
    """One node's coordinator; safe for concurrent callers.

    Per-container operations serialize on a per-container lock; the shared
    structures (allocator, store, backend, emulator) each serialize their own
    mutations, so cross-container requests interleave freely.
    """

    def __init__(
        self,
        config: DaemonConfig | None = None,
        *,
        emulator=None,
        backend=None,
        registry_entries=None,
        profile_table: ProfileTable | None = None,
    ):
        self.config = config or DaemonConfig()
        if registry_entries is None:
            if self.config.registry_path:
                with open(self.config.registry_path) as fh:
                    registry_entries = load_registry(fh.read())
            else:
                registry_entries = default_registry()
        self.space = FwMarkSpace(registry_entries, self.config.fwmark_state_path)
        if profile_table is None:
            if self.config.profile_table_path:
                with open(self.config.profile_table_path) as fh:
                    profile_table = load_profile_table(fh.read())
            else:
                profile_table = default_profile_table()
        self.profile_table = profile_table
        if backend is None:
            backend = (
                enforcement.ShellBackend()
                if self.config.backend == "shell"
                else enforcement.SimBackend()
            )
        self.backend = backend
        if emulator is None:
            if self.config.emulator_url == "local":
                emulator = LocalEmulatorClient(EmulatorCore())
            else:
                emulator = HttpEmulatorClient(self.config.emulator_url)
        self.emulator = emulator
        self.store = BindingStore(self.config.store_path)
        self.phys_if = self.config.phys_if
        self.crash_after: set[str] = set()
        self._teardown_attempts = 3
        self._teardown_backoff_s = 0.1
        self._locks_guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}
        self._node_lock = threading.Lock()
        if self.store.journals():
            self.recover()

    # -- plumbing ----------------------------------------------------------

    def _container_lock(self, container_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(container_id, threading.Lock())

    def _checkpoint(self, step: str) -> None:
        if step in self.crash_after:
            raise SimulatedCrash(step)

    def _ensure_session(self):
        """Create the node's radio link and PDU session on first use."""
        with self._node_lock:
            node = self.store.node()
            link_id = node["radio_link_id"]
            session_id = node["pdu_session_id"]
            created_link = created_session = False
            if link_id is None:
                link_id = self.emulator.create_radio_link()["id"]
                created_link = True
            if session_id is None:
                session_id = self.emulator.create_pdu_session(link_id)["id"]
                created_session = True
            if created_link or created_session:
                self.store.set_node(link_id, session_id)
            return link_id, session_id, created_link, created_session

    def _session_still_needed(self, exclude_container: str | None = None) -> bool:
        if self.store.count() > 0:
            return True
        return any(
            j["container_id"] != exclude_container for j in self.store.journals()
        )

    def _teardown_node_if_idle(self, exclude_container: str | None = None) -> None:
        """Drop the node's session and link once nothing references them."""
        with self._node_lock:
            if self._session_still_needed(exclude_container):
                return
            node = self.store.node()
            if node["pdu_session_id"]:
                self.emulator.delete_pdu_session(
                    node["pdu_session_id"], idempotent=True, cascade=True
                )
            if node["radio_link_id"]:
                self.emulator.delete_radio_link(
                    node["radio_link_id"], idempotent=True, cascade=True
                )
            if node["pdu_session_id"] or node["radio_link_id"]:
                self.store.set_node(None, None)

    def _revert_step_by_spec(self, spec) -> bool:
        """Revert a backend step located by its spec; False if it is gone."""
        for handle, applied in self.backend.applied_steps().items():
            if applied == spec:
                self.backend.revert_step(handle, spec)
                return True
        return False

    def _plan_for(self, pod_ip: str, mark: int, session_id: str, qfi: int):
        binding_view = _PlanView(pod_ip, mark, session_id, qfi)
        return enforcement.build_plan(binding_view, self.space.free_mask, self.phys_if)

    # -- ADD ---------------------------------------------------------------

    def handle_add(self, container_id: str, pod_ip: str, req: QosRequirement) -> FlowBinding:
        if not container_id:
            raise IncompleteBinding("container_id is required")
        if not pod_ip:
            raise IncompleteBinding("pod_ip is required")
        with self._container_lock(container_id):
            if self.store.get(container_id) is not None:
                raise DuplicateContainer(f"container {container_id} already has a binding")
            profile = map_requirement(req, self.profile_table)
            journal = {
                "container_id": container_id,
                "pod_ip": pod_ip,
                "requirement": req.to_json(),
                "steps": [],
            }
            self.store.put_journal(journal)
            self._checkpoint(STEP_JOURNAL)
            try:
                self._run_add_pipeline(journal, profile)
            except Exception:
                self._undo_journal(journal)
                raise
            binding = FlowBinding(
                container_id=container_id,
                pod_ip=pod_ip,
                mark=journal["mark"],
                requirement=req,
                profile=profile,
                radio_link_id=journal["radio_link_id"],
                pdu_session_id=journal["pdu_session_id"],
                qfi=journal["qfi"],
                created_at=time.time(),
            )
            self.store.commit_binding(binding)
            self._checkpoint(STEP_COMMIT)
            return binding

    def _run_add_pipeline(self, journal: dict, profile: FiveQiProfile) -> None:
        def advance(step: str) -> None:
            journal["steps"].append(step)
            self.store.put_journal(journal)
            self._checkpoint(step)

        req = QosRequirement.from_json(journal["requirement"])
        journal["mark"] = self.space.allocate()
        advance(STEP_MARK)

        link_id, session_id, created_link, created_session = self._ensure_session()
        journal["radio_link_id"] = link_id
        journal["pdu_session_id"] = session_id
        journal["created_link"] = created_link
        journal["created_session"] = created_session
        advance(STEP_SESSION)

        try:
            flow = self.emulator.create_qos_flow(
                session_id,
                profile.five_qi,
                delay_ms=profile.packet_delay_budget_ms,
                rate_kbps=req.max_kbps,
                averaging_window_ms=profile.averaging_window_ms,
            )
        except (NetworkRejection, EmulatorUnreachable):
            raise
        except QosBridgeError as exc:
            raise NetworkRejection(f"emulator refused QoS flow creation: {exc.msg}") from exc
        journal["qfi"] = flow["qfi"]
        advance(STEP_FLOW)

        plan = self._plan_for(journal["pod_ip"], journal["mark"], session_id, flow["qfi"])
        enforcement.apply(plan, self.backend)
        advance(STEP_PLAN)

        try:
            self.emulator.create_filter(
                journal["mark"], self.space.free_mask, session_id, flow["qfi"]
            )
        except (NetworkRejection, EmulatorUnreachable):
            raise
        except QosBridgeError as exc:
            raise NetworkRejection(f"emulator refused filter creation: {exc.msg}") from exc
        advance(STEP_FILTER)

    def _undo_journal(self, journal: dict) -> None:
        """Unwind a partially-run add, strictly opposite to acquisition order."""
        steps = set(journal.get("steps", ()))
        mark = journal.get("mark")
        session_id = journal.get("pdu_session_id")
        qfi = journal.get("qfi")
        if STEP_FILTER in steps:
            try:
                filt = find_filter(self.emulator, mark, self.space.free_mask)
                self.emulator.delete_filter(filt["id"], idempotent=True)
            except NotFound:
                log.warning("rollback: emulator filter for %#x already gone", mark)
        if STEP_PLAN in steps:
            plan = self._plan_for(journal["pod_ip"], mark, session_id, qfi)
            for spec in reversed(plan.steps):
                if not self._revert_step_by_spec(spec):
                    log.warning("rollback: backend step already gone: %s", spec)
        if STEP_FLOW in steps:
            try:
                flow = find_flow(self.emulator, session_id, qfi)
                self.emulator.delete_qos_flow(flow["id"], idempotent=True, cascade=True)
            except NotFound:
                log.warning("rollback: emulator flow %s/%s already gone", session_id, qfi)
        if STEP_SESSION in steps and (
            journal.get("created_session") or journal.get("created_link")
        ):
            self._teardown_node_if_idle(exclude_container=journal["container_id"])
        if STEP_MARK in steps and mark is not None:
            self.space.release(mark)
        self.store.remove_journal(journal["container_id"])

    def recover(self) -> int:
        """Finish unwinding any adds interrupted by a crash; returns count."""
        pending = self.store.journals()
        for journal in pending:
            log.warning(
                "recovering interrupted add for container %s (last step: %s)",
                journal["container_id"],
                journal["steps"][-1] if journal["steps"] else "none",
            )
            self._undo_journal(journal)
        return len(pending)

    # -- DEL ---------------------------------------------------------------

    def handle_del(self, container_id: str) -> None:
        with self._container_lock(container_id):
            binding = self.store.get(container_id)
            if binding is None:
                return
            drift: list[str] = []

            def step(desc: str, fn) -> None:
                last: Exception | None = None
                for attempt in range(self._teardown_attempts):
                    try:
                        fn()
                        return
                    except NotFound as exc:
                        drift.append(f"{desc}: already gone ({exc.msg})")
                        log.warning("teardown drift for %s: %s", container_id, drift[-1])
                        return
                    except Exception as exc:
                        last = exc
                        if attempt + 1 < self._teardown_attempts:
                            time.sleep(self._teardown_backoff_s)
                drift.append(f"{desc}: failed after retries ({last})")
                log.warning("teardown failure for %s: %s", container_id, drift[-1])

            def drop_filter():
                filt = find_filter(self.emulator, binding.mark, self.space.free_mask)
                self.emulator.delete_filter(filt["id"], idempotent=True)

            def drop_plan():
                plan = self._plan_for(
                    binding.pod_ip, binding.mark, binding.pdu_session_id, binding.qfi
                )
                for spec in reversed(plan.steps):
                    if not self._revert_step_by_spec(spec):
                        drift.append(f"backend step already gone: {spec}")
                        log.warning("teardown drift for %s: %s", container_id, drift[-1])

            def drop_flow():
                flow = find_flow(self.emulator, binding.pdu_session_id, binding.qfi)
                self.emulator.delete_qos_flow(flow["id"], idempotent=True, cascade=True)

            step("delete emulator filter", drop_filter)
            step("revert enforcement plan", drop_plan)
            step("delete QoS flow", drop_flow)
            # The allocator record must never survive, whatever happened above.
            self.store.remove(container_id)
            self.space.release(binding.mark)
            if self.config.teardown_on_empty:
                step("teardown idle session", self._teardown_node_if_idle)

    # -- CHECK -------------------------------------------------------------

    def handle_check(self, container_id: str) -> CheckReport:
        binding = self.store.get(container_id)
        if binding is None:
            return CheckReport(container_id, expected=False)
        plan = self._plan_for(binding.pod_ip, binding.mark, binding.pdu_session_id, binding.qfi)
        mark_rule, tc_filter = plan.steps
        try:
            find_flow(self.emulator, binding.pdu_session_id, binding.qfi)
            flow_present = True
        except NotFound:
            flow_present = False
        try:
            find_filter(self.emulator, binding.mark, self.space.free_mask)
            emu_filter_present = True
        except NotFound:
            emu_filter_present = False
        elements = (
            ("store-binding", True),
            ("mark-allocated", binding.mark in self.space.allocated),
            ("mark-rule", self.backend.has_step(mark_rule)),
            ("fw-filter", self.backend.has_step(tc_filter)),
            ("qos-flow", flow_present),
            ("qos-filter", emu_filter_present),
        )
        return CheckReport(container_id, expected=True, elements=elements)

    # -- observability -----------------------------------------------------

    def list_bindings(self) -> list[FlowBinding]:
        return self.store.list()

    def snapshot_state(self) -> str:
        """Four-section canonical dump; byte-stable for identical states."""
        return (
            "=== bindings ===\n"
            + self.store.dump()
            + "=== fwmark ===\n"
            + self.space.dump_state()
            + "=== backend ===\n"
            + self.backend.dump_state()
            + "=== emulator ===\n"
            + self.emulator.dump_tree()
        )


class _PlanView:
    """Just enough of a binding for plan construction before commit."""

    def __init__(self, pod_ip, mark, pdu_session_id, qfi):
        self.pod_ip = pod_ip
        self.mark = mark
        self.pdu_session_id = pdu_session_id
        self.qfi = qfi
