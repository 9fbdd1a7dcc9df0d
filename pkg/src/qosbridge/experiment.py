"""Priority experiments: bind pods, blast packets, report per-pod latency.

A scenario file names the pods (with or without a QoS requirement), the
registry and profile table to use, and the packet schedule parameters. The
run binds the QoS pods through a daemon, traverses every packet over the
simulated node path, and delivers the batch through the emulator under
virtual time, so every number in the report is reproducible from the seed.
"""
from __future__ import annotations

import os
import random
from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

from .daemon.config import DaemonConfig
from .daemon.core import QosDaemon
from .emulator.client import LocalEmulatorClient
from .emulator.core import EmulatorCore
from .errors import MalformedConfig
from .fwmark import load_registry
from .overlay import NodePath, SimPacket, serialize_inner, traverse
from .qosmodel import QosRequirement, default_profile_table, load_profile_table

_SCENARIO_KEYS = {
    "name",
    "seed",
    "packets_per_pod",
    "payload_bytes",
    "registry",
    "profile_table",
    "pods",
}
_POD_KEYS = {"name", "container_id", "ip", "trafficPriority"}


@dataclass(frozen=True)
class ScenarioPod:
    name: str
    container_id: str
    ip: str
    requirement: QosRequirement | None


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    packets_per_pod: int
    payload_bytes: int
    registry_text: str
    profile_table_text: str | None  # None selects the bundled table
    pods: tuple


@dataclass(frozen=True)
class PodStats:
    name: str
    packets: int
    histogram: dict  # target label -> count
    mean_us: float
    p50_us: int
    p95_us: int
    p99_us: int

    @property
    def flow_label(self) -> str:
        if len(self.histogram) == 1:
            return next(iter(self.histogram))
        return "mixed(" + ",".join(f"{k}={v}" for k, v in sorted(self.histogram.items())) + ")"


@dataclass(frozen=True)
class ExperimentReport:
    scenario_name: str
    seed: int
    packets_per_pod: int
    pods: tuple

    def pod(self, name: str) -> PodStats:
        for stats in self.pods:
            if stats.name == name:
                return stats
        raise KeyError(name)


def bundled_scenario(name: str) -> str:
    """Filesystem path of a scenario shipped with the package."""
    return str(resources.files("qosbridge.data").joinpath("scenarios").joinpath(name))


def load_scenario(path: str) -> Scenario:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise MalformedConfig(f"cannot read scenario {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise MalformedConfig(f"scenario {path} is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedConfig(f"scenario {path} must be a mapping")
    unknown = set(data) - _SCENARIO_KEYS
    if unknown:
        raise MalformedConfig(f"unknown scenario keys: {sorted(unknown)}")
    if "registry" not in data:
        raise MalformedConfig("scenario needs a 'registry' file reference")
    base = os.path.dirname(os.path.abspath(path))

    def read_ref(name: str) -> str:
        ref = os.path.join(base, data[name])
        try:
            with open(ref) as fh:
                return fh.read()
        except OSError as exc:
            raise MalformedConfig(f"cannot read scenario {name} file {ref}: {exc}") from exc

    pods = []
    for row in data.get("pods", []):
        if not isinstance(row, dict):
            raise MalformedConfig(f"pod rows must be mappings, got {row!r}")
        unknown = set(row) - _POD_KEYS
        if unknown:
            raise MalformedConfig(f"unknown pod keys: {sorted(unknown)}")
        if "name" not in row or "ip" not in row:
            raise MalformedConfig(f"pod row needs 'name' and 'ip': {row!r}")
        req = None
        if row.get("trafficPriority") is not None:
            try:
                req = QosRequirement.from_netconf(row["trafficPriority"])
            except ValueError as exc:
                raise MalformedConfig(f"pod {row['name']}: {exc}") from exc
        pods.append(
            ScenarioPod(
                name=row["name"],
                container_id=row.get("container_id", f"ctr-{row['name']}"),
                ip=row["ip"],
                requirement=req,
            )
        )
    if not pods:
        raise MalformedConfig("scenario defines no pods")
    return Scenario(
        name=data.get("name", os.path.basename(path)),
        seed=int(data.get("seed", 0)),
        packets_per_pod=int(data.get("packets_per_pod", 1000)),
        payload_bytes=int(data.get("payload_bytes", 200)),
        registry_text=read_ref("registry"),
        profile_table_text=read_ref("profile_table") if "profile_table" in data else None,
        pods=tuple(pods),
    )


def build_schedule(scenario: Scenario, packets_per_pod: int, seed: int):
    """Seeded global send schedule: pods round-robin, jittered gaps.

    Returns (pod_index, send_us) arrays sorted by send time.
    """
    rng = random.Random(seed)
    count = len(scenario.pods) * packets_per_pod
    pod_index = np.empty(count, dtype=np.int64)
    send_us = np.empty(count, dtype=np.int64)
    clock = 0
    slot = 0
    for k in range(count):
        pod_index[k] = slot
        send_us[k] = clock
        slot = (slot + 1) % len(scenario.pods)
        clock += rng.randrange(20, 200)
    return pod_index, send_us


def run_priority_experiment(
    scenario: Scenario,
    packets_per_pod: int | None = None,
    seed: int | None = None,
    emulator=None,
) -> ExperimentReport:
    """Bind the scenario's pods, run the schedule, and tear everything down.

    ``emulator`` may be any emulator client; by default the run owns a fresh
    in-process emulator. With a shared client, the run still removes its
    bindings afterwards.
    """
    packets_per_pod = scenario.packets_per_pod if packets_per_pod is None else packets_per_pod
    seed = scenario.seed if seed is None else seed
    if emulator is None:
        emulator = LocalEmulatorClient(EmulatorCore())
    registry = load_registry(scenario.registry_text)
    table = (
        default_profile_table()
        if scenario.profile_table_text is None
        else load_profile_table(scenario.profile_table_text)
    )
    config = DaemonConfig(teardown_on_empty=True)
    daemon = QosDaemon(config, emulator=emulator, registry_entries=registry, profile_table=table)
    bound = []
    try:
        for pod in scenario.pods:
            if pod.requirement is not None:
                daemon.handle_add(pod.container_id, pod.ip, pod.requirement)
                bound.append(pod.container_id)
        path = NodePath(phys_if=daemon.phys_if, mark_rules=tuple(daemon.backend.mark_rules()))
        pod_index, send_us = build_schedule(scenario, packets_per_pod, seed)
        rng = random.Random(seed ^ 0x5EED)
        count = len(pod_index)
        marks = np.empty(count, dtype=np.uint32)
        sizes = np.empty(count, dtype=np.int64)
        for k in range(count):
            pod = scenario.pods[int(pod_index[k])]
            packet = SimPacket(
                payload=rng.randbytes(scenario.payload_bytes),
                overlay_src=pod.ip,
                overlay_dst="10.244.9.9",
            )
            out = traverse(packet, path)
            marks[k] = out.mark
            sizes[k] = len(serialize_inner(packet))
        arrivals, session_ids, qfis, _handles = emulator.deliver_batch(marks, send_us, sizes)
        delays = arrivals - send_us
        stats = []
        for i, pod in enumerate(scenario.pods):
            idx = np.nonzero(pod_index == i)[0]
            histogram: dict[str, int] = {}
            for k in idx:
                label = (
                    "default"
                    if session_ids[k] is None
                    else f"{session_ids[k]}/{qfis[k]}"
                )
                histogram[label] = histogram.get(label, 0) + 1
            pod_delays = np.sort(delays[idx])
            n = len(pod_delays)
            if n == 0:
                stats.append(PodStats(pod.name, 0, {}, 0.0, 0, 0, 0))
                continue

            def pct(q: float) -> int:
                return int(pod_delays[min(n - 1, int(n * q))])

            stats.append(
                PodStats(
                    name=pod.name,
                    packets=n,
                    histogram=histogram,
                    mean_us=float(pod_delays.sum()) / n,
                    p50_us=pct(0.50),
                    p95_us=pct(0.95),
                    p99_us=pct(0.99),
                )
            )
        return ExperimentReport(
            scenario_name=scenario.name,
            seed=seed,
            packets_per_pod=packets_per_pod,
            pods=tuple(stats),
        )
    finally:
        for container_id in bound:
            daemon.handle_del(container_id)


def render_report(report: ExperimentReport, machine: bool = False) -> str:
    """Human table or tab-separated machine form; both deterministic."""
    if machine:
        lines = ["pod\tflow\tpackets\tmean_us\tp50_us\tp95_us\tp99_us"]
        for s in report.pods:
            lines.append(
                f"{s.name}\t{s.flow_label}\t{s.packets}\t{s.mean_us:g}"
                f"\t{s.p50_us}\t{s.p95_us}\t{s.p99_us}"
            )
        return "\n".join(lines) + "\n"
    header = (
        f"scenario {report.scenario_name} seed {report.seed} "
        f"packets-per-pod {report.packets_per_pod}"
    )
    rows = [("pod", "flow", "packets", "mean(ms)", "p50(ms)", "p95(ms)", "p99(ms)")]
    for s in report.pods:
        rows.append(
            (
                s.name,
                s.flow_label,
                str(s.packets),
                f"{s.mean_us / 1000:.3f}",
                f"{s.p50_us / 1000:.3f}",
                f"{s.p95_us / 1000:.3f}",
                f"{s.p99_us / 1000:.3f}",
            )
        )
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = [header]
    for r in rows:
        lines.append("  ".join(r[c].ljust(widths[c]) for c in range(len(r))).rstrip())
    return "\n".join(lines) + "\n"
