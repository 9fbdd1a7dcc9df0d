"""Acceptance gate: the ten end-to-end commitments this package makes.

Each test prints exactly one PASS or FAIL line and enforces its own wall-time
budget. The oracles here are deliberately independent of the implementation:
hand-frozen constants, brute-force scans, and exact rational arithmetic.
"""
import contextlib
import io
import json
import os
import random
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest

import test_kernels
import test_qosmodel

from qosbridge import cli
from qosbridge.cni import plugin
from qosbridge.daemon.client import LocalDaemonClient
from qosbridge.daemon.config import DaemonConfig
from qosbridge.daemon.core import PIPELINE_STEPS, STEP_COMMIT, SimulatedCrash
from qosbridge.emulator.client import LocalEmulatorClient
from qosbridge.emulator.core import EmulatorCore
from qosbridge.enforcement import MarkRuleSpec, SimBackend
from qosbridge.errors import AllocationExhausted
from qosbridge.experiment import (
    bundled_scenario,
    build_schedule,
    load_scenario,
    run_priority_experiment,
)
from qosbridge.fwmark import FwMarkSpace, default_registry, free_mask, load_registry
from qosbridge.overlay import (
    NodePath,
    SimPacket,
    inner_bytes_of,
    serialize_inner,
    serialize_outer,
    traverse,
)
from qosbridge.qosmodel import QosRequirement, load_profile_table

FIXTURES = Path(__file__).parent / "fixtures" / "cni"

# Free space big enough for the concurrency and churn criteria: the low
# byte is unclaimed, so 255 usable values.
WIDE_REGISTRY = "Legacy 0xFFFFFF00\n"


@contextlib.contextmanager
def criterion(num, name, budget_s):
    started = time.monotonic()
    ok = False
    try:
        yield
        elapsed = time.monotonic() - started
        assert elapsed < budget_s, f"took {elapsed:.2f}s, budget {budget_s}s"
        ok = True
    finally:
        status = "PASS" if ok else "FAIL"
        print(f"[criterion {num:02d}] {status} {name}")


def four_way(daemon):
    """The snapshot split into its four dumps, keyed by section name."""
    sections = {}
    current = None
    for line in daemon.snapshot_state().splitlines():
        if line.startswith("=== ") and line.endswith(" ==="):
            current = line.strip("= ")
            sections[current] = []
        else:
            sections[current].append(line)
    assert set(sections) == {"bindings", "fwmark", "backend", "emulator"}
    return {k: "\n".join(v) for k, v in sections.items()}


def test_criterion_01_single_user_registry_audit():
    with criterion(1, "single-user registry leaves exactly three free bits", 1.0):
        entries = load_registry("Cilium 0xFFFF1FFF\n")
        assert free_mask(entries) == 0x0000E000

        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            rc = cli.main(
                ["fwmark-audit", bundled_scenario("registry-cilium-only.conf"), "--machine"]
            )
        assert rc == 0
        lines = buf.getvalue().splitlines()
        assert "free\t0x0000e000" in lines
        assert "free_bits\t3" in lines


def test_criterion_02_saturated_registry_refuses_cleanly(make_daemon, tmp_path):
    with criterion(2, "saturated registry: no free bits, allocation refused atomically", 1.0):
        entries = default_registry()
        hand_or = 0
        for entry in entries:
            hand_or |= entry.mark_mask
        assert hand_or == 0xFFFFFFFF  # frozen hand-computed union
        assert free_mask(entries) == 0

        space = FwMarkSpace(entries, str(tmp_path / "fw.db"))
        with pytest.raises(AllocationExhausted):
            space.allocate()

        daemon = make_daemon(entries=entries)
        before = daemon.snapshot_state()
        with pytest.raises(AllocationExhausted):
            daemon.handle_add("ctr-a", "10.244.0.5", QosRequirement(latency_ms=10))
        assert daemon.snapshot_state() == before
        assert daemon.store.journals() == []


def test_criterion_03_churn_always_returns_to_initial_state(make_daemon):
    with criterion(3, "200 random add/del sequences end byte-identical to initial", 30.0):
        table = load_profile_table(
            Path(bundled_scenario("profiles-three-flow.yaml")).read_text()
        )
        daemon = make_daemon(
            entries=load_registry(WIDE_REGISTRY),
            table=table,
            config=DaemonConfig(teardown_on_empty=True),
        )
        initial = four_way(daemon)
        rng = random.Random(20260824)
        for seq in range(200):
            pool = [f"c{seq}-{i}" for i in range(rng.randint(1, 16))]
            live = []
            for _ in range(2 * len(pool)):
                if pool and (not live or rng.random() < 0.55):
                    cid = pool.pop()
                    req = QosRequirement(
                        latency_ms=rng.choice((2, 10, 50)),
                        max_kbps=rng.choice((None, 200, 500)),
                    )
                    daemon.handle_add(cid, f"10.244.{seq % 200}.{len(live) + 10}", req)
                    live.append(cid)
                elif live:
                    daemon.handle_del(live.pop(rng.randrange(len(live))))
            rng.shuffle(live)
            for cid in live:
                daemon.handle_del(cid)
            assert four_way(daemon) == initial, f"sequence {seq} left residue"


def test_criterion_04_concurrent_adds_get_distinct_resources(make_daemon):
    with criterion(4, "64-way concurrent setup x50: distinct marks and flows", 60.0):
        entries = load_registry(WIDE_REGISTRY)
        for rep in range(50):
            daemon = make_daemon(entries=entries)
            with ThreadPoolExecutor(max_workers=64) as pool:
                bindings = list(
                    pool.map(
                        lambda i: daemon.handle_add(
                            f"ctr-{i}", f"10.244.{i // 200}.{i % 200}", QosRequirement(latency_ms=10)
                        ),
                        range(64),
                    )
                )
            marks = [b.mark for b in bindings]
            assert len(set(marks)) == 64
            reserved = daemon.space.reserved_mask
            assert all(mark & reserved == 0 for mark in marks)
            flows = {(b.pdu_session_id, b.qfi) for b in bindings}
            assert len(flows) == 64


def test_criterion_05_three_flow_separation_is_exact():
    with criterion(5, "three-flow run: 100% own-flow, means exactly 2/10/50 ms", 30.0):
        scenario = load_scenario(bundled_scenario("three-flow.yaml"))
        report = run_priority_experiment(scenario, packets_per_pod=10_000)
        expected_mean = {"sensor-fast": 2000.0, "sensor-mid": 10000.0, "sensor-slow": 50000.0}
        labels = set()
        for stats in report.pods:
            assert stats.packets == 10_000
            assert len(stats.histogram) == 1, f"{stats.name} leaked across flows"
            label = next(iter(stats.histogram))
            assert label != "default"
            labels.add(label)
            assert stats.mean_us == expected_mean[stats.name]
        assert len(labels) == 3


def test_criterion_06_marking_never_rewrites_packet_bytes():
    with criterion(6, "10,000 random packets: inner bytes identical after marking", 10.0):
        rng = random.Random(66)
        rules = (
            MarkRuleSpec(match_source="10.244.0.5", set_mark_value=0x2000, set_mark_mask=0xE000),
            MarkRuleSpec(match_source="10.244.0.6", set_mark_value=0xC000, set_mark_mask=0xE000),
        )
        path = NodePath(mark_rules=rules)
        for k in range(10_000):
            packet = SimPacket(
                payload=rng.randbytes(rng.randrange(0, 600)),
                overlay_src=rng.choice(("10.244.0.5", "10.244.0.6")),
                overlay_dst="10.244.9.9",
                mark=rng.randrange(0, 1 << 32) if k % 5 == 0 else 0,
            )
            before = serialize_inner(packet)
            out = traverse(packet, path)
            assert out.mark & 0xE000 in (0x2000, 0xC000)
            assert inner_bytes_of(serialize_outer(out)) == before


def test_criterion_07_delay_and_rate_limits_match_oracles():
    with criterion(7, "10 ms mean offset exact; shaper within 1 us of rational oracle", 10.0):
        compare = load_scenario(bundled_scenario("qos-compare.yaml"))
        report = run_priority_experiment(compare)
        diff = report.pod("limited").mean_us - report.pod("baseline").mean_us
        assert diff == 10_000.0

        scenario = load_scenario(bundled_scenario("rate-limited.yaml"))
        from qosbridge.daemon.core import QosDaemon

        emulator = LocalEmulatorClient(EmulatorCore())
        daemon = QosDaemon(
            DaemonConfig(teardown_on_empty=True),
            emulator=emulator,
            registry_entries=load_registry(scenario.registry_text),
        )
        shaped = [p for p in scenario.pods if p.requirement is not None]
        assert len(shaped) == 1 and shaped[0].name == "shaped"
        daemon.handle_add(shaped[0].container_id, shaped[0].ip, shaped[0].requirement)
        try:
            path = NodePath(
                phys_if=daemon.phys_if, mark_rules=tuple(daemon.backend.mark_rules())
            )
            pod_index, send_us = build_schedule(scenario, scenario.packets_per_pod, scenario.seed)
            count = len(pod_index)
            marks = np.zeros(count, dtype=np.uint32)
            sizes = np.zeros(count, dtype=np.int64)
            for k in range(count):
                pod = scenario.pods[int(pod_index[k])]
                packet = SimPacket(
                    payload=bytes(scenario.payload_bytes),
                    overlay_src=pod.ip,
                    overlay_dst="10.244.9.9",
                )
                out = traverse(packet, path)
                marks[k] = out.mark
                sizes[k] = len(serialize_inner(packet))
            arrivals, session_ids, _qfis, _handles = emulator.deliver_batch(
                marks, send_us, sizes
            )
            shaped_i = [i for i, p in enumerate(scenario.pods) if p.name == "shaped"][0]
            idx = np.nonzero(pod_index == shaped_i)[0]
            assert all(session_ids[k] is not None for k in idx)
            # maxKbps 200 -> 25,000 B/s; 2000 ms window -> 50,000 B bucket;
            # the class itself adds the 10 ms budget delay on top.
            oracle = test_kernels.exact_departures(
                send_us[idx].tolist(), sizes[idx].tolist(), 25_000, 50_000
            )
            for k, exact_departure in zip(idx, oracle):
                want = exact_departure - send_us[k] + 10_000
                got = arrivals[k] - send_us[k]
                assert want <= got < want + 1
            # The oracle must actually have seen sustained queueing.
            assert oracle[-1] - send_us[idx[-1]] > 1_000_000
        finally:
            daemon.handle_del(shaped[0].container_id)


def test_criterion_08_cni_contract_matches_fixtures(make_daemon):
    with criterion(8, "CNI plugin conformance against the documented fixtures", 5.0):
        def fixture(name):
            return (FIXTURES / name).read_bytes()

        def expected(name):
            return (FIXTURES / name).read_text().rstrip("\n")

        daemon = make_daemon()
        factory = lambda path: LocalDaemonClient(daemon)
        env = {"CNI_COMMAND": "ADD", "CNI_CONTAINERID": "ctr-1"}

        status, out = plugin.execute(
            {"CNI_COMMAND": "VERSION"}, fixture("netconf-add.json")
        )
        assert (status, out) == (0, expected("expected-version-1.0.0.json"))
        status, out = plugin.execute(
            {"CNI_COMMAND": "VERSION"}, fixture("version-garbage.txt")
        )
        assert (status, out) == (0, expected("expected-version-fallback.json"))

        status, out = plugin.execute(env, fixture("netconf-add.json"), daemon_factory=factory)
        assert (status, out) == (0, expected("expected-add-passthrough.json"))
        (binding,) = daemon.list_bindings()
        assert binding.pod_ip == "10.244.0.5"

        status, out = plugin.execute(
            env, fixture("netconf-add-no-prev.json"), daemon_factory=factory
        )
        assert (status, out) == (1, expected("expected-error-no-prev.json"))

        check_env = dict(env, CNI_COMMAND="CHECK")
        status, out = plugin.execute(check_env, fixture("netconf-add.json"), daemon_factory=factory)
        assert (status, out) == (0, "{}")

        del_env = dict(env, CNI_COMMAND="DEL")
        for _ in range(2):  # idempotent teardown
            status, out = plugin.execute(del_env, fixture("netconf-add.json"), daemon_factory=factory)
            assert (status, out) == (0, "{}")
        assert daemon.list_bindings() == []

        status, out = plugin.execute(check_env, fixture("netconf-add.json"), daemon_factory=factory)
        assert status == 1 and json.loads(out)["code"] == 105

        # The installed binary speaks the same contract over stdin.
        proc = subprocess.run(
            [sys.executable, "-m", "qosbridge.cni.plugin"],
            input=fixture("version-garbage.txt"),
            env=dict(os.environ, CNI_COMMAND="VERSION"),
            capture_output=True,
            timeout=30,
        )
        assert proc.returncode == 0
        assert proc.stdout.decode().rstrip("\n") == expected("expected-version-fallback.json")


def test_criterion_09_mapping_agrees_with_brute_force():
    with criterion(9, "1,000 random requirement/table pairs match the scan oracle", 10.0):
        rng = random.Random(987654321)
        for _ in range(1000):
            table = test_qosmodel.random_table(rng)
            req = test_qosmodel.random_requirement(rng)
            assert test_qosmodel.outcomes_match(req, table)


def test_criterion_10_crashes_leave_no_partial_state(make_daemon, tmp_path):
    with criterion(10, "crashes at every step boundary x20: all-or-nothing", 60.0):
        req = QosRequirement(latency_ms=10)
        for rep in range(20):
            for step in PIPELINE_STEPS:
                emulator = LocalEmulatorClient(EmulatorCore())
                backend = SimBackend()
                shared = tmp_path / f"node-{rep}-{step}"
                daemon = make_daemon(emulator=emulator, backend=backend, reuse_dir=shared)
                pristine = daemon.snapshot_state()
                daemon.crash_after = {step}
                with pytest.raises(SimulatedCrash):
                    daemon.handle_add("ctr-a", "10.244.0.5", req)

                revived = make_daemon(emulator=emulator, backend=backend, reuse_dir=shared)
                assert revived.store.journals() == []
                if step == STEP_COMMIT:
                    assert [b.container_id for b in revived.list_bindings()] == ["ctr-a"]
                    assert revived.handle_check("ctr-a").ok
                else:
                    assert revived.list_bindings() == []
                    assert revived.snapshot_state() == pristine
