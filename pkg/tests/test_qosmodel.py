"""Requirement parsing, profile validation, and the mapping rule.

The mapping rule is cross-checked against ``scan_oracle``, a deliberately
naive reimplementation: filter by explicit loops, then pick the winner by
pairwise comparison. Both routes must agree on every input, including the
error outcomes.
"""
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qosbridge.errors import ProfileTableError, QosUnmappable, UnknownFiveQi
from qosbridge.qosmodel import (
    FiveQiProfile,
    ProfileTable,
    QosRequirement,
    allowed_resource_types,
    default_profile_table,
    load_profile_table,
    map_requirement,
)


def scan_oracle(req, table):
    """Brute-force profile selection; returns a profile or raises."""
    if req.explicit_five_qi is not None:
        for p in table.profiles:
            if p.five_qi == req.explicit_five_qi:
                return p
        raise UnknownFiveQi("absent")
    if req.is_empty() or req.priority_class == "besteffort":
        return table.default_profile
    if req.guaranteed_kbps is not None:
        allowed = {"GBR"}
    else:
        allowed = {"non-GBR"}
    if req.priority_class == "guaranteed":
        allowed = {"GBR"}
    elif req.priority_class == "burstable":
        allowed = allowed & {"non-GBR"}
    best = None
    for p in table.profiles:
        if p.resource_type not in allowed:
            continue
        if req.latency_ms is not None and p.packet_delay_budget_ms > req.latency_ms:
            continue
        if best is None:
            best = p
            continue
        if p.packet_delay_budget_ms != best.packet_delay_budget_ms:
            if p.packet_delay_budget_ms > best.packet_delay_budget_ms:
                best = p
        elif p.priority_level != best.priority_level:
            if p.priority_level < best.priority_level:
                best = p
        elif p.five_qi < best.five_qi:
            best = p
    if best is None:
        raise QosUnmappable("nothing fits")
    return best


def profile(five_qi, rtype="non-GBR", prio=50, budget=50, window=None):
    return FiveQiProfile(
        five_qi=five_qi,
        resource_type=rtype,
        priority_level=prio,
        packet_delay_budget_ms=budget,
        packet_error_rate=1e-3,
        averaging_window_ms=window if rtype == "GBR" else None,
    )


@pytest.fixture
def ladder():
    return ProfileTable(
        (
            profile(1, budget=5, prio=10),
            profile(2, budget=10, prio=30),
            profile(3, budget=50, prio=60),
            profile(4, rtype="GBR", budget=10, prio=20, window=2000),
        ),
        default_five_qi=3,
    )


class TestRequirement:
    def test_netconf_round_trip(self):
        req = QosRequirement.from_netconf({"latencyMs": 10, "maxKbps": 800})
        assert req.latency_ms == 10 and req.max_kbps == 800
        assert QosRequirement.from_json(req.to_json()) == req

    def test_unknown_netconf_key_rejected(self):
        with pytest.raises(ValueError, match="unknown trafficPriority keys"):
            QosRequirement.from_netconf({"latency_ms": 10})

    def test_non_object_rejected(self):
        with pytest.raises(ValueError, match="must be an object"):
            QosRequirement.from_netconf([1, 2])

    def test_empty_object_is_empty_requirement(self):
        assert QosRequirement.from_netconf({}).is_empty()

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"latency_ms": 0},
            {"latency_ms": -3},
            {"guaranteed_kbps": 0},
            {"max_kbps": 0},
            {"guaranteed_kbps": 500, "max_kbps": 400},
            {"priority_class": "platinum"},
            {"explicit_five_qi": 0},
            {"explicit_five_qi": 256},
        ],
    )
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ValueError):
            QosRequirement(**kwargs)

    def test_allowed_resource_types(self):
        assert allowed_resource_types(QosRequirement()) == {"non-GBR"}
        assert allowed_resource_types(QosRequirement(guaranteed_kbps=100)) == {"GBR"}
        assert allowed_resource_types(QosRequirement(priority_class="guaranteed")) == {"GBR"}
        assert allowed_resource_types(
            QosRequirement(guaranteed_kbps=100, priority_class="burstable")
        ) == set()


class TestProfileValidation:
    def test_gbr_requires_window(self):
        with pytest.raises(ProfileTableError, match="averaging_window_ms"):
            FiveQiProfile(5, "GBR", 10, 10, 1e-3)

    def test_non_gbr_refuses_window(self):
        with pytest.raises(ProfileTableError, match="may not carry"):
            FiveQiProfile(5, "non-GBR", 10, 10, 1e-3, averaging_window_ms=2000)

    def test_duplicate_five_qi_rejected(self):
        with pytest.raises(ProfileTableError, match="duplicate"):
            ProfileTable((profile(7), profile(7, budget=10)), default_five_qi=7)

    def test_default_must_exist(self):
        with pytest.raises(ProfileTableError, match="not in table"):
            ProfileTable((profile(1),), default_five_qi=9)

    def test_default_must_be_non_gbr(self):
        with pytest.raises(ProfileTableError, match="non-GBR"):
            ProfileTable(
                (profile(1, rtype="GBR", window=2000), profile(2)), default_five_qi=1
            )

    def test_bundled_table_loads(self):
        table = default_profile_table()
        assert table.default_profile.resource_type == "non-GBR"
        assert {p.five_qi for p in table.profiles} == {10, 20, 30, 110, 120, 130}

    def test_loader_rejects_unknown_profile_keys(self):
        doc = "default_five_qi: 1\nprofiles:\n  - five_qi: 1\n    bogus: 2\n"
        with pytest.raises(ProfileTableError, match="unknown profile keys"):
            load_profile_table(doc)

    def test_loader_rejects_non_mapping(self):
        with pytest.raises(ProfileTableError):
            load_profile_table("- a\n- b\n")


class TestMapping:
    def test_latency_selects_largest_sufficient_budget(self, ladder):
        # Budgets {5, 10, 50}: a 10 ms bound picks the 10 ms profile, not 5.
        assert map_requirement(QosRequirement(latency_ms=10), ladder).five_qi == 2

    def test_empty_requirement_maps_to_default(self, ladder):
        assert map_requirement(QosRequirement(), ladder).five_qi == 3

    def test_besteffort_maps_to_default(self, ladder):
        req = QosRequirement(latency_ms=5, priority_class="besteffort")
        assert map_requirement(req, ladder).five_qi == 3

    def test_too_tight_latency_is_unmappable(self, ladder):
        with pytest.raises(QosUnmappable):
            map_requirement(QosRequirement(latency_ms=3), ladder)

    def test_explicit_five_qi_wins(self, ladder):
        req = QosRequirement(latency_ms=50, explicit_five_qi=1)
        assert map_requirement(req, ladder).five_qi == 1

    def test_unknown_explicit_five_qi(self, ladder):
        with pytest.raises(UnknownFiveQi):
            map_requirement(QosRequirement(explicit_five_qi=99), ladder)

    def test_guaranteed_kbps_needs_gbr(self, ladder):
        assert map_requirement(QosRequirement(guaranteed_kbps=100), ladder).five_qi == 4

    def test_contradictory_class_is_unmappable(self, ladder):
        req = QosRequirement(guaranteed_kbps=100, priority_class="burstable")
        with pytest.raises(QosUnmappable):
            map_requirement(req, ladder)

    def test_tie_breaks_by_priority_then_five_qi(self):
        table = ProfileTable(
            (
                profile(9, budget=10, prio=30),
                profile(5, budget=10, prio=20),
                profile(6, budget=10, prio=20),
            ),
            default_five_qi=9,
        )
        assert map_requirement(QosRequirement(latency_ms=10), table).five_qi == 5

    def test_monotone_in_latency(self, ladder):
        last_budget = 0
        for latency in range(5, 80):
            p = map_requirement(QosRequirement(latency_ms=latency), ladder)
            assert p.packet_delay_budget_ms >= last_budget
            last_budget = p.packet_delay_budget_ms


def random_table(rng):
    count = rng.randint(1, 32)
    rows = []
    used = rng.sample(range(1, 256), count)
    non_gbr = []
    for five_qi in used:
        rtype = rng.choice(("GBR", "non-GBR"))
        rows.append(
            FiveQiProfile(
                five_qi=five_qi,
                resource_type=rtype,
                priority_level=rng.randint(1, 100),
                packet_delay_budget_ms=rng.choice((2, 5, 10, 20, 50, 100, 300)),
                packet_error_rate=1e-3,
                averaging_window_ms=2000 if rtype == "GBR" else None,
            )
        )
        if rtype == "non-GBR":
            non_gbr.append(five_qi)
    if not non_gbr:
        rows[0] = FiveQiProfile(
            five_qi=rows[0].five_qi,
            resource_type="non-GBR",
            priority_level=rows[0].priority_level,
            packet_delay_budget_ms=rows[0].packet_delay_budget_ms,
            packet_error_rate=1e-3,
        )
        non_gbr.append(rows[0].five_qi)
    return ProfileTable(tuple(rows), default_five_qi=rng.choice(non_gbr))


def random_requirement(rng):
    kwargs = {}
    if rng.random() < 0.5:
        kwargs["latency_ms"] = rng.choice((1, 2, 3, 5, 10, 20, 50, 100, 300, 500))
    if rng.random() < 0.3:
        kwargs["guaranteed_kbps"] = rng.randint(1, 1000)
    if rng.random() < 0.3:
        kwargs["max_kbps"] = rng.randint(1000, 2000)
    if rng.random() < 0.3:
        kwargs["priority_class"] = rng.choice(("guaranteed", "burstable", "besteffort"))
    if rng.random() < 0.2:
        kwargs["explicit_five_qi"] = rng.randint(1, 255)
    return QosRequirement(**kwargs)


def outcomes_match(req, table):
    try:
        got = map_requirement(req, table)
    except (QosUnmappable, UnknownFiveQi) as exc:
        got = type(exc)
    try:
        want = scan_oracle(req, table)
    except (QosUnmappable, UnknownFiveQi) as exc:
        want = type(exc)
    return got == want


class TestOracleAgreement:
    def test_seeded_random_pairs(self):
        rng = random.Random(1234)
        for _ in range(500):
            table = random_table(rng)
            req = random_requirement(rng)
            assert outcomes_match(req, table)

    @given(st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=60, deadline=None)
    def test_hypothesis_random_pairs(self, seed):
        rng = random.Random(seed)
        assert outcomes_match(random_requirement(rng), random_table(rng))
