"""5QI profiles and the mapping from pod-side QoS demands onto them.

A pod declares what it needs (latency bound, bitrates, a coarse priority
class, or an explicit 5QI); the network side describes what each 5QI
delivers. ``map_requirement`` picks the least-restrictive profile that still
satisfies everything stated, so premium resources are not hoarded by default.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import yaml

from .errors import ProfileTableError, QosUnmappable, UnknownFiveQi

RESOURCE_GBR = "GBR"
RESOURCE_NON_GBR = "non-GBR"
PRIORITY_CLASSES = ("guaranteed", "burstable", "besteffort")

DEFAULT_TABLE_RESOURCE = "five-qi-profiles.yaml"

# camelCase keys of the trafficPriority NetConf object -> constructor kwargs.
_NETCONF_KEYS = {
    "latencyMs": "latency_ms",
    "guaranteedKbps": "guaranteed_kbps",
    "maxKbps": "max_kbps",
    "priorityClass": "priority_class",
    "fiveQi": "explicit_five_qi",
}


@dataclass(frozen=True)
class QosRequirement:
    """What a pod asks of the network; every field optional."""

    latency_ms: int | None = None
    guaranteed_kbps: int | None = None
    max_kbps: int | None = None
    priority_class: str | None = None
    explicit_five_qi: int | None = None

    def __post_init__(self):
        for name in ("latency_ms", "guaranteed_kbps", "max_kbps"):
            value = getattr(self, name)
            if value is not None and (not isinstance(value, int) or value <= 0):
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.guaranteed_kbps is not None and self.max_kbps is not None:
            if self.guaranteed_kbps > self.max_kbps:
                raise ValueError("guaranteed_kbps may not exceed max_kbps")
        if self.priority_class is not None and self.priority_class not in PRIORITY_CLASSES:
            raise ValueError(
                f"priority_class must be one of {PRIORITY_CLASSES}, got {self.priority_class!r}"
            )
        if self.explicit_five_qi is not None and not 1 <= self.explicit_five_qi <= 255:
            raise ValueError(f"fiveQi must be in 1..255, got {self.explicit_five_qi!r}")

    def is_empty(self) -> bool:
        return all(
            getattr(self, f) is None
            for f in ("latency_ms", "guaranteed_kbps", "max_kbps", "priority_class", "explicit_five_qi")
        )

    @classmethod
    def from_netconf(cls, obj) -> "QosRequirement":
        """Build from a trafficPriority JSON object (camelCase, strict keys)."""
        if not isinstance(obj, dict):
            raise ValueError(f"trafficPriority must be an object, got {type(obj).__name__}")
        unknown = set(obj) - set(_NETCONF_KEYS)
        if unknown:
            raise ValueError(f"unknown trafficPriority keys: {sorted(unknown)}")
        return cls(**{_NETCONF_KEYS[k]: v for k, v in obj.items()})

    def to_json(self) -> dict:
        return {
            "latency_ms": self.latency_ms,
            "guaranteed_kbps": self.guaranteed_kbps,
            "max_kbps": self.max_kbps,
            "priority_class": self.priority_class,
            "explicit_five_qi": self.explicit_five_qi,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "QosRequirement":
        return cls(**{k: obj.get(k) for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class FiveQiProfile:
    """Network-side characteristics bundled under one 5QI value."""

    five_qi: int
    resource_type: str
    priority_level: int
    packet_delay_budget_ms: int
    packet_error_rate: float
    averaging_window_ms: int | None = None
    max_data_burst_bytes: int | None = None

    def __post_init__(self):
        if not 1 <= self.five_qi <= 255:
            raise ProfileTableError(f"five_qi must be in 1..255, got {self.five_qi}")
        if self.resource_type not in (RESOURCE_GBR, RESOURCE_NON_GBR):
            raise ProfileTableError(
                f"resource_type must be {RESOURCE_GBR!r} or {RESOURCE_NON_GBR!r}, "
                f"got {self.resource_type!r}"
            )
        if self.priority_level <= 0:
            raise ProfileTableError(f"priority_level must be positive, got {self.priority_level}")
        if self.packet_delay_budget_ms <= 0:
            raise ProfileTableError(
                f"packet_delay_budget_ms must be positive, got {self.packet_delay_budget_ms}"
            )
        if not 0 < self.packet_error_rate <= 1:
            raise ProfileTableError(
                f"packet_error_rate must be in (0, 1], got {self.packet_error_rate}"
            )
        is_gbr = self.resource_type == RESOURCE_GBR
        if is_gbr and self.averaging_window_ms is None:
            raise ProfileTableError(f"GBR profile {self.five_qi} must carry averaging_window_ms")
        if not is_gbr and self.averaging_window_ms is not None:
            raise ProfileTableError(
                f"non-GBR profile {self.five_qi} may not carry averaging_window_ms"
            )
        if self.averaging_window_ms is not None and self.averaging_window_ms <= 0:
            raise ProfileTableError("averaging_window_ms must be positive")
        if self.max_data_burst_bytes is not None and self.max_data_burst_bytes <= 0:
            raise ProfileTableError("max_data_burst_bytes must be positive")

    def to_json(self) -> dict:
        return {
            "five_qi": self.five_qi,
            "resource_type": self.resource_type,
            "priority_level": self.priority_level,
            "packet_delay_budget_ms": self.packet_delay_budget_ms,
            "packet_error_rate": self.packet_error_rate,
            "averaging_window_ms": self.averaging_window_ms,
            "max_data_burst_bytes": self.max_data_burst_bytes,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FiveQiProfile":
        return cls(**{k: obj.get(k) for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class ProfileTable:
    """Immutable, validated collection of profiles plus the default choice."""

    profiles: tuple[FiveQiProfile, ...]
    default_five_qi: int

    def __post_init__(self):
        if not self.profiles:
            raise ProfileTableError("profile table may not be empty")
        seen: set[int] = set()
        for profile in self.profiles:
            if profile.five_qi in seen:
                raise ProfileTableError(f"duplicate five_qi {profile.five_qi} in table")
            seen.add(profile.five_qi)
        default = self.get(self.default_five_qi)
        if default is None:
            raise ProfileTableError(f"default five_qi {self.default_five_qi} not in table")
        if default.resource_type != RESOURCE_NON_GBR:
            raise ProfileTableError("default profile must be non-GBR best-effort")

    def get(self, five_qi: int) -> FiveQiProfile | None:
        for profile in self.profiles:
            if profile.five_qi == five_qi:
                return profile
        return None

    @property
    def default_profile(self) -> FiveQiProfile:
        profile = self.get(self.default_five_qi)
        assert profile is not None
        return profile


def allowed_resource_types(req: QosRequirement) -> set[str]:
    """Resource types a requirement permits; empty means contradictory.

    A stated guaranteed bitrate demands GBR and its absence demands non-GBR;
    the coarse priority classes tighten that: guaranteed forces GBR even
    without a bitrate, burstable forces non-GBR.
    """
    allowed = {RESOURCE_GBR} if req.guaranteed_kbps is not None else {RESOURCE_NON_GBR}
    if req.priority_class == "guaranteed":
        allowed = {RESOURCE_GBR}
    elif req.priority_class == "burstable":
        allowed &= {RESOURCE_NON_GBR}
    return allowed


def map_requirement(req: QosRequirement, table: ProfileTable) -> FiveQiProfile:
    """Pick the profile for a requirement.

    An explicit 5QI wins outright. An all-empty requirement (and the
    besteffort class) maps to the default profile. Otherwise the satisfiers
    are the profiles of an allowed resource type whose delay budget fits any
    stated latency bound; among them the largest delay budget wins, ties
    broken by lowest priority_level value, then lowest five_qi.
    """
    if req.explicit_five_qi is not None:
        profile = table.get(req.explicit_five_qi)
        if profile is None:
            raise UnknownFiveQi(f"5QI {req.explicit_five_qi} is not in the profile table")
        return profile
    if req.is_empty() or req.priority_class == "besteffort":
        return table.default_profile
    allowed = allowed_resource_types(req)
    candidates = [
        p
        for p in table.profiles
        if p.resource_type in allowed
        and (req.latency_ms is None or p.packet_delay_budget_ms <= req.latency_ms)
    ]
    if not candidates:
        raise QosUnmappable(f"no profile satisfies requirement {req}")
    return min(candidates, key=lambda p: (-p.packet_delay_budget_ms, p.priority_level, p.five_qi))


def load_profile_table(document: str) -> ProfileTable:
    """Parse and validate a profile-table YAML document."""
    try:
        data = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise ProfileTableError(f"profile table is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ProfileTableError("profile table document must be a mapping")
    if "default_five_qi" not in data or "profiles" not in data:
        raise ProfileTableError("profile table needs 'default_five_qi' and 'profiles'")
    rows = data["profiles"]
    if not isinstance(rows, list):
        raise ProfileTableError("'profiles' must be a list")
    profiles = []
    for row in rows:
        if not isinstance(row, dict):
            raise ProfileTableError(f"profile rows must be mappings, got {row!r}")
        unknown = set(row) - set(FiveQiProfile.__dataclass_fields__)
        if unknown:
            raise ProfileTableError(f"unknown profile keys: {sorted(unknown)}")
        try:
            profiles.append(FiveQiProfile(**row))
        except TypeError as exc:
            raise ProfileTableError(f"incomplete profile row {row!r}: {exc}") from exc
    return ProfileTable(tuple(profiles), data["default_five_qi"])


def default_profile_table() -> ProfileTable:
    """The bundled illustrative table (not normative 3GPP values)."""
    text = resources.files("qosbridge.data").joinpath(DEFAULT_TABLE_RESOURCE).read_text()
    return load_profile_table(text)
