"""Daemon configuration: one YAML file, QOSBRIDGE_* environment overrides."""
from __future__ import annotations

import os
from dataclasses import dataclass, fields

import yaml

from ..errors import MalformedConfig

#: environment variable -> config field
_ENV_KEYS = {
    "QOSBRIDGE_EMULATOR_URL": "emulator_url",
    "QOSBRIDGE_REGISTRY": "registry_path",
    "QOSBRIDGE_PROFILES": "profile_table_path",
    "QOSBRIDGE_PHYS_IF": "phys_if",
    "QOSBRIDGE_SOCKET": "socket_path",
    "QOSBRIDGE_STORE": "store_path",
    "QOSBRIDGE_FWMARK_STATE": "fwmark_state_path",
    "QOSBRIDGE_BACKEND": "backend",
    "QOSBRIDGE_TEARDOWN_ON_EMPTY": "teardown_on_empty",
}

_BOOL_TRUE = ("1", "true", "yes", "on")
_BOOL_FALSE = ("0", "false", "no", "off")


@dataclass
class DaemonConfig:
    """Everything the daemon needs to come up.

    ``emulator_url`` of ``"local"`` runs an in-process emulator (tests and
    single-box demos); anything else is treated as an HTTP base URL.
    ``registry_path``/``profile_table_path`` of None select the bundled
    defaults. ``teardown_on_empty`` removes the node's PDU session and radio
    link once the last binding is gone, which keeps a fully-torn-down node
    indistinguishable from a fresh one; set it false to keep the session
    alive for the next pod.
    """

    emulator_url: str = "local"
    registry_path: str | None = None
    profile_table_path: str | None = None
    phys_if: str = "eth0"
    socket_path: str = "/run/qosbridge/daemon.sock"
    store_path: str | None = None
    fwmark_state_path: str | None = None
    backend: str = "sim"
    teardown_on_empty: bool = True

    def __post_init__(self):
        if self.backend not in ("sim", "shell"):
            raise MalformedConfig(f"backend must be 'sim' or 'shell', got {self.backend!r}")


def _coerce_bool(name: str, value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _BOOL_TRUE:
        return True
    if text in _BOOL_FALSE:
        return False
    raise MalformedConfig(f"{name} must be a boolean, got {value!r}")


def load_config(path: str | None = None, env=None) -> DaemonConfig:
    """Read the config file (if any), then apply environment overrides."""
    env = os.environ if env is None else env
    values: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise MalformedConfig(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise MalformedConfig(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise MalformedConfig(f"config {path} must be a mapping")
        known = {f.name for f in fields(DaemonConfig)}
        unknown = set(data) - known
        if unknown:
            raise MalformedConfig(f"unknown config keys: {sorted(unknown)}")
        values.update(data)
    for env_key, field_name in _ENV_KEYS.items():
        if env_key in env:
            values[field_name] = env[env_key]
    if "teardown_on_empty" in values:
        values["teardown_on_empty"] = _coerce_bool("teardown_on_empty", values["teardown_on_empty"])
    try:
        return DaemonConfig(**values)
    except TypeError as exc:
        raise MalformedConfig(f"bad config values: {exc}") from exc
