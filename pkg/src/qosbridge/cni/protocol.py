"""Parsing and command handling for the traffic-priority CNI plugin.

The plugin is a chained decorator: it never creates interfaces, it reads the
pod's addressing from the previous plugin's result and passes that result
through untouched. Configuration arrives as JSON on stdin; invocation context
arrives in CNI_* environment variables.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass

from ..errors import (
    CheckFailed,
    DaemonUnreachable,
    MalformedConfig,
    MissingCommand,
    MissingContainerId,
    QosBridgeError,
    UnsupportedVersion,
)
from ..qosmodel import QosRequirement

COMMANDS = ("ADD", "DEL", "CHECK", "VERSION")
SUPPORTED_VERSIONS = ("0.4.0", "1.0.0", "1.1.0")

_VERSION_RE = re.compile(r"^\d+\.\d+(\.\d+)?$")

# CNI_ARGS keys understood by this plugin (lowest-precedence QoS source).
_ARG_KEYS = {
    "TRAFFIC_LATENCY_MS": ("latency_ms", int),
    "TRAFFIC_FIVE_QI": ("explicit_five_qi", int),
    "TRAFFIC_GUARANTEED_KBPS": ("guaranteed_kbps", int),
    "TRAFFIC_MAX_KBPS": ("max_kbps", int),
    "TRAFFIC_PRIORITY_CLASS": ("priority_class", str),
}


@dataclass(frozen=True)
class NetConf:
    """The plugin's slice of the network configuration document."""

    cni_version: str
    network_name: str
    plugin_type: str
    prev_result: dict | None
    traffic_priority: QosRequirement | None
    runtime_priority: QosRequirement | None
    daemon_socket: str | None
    raw: dict


@dataclass(frozen=True)
class CniInvocation:
    command: str
    container_id: str
    netns_path: str
    interface_name: str
    extra_args: tuple
    net_conf: NetConf | None


@dataclass(frozen=True)
class CniResult:
    """What the plugin prints: a success payload or an error document."""

    payload: dict
    code: int = 0
    msg: str = ""

    @property
    def is_error(self) -> bool:
        return self.code != 0


def _canonical(document: dict) -> str:
    return json.dumps(document, sort_keys=True, separators=(",", ":"))


def _parse_requirement(obj, where: str) -> QosRequirement:
    try:
        return QosRequirement.from_netconf(obj)
    except ValueError as exc:
        raise MalformedConfig(f"bad {where}: {exc}") from exc


def _parse_cni_args(value: str):
    """CNI_ARGS is semicolon-separated ``KEY=value`` pairs."""
    pairs = []
    for item in value.split(";"):
        if not item:
            continue
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise MalformedConfig(f"CNI_ARGS entry {item!r} is not KEY=value")
        pairs.append((key, val))
    return tuple(pairs)


def _requirement_from_args(pairs) -> QosRequirement | None:
    fields = {}
    for key, val in pairs:
        spec = _ARG_KEYS.get(key)
        if spec is None:
            continue
        name, cast = spec
        try:
            fields[name] = cast(val)
        except ValueError as exc:
            raise MalformedConfig(f"CNI_ARGS {key}={val!r}: {exc}") from exc
    if not fields:
        return None
    try:
        return QosRequirement(**fields)
    except ValueError as exc:
        raise MalformedConfig(f"CNI_ARGS traffic keys: {exc}") from exc


def _version_only(stdin_bytes: bytes) -> str | None:
    """Best-effort cniVersion extraction for the tolerant VERSION path."""
    try:
        data = json.loads(stdin_bytes.decode())
    except (ValueError, UnicodeDecodeError):
        return None
    version = data.get("cniVersion") if isinstance(data, dict) else None
    return version if isinstance(version, str) and _VERSION_RE.match(version) else None


def _parse_net_conf(stdin_bytes: bytes, command: str) -> NetConf:
    try:
        data = json.loads(stdin_bytes.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedConfig(f"configuration is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedConfig("configuration must be a JSON object")
    version = data.get("cniVersion")
    if not isinstance(version, str) or not _VERSION_RE.match(version):
        raise MalformedConfig(f"cniVersion missing or unparseable: {version!r}")
    if version not in SUPPORTED_VERSIONS:
        raise UnsupportedVersion(
            f"cniVersion {version} not supported; supported: {', '.join(SUPPORTED_VERSIONS)}"
        )
    name = data.get("name")
    plugin_type = data.get("type")
    if not isinstance(name, str) or not name:
        raise MalformedConfig("configuration needs a network 'name'")
    if not isinstance(plugin_type, str) or not plugin_type:
        raise MalformedConfig("configuration needs a plugin 'type'")
    prev_result = data.get("prevResult")
    if prev_result is not None and not isinstance(prev_result, dict):
        raise MalformedConfig("prevResult must be an object")
    if command == "ADD" and prev_result is None:
        raise MalformedConfig(
            "prevResult is required on ADD: this plugin decorates the chain, "
            "it does not create interfaces"
        )
    traffic = data.get("trafficPriority")
    traffic_priority = None if traffic is None else _parse_requirement(traffic, "trafficPriority")
    runtime_priority = None
    runtime_config = data.get("runtimeConfig")
    if runtime_config is not None:
        if not isinstance(runtime_config, dict):
            raise MalformedConfig("runtimeConfig must be an object")
        injected = runtime_config.get("trafficPriority")
        if injected is not None:
            runtime_priority = _parse_requirement(injected, "runtimeConfig.trafficPriority")
    daemon_socket = data.get("daemonSocket")
    if daemon_socket is not None and not isinstance(daemon_socket, str):
        raise MalformedConfig("daemonSocket must be a string path")
    return NetConf(
        cni_version=version,
        network_name=name,
        plugin_type=plugin_type,
        prev_result=prev_result,
        traffic_priority=traffic_priority,
        runtime_priority=runtime_priority,
        daemon_socket=daemon_socket,
        raw=data,
    )


def parse_invocation(env, stdin_bytes: bytes) -> CniInvocation:
    """Validate environment and stdin into an invocation, or raise the first
    violated requirement as a typed error."""
    command = env.get("CNI_COMMAND", "")
    if not command:
        raise MissingCommand("CNI_COMMAND is not set")
    if command not in COMMANDS:
        raise MalformedConfig(f"unknown CNI_COMMAND {command!r}")
    if command == "VERSION":
        # VERSION must answer even with garbage stdin; parse best-effort.
        net_conf = None
        try:
            net_conf = _parse_net_conf(stdin_bytes, command)
        except QosBridgeError:
            version = _version_only(stdin_bytes)
            if version is not None:
                net_conf = NetConf(
                    cni_version=version,
                    network_name="",
                    plugin_type="",
                    prev_result=None,
                    traffic_priority=None,
                    runtime_priority=None,
                    daemon_socket=None,
                    raw={},
                )
        return CniInvocation(
            command=command,
            container_id="",
            netns_path="",
            interface_name="",
            extra_args=(),
            net_conf=net_conf,
        )
    container_id = env.get("CNI_CONTAINERID", "")
    if not container_id:
        raise MissingContainerId(f"CNI_CONTAINERID is required for {command}")
    extra_args = _parse_cni_args(env.get("CNI_ARGS", ""))
    net_conf = _parse_net_conf(stdin_bytes, command)
    return CniInvocation(
        command=command,
        container_id=container_id,
        netns_path=env.get("CNI_NETNS", ""),
        interface_name=env.get("CNI_IFNAME", ""),
        extra_args=extra_args,
        net_conf=net_conf,
    )


def requirement_for(inv: CniInvocation) -> QosRequirement | None:
    """The QoS requirement in effect, or None when nothing was asked.

    Whole-source precedence: an orchestrator-injected runtimeConfig entry
    beats the static trafficPriority key, which beats CNI_ARGS.
    """
    conf = inv.net_conf
    if conf is not None and conf.runtime_priority is not None:
        return conf.runtime_priority
    if conf is not None and conf.traffic_priority is not None:
        return conf.traffic_priority
    return _requirement_from_args(inv.extra_args)


def pod_ip_from(prev_result: dict) -> str:
    """The pod's overlay address from the previous plugin's result."""
    ips = prev_result.get("ips")
    if not isinstance(ips, list) or not ips:
        raise MalformedConfig("prevResult carries no IP assignments")
    first = ips[0]
    address = first.get("address") if isinstance(first, dict) else None
    if not isinstance(address, str) or not address:
        raise MalformedConfig(f"prevResult ip entry {first!r} has no address")
    return address.split("/", 1)[0]


def run_add(inv: CniInvocation, daemon) -> CniResult:
    """ADD: bind the pod if it asked for QoS, then pass prevResult through."""
    req = requirement_for(inv)
    prev = inv.net_conf.prev_result
    if req is None:
        return CniResult(payload=prev)
    if daemon is None:
        raise DaemonUnreachable(
            "a QoS requirement is present but no daemonSocket is configured"
        )
    pod_ip = pod_ip_from(prev)
    daemon.add(inv.container_id, pod_ip, req)
    return CniResult(payload=prev)


def run_del(inv: CniInvocation, daemon) -> CniResult:
    """DEL: tear down any binding; unknown containers succeed silently."""
    if daemon is not None:
        daemon.delete(inv.container_id)
    return CniResult(payload={})


def run_check(inv: CniInvocation, daemon) -> CniResult:
    """CHECK: recorded binding must match live enforcement and emulator state."""
    req = requirement_for(inv)
    report = daemon.check(inv.container_id) if daemon is not None else None
    if report is None or not report.expected:
        if req is None:
            return CniResult(payload={})  # nothing expected, nothing checked
        raise CheckFailed(
            f"no binding recorded for container {inv.container_id}",
            details="expected a binding because the configuration carries a QoS requirement",
        )
    if not report.ok:
        raise CheckFailed(
            f"binding for container {inv.container_id} has drifted",
            details="missing: " + ", ".join(report.missing),
        )
    return CniResult(payload={})


def run_version(inv: CniInvocation) -> CniResult:
    """VERSION: report the supported version list, whatever else is wrong."""
    conf_version = inv.net_conf.cni_version if inv.net_conf else SUPPORTED_VERSIONS[-1]
    return CniResult(
        payload={"cniVersion": conf_version, "supportedVersions": list(SUPPORTED_VERSIONS)}
    )


def result_document(result: CniResult) -> str:
    return _canonical(result.payload)


def error_document(exc: QosBridgeError, cni_version: str | None) -> str:
    doc = {
        "cniVersion": cni_version or SUPPORTED_VERSIONS[-1],
        "code": exc.cni_code,
        "msg": exc.msg,
        "details": exc.details,
    }
    return _canonical(doc)
