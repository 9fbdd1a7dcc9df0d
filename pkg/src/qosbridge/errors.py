"""Exception hierarchy shared across the plugin, daemon, and emulator.

Every error carries a stable ``kind`` string used on the wire (daemon socket
protocol, emulator REST bodies) and a CNI error code for the plugin's stdout
error document.
"""
from __future__ import annotations

# CNI well-known error codes (plugin result documents).
CNI_ERR_INCOMPATIBLE_VERSION = 1
CNI_ERR_INVALID_ENV = 4
CNI_ERR_IO = 5
CNI_ERR_DECODE = 6
CNI_ERR_INVALID_CONFIG = 7
# Plugin-specific codes start at 100.
CNI_ERR_DAEMON_UNREACHABLE = 100
CNI_ERR_ALLOCATION_EXHAUSTED = 101
CNI_ERR_QOS_UNMAPPABLE = 102
CNI_ERR_NETWORK_REJECTION = 103
CNI_ERR_BACKEND_FAILURE = 104
CNI_ERR_CHECK_FAILED = 105
CNI_ERR_INTERNAL = 199


class QosBridgeError(Exception):
    """Base class; subclasses pin a wire kind and a CNI exit code."""

    kind = "internal"
    cni_code = CNI_ERR_INTERNAL

    def __init__(self, msg: str, details: str = ""):
        super().__init__(msg)
        self.msg = msg
        self.details = details


class MissingCommand(QosBridgeError):
    kind = "missing-command"
    cni_code = CNI_ERR_INVALID_ENV


class MissingContainerId(QosBridgeError):
    kind = "missing-container-id"
    cni_code = CNI_ERR_INVALID_ENV


class MalformedConfig(QosBridgeError):
    kind = "malformed-config"
    cni_code = CNI_ERR_INVALID_CONFIG


class UnsupportedVersion(QosBridgeError):
    kind = "unsupported-version"
    cni_code = CNI_ERR_INCOMPATIBLE_VERSION


class DaemonUnreachable(QosBridgeError):
    kind = "daemon-unreachable"
    cni_code = CNI_ERR_DAEMON_UNREACHABLE


class DuplicateContainer(QosBridgeError):
    kind = "duplicate-container"
    cni_code = CNI_ERR_INVALID_CONFIG


class AllocationExhausted(QosBridgeError):
    kind = "allocation-exhausted"
    cni_code = CNI_ERR_ALLOCATION_EXHAUSTED


class PersistenceError(QosBridgeError):
    kind = "persistence-failure"
    cni_code = CNI_ERR_IO


class RegistryError(QosBridgeError):
    kind = "malformed-registry"
    cni_code = CNI_ERR_INVALID_CONFIG


class QosUnmappable(QosBridgeError):
    kind = "qos-unmappable"
    cni_code = CNI_ERR_QOS_UNMAPPABLE


class UnknownFiveQi(QosBridgeError):
    kind = "unknown-five-qi"
    cni_code = CNI_ERR_QOS_UNMAPPABLE


class ProfileTableError(QosBridgeError):
    kind = "malformed-profile-table"
    cni_code = CNI_ERR_INVALID_CONFIG


class IncompleteBinding(QosBridgeError):
    kind = "incomplete-binding"
    cni_code = CNI_ERR_INVALID_CONFIG


class BackendFailure(QosBridgeError):
    kind = "backend-failure"
    cni_code = CNI_ERR_BACKEND_FAILURE

    def __init__(self, msg: str, details: str = "", step_index: int | None = None):
        super().__init__(msg, details)
        self.step_index = step_index


class NetworkRejection(QosBridgeError):
    kind = "network-rejection"
    cni_code = CNI_ERR_NETWORK_REJECTION


class EmulatorUnreachable(QosBridgeError):
    kind = "emulator-unreachable"
    cni_code = CNI_ERR_NETWORK_REJECTION


class NotFound(QosBridgeError):
    kind = "not-found"
    cni_code = CNI_ERR_NETWORK_REJECTION


class Conflict(QosBridgeError):
    kind = "conflict"
    cni_code = CNI_ERR_NETWORK_REJECTION


class DependencyViolation(QosBridgeError):
    kind = "dependency-violation"
    cni_code = CNI_ERR_NETWORK_REJECTION


class CheckFailed(QosBridgeError):
    kind = "check-failed"
    cni_code = CNI_ERR_CHECK_FAILED


#: kind string -> exception class, for rehydrating errors off the wire.
ERRORS_BY_KIND = {
    cls.kind: cls
    for cls in [
        MissingCommand,
        MissingContainerId,
        MalformedConfig,
        UnsupportedVersion,
        DaemonUnreachable,
        DuplicateContainer,
        AllocationExhausted,
        PersistenceError,
        RegistryError,
        QosUnmappable,
        UnknownFiveQi,
        ProfileTableError,
        IncompleteBinding,
        BackendFailure,
        NetworkRejection,
        EmulatorUnreachable,
        NotFound,
        Conflict,
        DependencyViolation,
        CheckFailed,
    ]
}


def error_from_wire(kind: str, msg: str, details: str = "") -> QosBridgeError:
    """Rebuild a typed error from its wire representation."""
    cls = ERRORS_BY_KIND.get(kind, QosBridgeError)
    return cls(msg, details)
