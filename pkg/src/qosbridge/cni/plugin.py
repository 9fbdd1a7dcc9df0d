"""Entry point for the traffic-priority plugin binary.

Reads CNI_* environment variables and the configuration document on stdin,
dispatches the command, and prints either the pass-through result or a
structured error document. Exit status is 0 on success, 1 on error.
"""
from __future__ import annotations

import os
import sys

from ..daemon.client import SocketDaemonClient
from ..errors import QosBridgeError
from . import protocol


def _default_daemon_factory(socket_path: str):
    return SocketDaemonClient(socket_path)


def execute(env, stdin_bytes: bytes, daemon_factory=None) -> tuple[int, str]:
    """Run one plugin invocation; returns (exit_status, stdout_text)."""
    daemon_factory = daemon_factory or _default_daemon_factory
    version_hint = protocol._version_only(stdin_bytes)
    try:
        inv = protocol.parse_invocation(env, stdin_bytes)
        if inv.command == "VERSION":
            result = protocol.run_version(inv)
            return 0, protocol.result_document(result)
        version_hint = inv.net_conf.cni_version
        socket_path = inv.net_conf.daemon_socket
        daemon = daemon_factory(socket_path) if socket_path else None
        if inv.command == "ADD":
            result = protocol.run_add(inv, daemon)
        elif inv.command == "DEL":
            result = protocol.run_del(inv, daemon)
        else:
            result = protocol.run_check(inv, daemon)
        return 0, protocol.result_document(result)
    except QosBridgeError as exc:
        return 1, protocol.error_document(exc, version_hint)


def main(argv=None) -> int:
    status, output = execute(dict(os.environ), sys.stdin.buffer.read())
    sys.stdout.write(output + "\n")
    return status


if __name__ == "__main__":
    raise SystemExit(main())
