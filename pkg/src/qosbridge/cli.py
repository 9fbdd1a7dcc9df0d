"""qosctl: inspect daemon state, audit registries, run experiments.

Exit codes: 0 success, 2 usage or unreadable input, 3 daemon unreachable,
4 emulator unreachable, 1 anything else. Output is deterministic for a given
state and seed; ``--machine`` switches to tab-separated fields.
"""
from __future__ import annotations

import argparse
import sys

from .daemon.client import SocketDaemonClient
from .emulator.client import HttpEmulatorClient
from .errors import (
    DaemonUnreachable,
    EmulatorUnreachable,
    MalformedConfig,
    ProfileTableError,
    QosBridgeError,
    RegistryError,
)
from .experiment import load_scenario, render_report, run_priority_experiment
from .fwmark import capacity, free_mask, load_registry, reserved_mask

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_DAEMON_UNREACHABLE = 3
EXIT_EMULATOR_UNREACHABLE = 4


def _daemon_client(socket_path: str):
    return SocketDaemonClient(socket_path)


def _emulator_client(url: str):
    return HttpEmulatorClient(url)


def _table(rows) -> str:
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    return (
        "\n".join(
            "  ".join(r[c].ljust(widths[c]) for c in range(len(r))).rstrip() for r in rows
        )
        + "\n"
    )


def cmd_bindings(args) -> int:
    client = _daemon_client(args.daemon_socket)
    rows = sorted(client.bindings(), key=lambda b: b["container_id"])
    if args.machine:
        out = ["container\tpod_ip\tmark\tfive_qi\tsession\tqfi"]
        for b in rows:
            out.append(
                f"{b['container_id']}\t{b['pod_ip']}\t{b['mark']:#x}"
                f"\t{b['profile']['five_qi']}\t{b['pdu_session_id']}\t{b['qfi']}"
            )
        sys.stdout.write("\n".join(out) + "\n")
        return EXIT_OK
    table = [("container", "pod-ip", "mark", "five-qi", "session", "qfi")]
    for b in rows:
        table.append(
            (
                b["container_id"],
                b["pod_ip"],
                f"{b['mark']:#x}",
                str(b["profile"]["five_qi"]),
                b["pdu_session_id"],
                str(b["qfi"]),
            )
        )
    sys.stdout.write(_table(table))
    return EXIT_OK


def cmd_fwmark_audit(args) -> int:
    try:
        with open(args.registry_file) as fh:
            document = fh.read()
    except OSError as exc:
        raise MalformedConfig(f"cannot read registry {args.registry_file}: {exc}") from exc
    entries = load_registry(document)
    reserved = reserved_mask(entries)
    free = free_mask(entries)
    bits = bin(free).count("1")
    if args.machine:
        lines = [
            f"reserved\t{reserved:#010x}",
            f"free\t{free:#010x}",
            f"free_bits\t{bits}",
            f"capacity\t{capacity(free)}",
        ]
        lines += [f"entry\t{e.software_name}\t{e.mark_mask:#010x}" for e in entries]
        sys.stdout.write("\n".join(lines) + "\n")
        return EXIT_OK
    lines = [
        f"reserved mask {reserved:#010x}",
        f"free mask     {free:#010x}",
        f"free bits     {bits}",
        f"capacity      {capacity(free)} marks",
        "entries:",
    ]
    if entries:
        width = max(len(e.software_name) for e in entries)
        lines += [f"  {e.software_name.ljust(width)}  {e.mark_mask:#010x}" for e in entries]
    else:
        lines.append("  (none)")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_experiment(args) -> int:
    scenario = load_scenario(args.description_file)
    emulator = _emulator_client(args.emulator_url) if args.emulator_url else None
    report = run_priority_experiment(scenario, seed=args.seed, emulator=emulator)
    sys.stdout.write(render_report(report, machine=args.machine))
    return EXIT_OK


def cmd_tree(args) -> int:
    client = _emulator_client(args.emulator_url)
    sys.stdout.write(client.dump_tree())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qosctl", description="Operator tooling for the traffic-priority stack."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bindings", help="list live pod bindings from the daemon")
    p.add_argument("--daemon-socket", required=True, help="daemon Unix socket path")
    p.add_argument("--machine", action="store_true", help="tab-separated output")
    p.set_defaults(func=cmd_bindings)

    p = sub.add_parser("fwmark-audit", help="report reserved/free bits of a registry")
    p.add_argument("registry_file", help="registry document to audit")
    p.add_argument("--machine", action="store_true", help="tab-separated output")
    p.set_defaults(func=cmd_fwmark_audit)

    p = sub.add_parser("experiment", help="run a traffic-priority experiment")
    p.add_argument("description_file", help="scenario description file")
    p.add_argument("--emulator-url", help="use a running emulator instead of in-process")
    p.add_argument("--seed", type=int, help="override the scenario's schedule seed")
    p.add_argument("--machine", action="store_true", help="tab-separated output")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("tree", help="print the emulator's qdisc/class/filter tree")
    p.add_argument("--emulator-url", required=True, help="emulator base URL")
    p.set_defaults(func=cmd_tree)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DaemonUnreachable as exc:
        print(f"error: {exc.msg}", file=sys.stderr)
        return EXIT_DAEMON_UNREACHABLE
    except EmulatorUnreachable as exc:
        print(f"error: {exc.msg}", file=sys.stderr)
        return EXIT_EMULATOR_UNREACHABLE
    except (MalformedConfig, RegistryError, ProfileTableError) as exc:
        print(f"error: {exc.msg}", file=sys.stderr)
        return EXIT_USAGE
    except QosBridgeError as exc:
        print(f"error: {exc.msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
