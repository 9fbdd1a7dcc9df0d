"""qosbridge: maps pod QoS requirements onto cellular-network QoS flows.

The pieces, bottom up:

- ``fwmark``: the 32-bit packet-mark space, reserved-bit registry, and
  conflict-free per-pod mark allocation.
- ``qosmodel``: 5QI profile tables and the requirement-to-profile mapping.
- ``enforcement``: reversible mark/classifier plans with sim and shell
  backends.
- ``emulator``: the 5G-stack emulator (radio links, PDU sessions, QoS flows,
  mark filters) realized as a qdisc/class/filter tree, local or over REST.
- ``daemon``: the long-running coordinator serving the plugin's requests.
- ``cni``: the chained CNI plugin executable (ADD/DEL/CHECK/VERSION).
- ``overlay``/``experiment``: deterministic packet-path simulation and the
  traffic-priority experiment harness.
- ``cli``: the ``qosctl`` operator tool.
"""

__version__ = "0.1.0"
