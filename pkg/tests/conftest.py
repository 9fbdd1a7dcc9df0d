import pytest

from qosbridge.daemon.config import DaemonConfig
from qosbridge.daemon.core import QosDaemon
from qosbridge.fwmark import load_registry

CILIUM_ONLY = "Cilium 0xFFFF1FFF\n"


@pytest.fixture
def cilium_entries():
    return load_registry(CILIUM_ONLY)


@pytest.fixture
def make_daemon(tmp_path, cilium_entries):
    """Factory for a daemon with an in-process emulator and sim backend.

    Store/allocator files live under tmp_path so restart scenarios can point
    a second daemon at the same files.
    """
    counter = [0]

    def build(entries=None, table=None, config=None, emulator=None, backend=None, reuse_dir=None):
        counter[0] += 1
        base = reuse_dir if reuse_dir is not None else tmp_path / f"d{counter[0]}"
        base.mkdir(exist_ok=True)
        cfg = config or DaemonConfig()
        cfg.store_path = str(base / "bindings.db")
        cfg.fwmark_state_path = str(base / "fwmark.db")
        return QosDaemon(
            cfg,
            emulator=emulator,
            backend=backend,
            registry_entries=cilium_entries if entries is None else entries,
            profile_table=table,
        )

    return build
