"""32-bit fwmark space: reserved-bit registry, free-mask math, allocation.

Marks tag packets in the kernel's metadata, never in wire bytes. Coexisting
software reserves mark bits; a per-pod mark may only use bits outside the
union of those reservations. Allocation is whole-value within the free bits,
lowest value first, so a free mask with k bits supports 2^k - 1 pods.
"""
from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass
from importlib import resources

from ._util import atomic_write_text
from .errors import AllocationExhausted, PersistenceError, RegistryError

log = logging.getLogger(__name__)

MARK_MAX = 0xFFFFFFFF

STATE_HEADER = "fwmark-state v1"
DEFAULT_REGISTRY_RESOURCE = "fwmark-registry.conf"


@dataclass(frozen=True)
class ReservedEntry:
    """One row of the registry: a piece of software and the mark bits it owns."""

    software_name: str
    mark_mask: int

    def __post_init__(self):
        if not self.software_name:
            raise RegistryError("registry entry needs a software name")
        if not 0 < self.mark_mask <= MARK_MAX:
            raise RegistryError(
                f"mask for {self.software_name!r} must be a nonzero 32-bit value, "
                f"got {self.mark_mask:#x}"
            )


def reserved_mask(entries) -> int:
    """Union of all reserved bits."""
    mask = 0
    for entry in entries:
        mask |= entry.mark_mask
    return mask


def free_mask(entries) -> int:
    """Bits usable for pod marks: the complement of every reservation."""
    return MARK_MAX & ~reserved_mask(entries)


def capacity(mask: int) -> int:
    """Number of distinct nonzero marks expressible within ``mask``."""
    return (1 << bin(mask).count("1")) - 1


def load_registry(document: str) -> list[ReservedEntry]:
    """Parse a registry document: one ``<name> <hex-mask>`` per line, # comments.

    Names may contain spaces; the mask is the last token. Overlapping masks
    are legal (OR semantics) but logged, since two packages claiming the same
    bit usually means one of them will clobber the other on a real node.
    """
    entries: list[ReservedEntry] = []
    seen: set[str] = set()
    union = 0
    for lineno, raw in enumerate(document.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2:
            raise RegistryError(f"line {lineno}: expected '<name> <hex-mask>', got {line!r}")
        mask_text = parts[-1]
        name = " ".join(parts[:-1])
        try:
            mask = int(mask_text, 16)
        except ValueError:
            raise RegistryError(f"line {lineno}: malformed mask {mask_text!r}") from None
        if not 0 < mask <= MARK_MAX:
            raise RegistryError(f"line {lineno}: mask {mask_text!r} outside 32-bit nonzero range")
        if name in seen:
            raise RegistryError(f"line {lineno}: duplicate software name {name!r}")
        seen.add(name)
        if union & mask:
            log.warning(
                "registry entry %r overlaps previously reserved bits %#x", name, union & mask
            )
        union |= mask
        entries.append(ReservedEntry(name, mask))
    return entries


def default_registry_text() -> str:
    """The bundled registry document (the known bitwise-usage catalogue)."""
    return resources.files("qosbridge.data").joinpath(DEFAULT_REGISTRY_RESOURCE).read_text()


def default_registry() -> list[ReservedEntry]:
    return load_registry(default_registry_text())


def _deposit(index: int, mask: int) -> int:
    """Spread the bits of ``index`` into the set bit positions of ``mask``.

    Enumerating index = 1, 2, ... yields every value expressible within the
    mask in increasing numeric order.
    """
    value = 0
    bit = 1
    while mask:
        low = mask & -mask
        if index & bit:
            value |= low
        mask ^= low
        bit <<= 1
    return value


class FwMarkSpace:
    """The shared allocation state for one node's mark space.

    All mutation is serialized through an internal lock; ``free_mask`` and
    friends are safe to read concurrently. When ``persistence_path`` is set,
    every allocation/release is written through (atomic replace) so a daemon
    restart cannot double-allocate.
    """

    def __init__(self, entries, persistence_path: str | None = None):
        self._entries = tuple(entries)
        self._reserved = reserved_mask(self._entries)
        self._allocated: set[int] = set()
        self._path = persistence_path
        self._lock = threading.Lock()
        self._dirty = False
        if self._path and os.path.exists(self._path):
            self._load()

    @property
    def entries(self) -> tuple[ReservedEntry, ...]:
        return self._entries

    @property
    def reserved_mask(self) -> int:
        return self._reserved

    @property
    def free_mask(self) -> int:
        return MARK_MAX & ~self._reserved

    @property
    def allocated(self) -> frozenset[int]:
        return frozenset(self._allocated)

    def allocate(self) -> int:
        """Return the lowest unallocated nonzero value within the free bits."""
        with self._lock:
            mask = self.free_mask
            if mask == 0:
                raise AllocationExhausted("no free bits remain in the fwmark space")
            nbits = bin(mask).count("1")
            for index in range(1, 1 << nbits):
                value = _deposit(index, mask)
                if value not in self._allocated:
                    break
            else:
                raise AllocationExhausted(
                    f"all {capacity(mask)} marks within free mask {mask:#010x} are in use"
                )
            self._allocated.add(value)
            try:
                self._persist_locked()
            except OSError as exc:
                self._allocated.discard(value)
                raise PersistenceError(f"could not persist mark state: {exc}") from exc
            return value

    def release(self, mark: int) -> None:
        """Forget ``mark``; releasing an unallocated value is a no-op."""
        with self._lock:
            if mark not in self._allocated:
                return
            self._allocated.discard(mark)
            try:
                self._persist_locked()
            except OSError as exc:
                # The in-memory release stands; the write retries on flush.
                self._dirty = True
                log.warning("mark state persist failed after release (%s); retry pending", exc)

    def flush(self) -> None:
        """Retry a persist that failed during release."""
        with self._lock:
            if self._dirty:
                self._persist_locked()
                self._dirty = False

    def dump_state(self) -> str:
        """Canonical text for state diffs: reserved mask plus sorted marks."""
        with self._lock:
            lines = [f"reserved {self._reserved:#010x}"]
            lines += [f"allocated {value:#010x}" for value in sorted(self._allocated)]
        return "\n".join(lines) + "\n"

    def _persist_locked(self) -> None:
        if not self._path:
            return
        lines = [STATE_HEADER]
        lines += [f"entry {e.software_name} {e.mark_mask:#010x}" for e in self._entries]
        lines += [f"allocated {value:#010x}" for value in sorted(self._allocated)]
        atomic_write_text(self._path, "\n".join(lines) + "\n")
        self._dirty = False

    def _load(self) -> None:
        with open(self._path) as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != STATE_HEADER:
            raise PersistenceError(f"unrecognized state file header in {self._path}")
        recorded = 0
        for line in lines[1:]:
            if not line.strip():
                continue
            if line.startswith("allocated "):
                value = int(line.split()[1], 16)
                if value & self._reserved:
                    log.warning(
                        "persisted mark %#x overlaps the current reserved mask %#x",
                        value,
                        self._reserved,
                    )
                self._allocated.add(value)
            elif line.startswith("entry "):
                recorded |= int(line.split()[-1], 16)
            else:
                raise PersistenceError(f"unrecognized state line {line!r} in {self._path}")
        if recorded != self._reserved:
            log.warning(
                "registry changed since state was written (was %#x, now %#x)",
                recorded,
                self._reserved,
            )
