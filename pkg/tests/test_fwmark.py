"""Mark-space math and the per-node allocator."""
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qosbridge.errors import AllocationExhausted, PersistenceError, RegistryError
from qosbridge.fwmark import (
    MARK_MAX,
    FwMarkSpace,
    ReservedEntry,
    _deposit,
    capacity,
    default_registry,
    free_mask,
    load_registry,
    reserved_mask,
)

# Hand-computed OR of the bundled registry's seven masks, frozen:
# 0xFFFF1FFF | 0x80 | 0x2000 | 0xC000 | 0xFFFF0000 | 0x60000 | 0xC0000
FULL_REGISTRY_OR = 0xFFFFFFFF

CILIUM_FREE = 0x0000E000  # bits 13..15


class TestRegistryParsing:
    def test_single_line(self):
        entries = load_registry("Cilium 0xFFFF1FFF\n")
        assert entries == [ReservedEntry("Cilium", 0xFFFF1FFF)]

    def test_comments_and_blank_lines(self):
        doc = "# header\n\nCilium 0xFFFF1FFF  # trailing\n   \n"
        assert load_registry(doc) == [ReservedEntry("Cilium", 0xFFFF1FFF)]

    def test_names_with_spaces_take_last_token_as_mask(self):
        entries = load_registry("AWS CNI 0x80\n")
        assert entries == [ReservedEntry("AWS CNI", 0x80)]

    def test_missing_mask_rejected(self):
        with pytest.raises(RegistryError, match="line 1"):
            load_registry("Cilium\n")

    def test_bad_hex_rejected(self):
        with pytest.raises(RegistryError, match="malformed mask"):
            load_registry("Cilium 0xZZ\n")

    def test_zero_mask_rejected(self):
        with pytest.raises(RegistryError, match="32-bit nonzero"):
            load_registry("Cilium 0x0\n")

    def test_mask_wider_than_32_bits_rejected(self):
        with pytest.raises(RegistryError):
            load_registry("Cilium 0x100000000\n")

    def test_duplicate_name_rejected(self):
        with pytest.raises(RegistryError, match="duplicate"):
            load_registry("Cilium 0x1\nCilium 0x2\n")

    def test_overlap_is_accepted_with_warning(self, caplog):
        with caplog.at_level("WARNING"):
            entries = load_registry("A 0x3\nB 0x6\n")
        assert reserved_mask(entries) == 0x7
        assert "overlaps" in caplog.text

    def test_bundled_registry_has_seven_entries(self):
        assert len(default_registry()) == 7


class TestMaskMath:
    def test_cilium_only_free_mask(self, cilium_entries):
        assert free_mask(cilium_entries) == CILIUM_FREE
        assert bin(free_mask(cilium_entries)).count("1") == 3
        assert capacity(free_mask(cilium_entries)) == 7

    def test_empty_registry_frees_everything(self):
        assert free_mask([]) == MARK_MAX
        assert capacity(MARK_MAX) == 2**32 - 1

    def test_full_registry_or_oracle(self):
        entries = default_registry()
        assert reserved_mask(entries) == FULL_REGISTRY_OR
        assert free_mask(entries) == 0
        assert capacity(0) == 0

    @given(st.lists(st.integers(min_value=1, max_value=MARK_MAX), max_size=8))
    def test_free_is_complement_of_reserved(self, masks):
        entries = [ReservedEntry(f"e{i}", m) for i, m in enumerate(masks)]
        assert reserved_mask(entries) | free_mask(entries) == MARK_MAX
        assert reserved_mask(entries) & free_mask(entries) == 0


class TestDeposit:
    def test_enumeration_order_within_cilium_free_bits(self):
        values = [_deposit(i, CILIUM_FREE) for i in range(1, 8)]
        assert values == [0x2000, 0x4000, 0x6000, 0x8000, 0xA000, 0xC000, 0xE000]

    @given(st.integers(min_value=1, max_value=MARK_MAX))
    def test_every_value_stays_within_mask(self, mask):
        nbits = bin(mask).count("1")
        seen = set()
        last = 0
        for index in range(1, min(1 << nbits, 64)):
            value = _deposit(index, mask)
            assert value & ~mask == 0
            assert value > last  # increasing numeric order
            last = value
            seen.add(value)
        assert len(seen) == min((1 << nbits) - 1, 63)


class TestFwMarkSpace:
    def test_lowest_first_allocation(self, cilium_entries):
        space = FwMarkSpace(cilium_entries)
        assert [space.allocate() for _ in range(3)] == [0x2000, 0x4000, 0x6000]

    def test_exhaustion_after_capacity(self, cilium_entries):
        space = FwMarkSpace(cilium_entries)
        for _ in range(7):
            space.allocate()
        with pytest.raises(AllocationExhausted):
            space.allocate()

    def test_exhaustion_when_no_free_bits(self):
        space = FwMarkSpace(default_registry())
        with pytest.raises(AllocationExhausted):
            space.allocate()

    def test_release_reopens_lowest_value(self, cilium_entries):
        space = FwMarkSpace(cilium_entries)
        marks = [space.allocate() for _ in range(3)]
        space.release(marks[0])
        assert space.allocate() == marks[0]

    def test_release_unknown_is_noop(self, cilium_entries):
        space = FwMarkSpace(cilium_entries)
        space.release(0x2000)
        assert space.allocated == frozenset()

    def test_marks_never_touch_reserved_bits(self, cilium_entries):
        space = FwMarkSpace(cilium_entries)
        for _ in range(7):
            assert space.allocate() & space.reserved_mask == 0

    def test_persistence_survives_restart(self, tmp_path, cilium_entries):
        path = str(tmp_path / "marks.db")
        space = FwMarkSpace(cilium_entries, path)
        first = space.allocate()
        second = space.allocate()
        space.release(first)

        reloaded = FwMarkSpace(cilium_entries, path)
        assert reloaded.allocated == frozenset({second})
        assert reloaded.allocate() == first

    def test_corrupt_state_header_rejected(self, tmp_path, cilium_entries):
        path = tmp_path / "marks.db"
        path.write_text("something else\n")
        with pytest.raises(PersistenceError, match="header"):
            FwMarkSpace(cilium_entries, str(path))

    def test_unknown_state_line_rejected(self, tmp_path, cilium_entries):
        path = tmp_path / "marks.db"
        path.write_text("fwmark-state v1\nbogus line\n")
        with pytest.raises(PersistenceError, match="unrecognized state line"):
            FwMarkSpace(cilium_entries, str(path))

    def test_registry_change_since_persist_warns(self, tmp_path, cilium_entries, caplog):
        path = str(tmp_path / "marks.db")
        FwMarkSpace(cilium_entries, path).allocate()
        with caplog.at_level("WARNING"):
            FwMarkSpace(default_registry(), path)
        assert "registry changed" in caplog.text

    def test_dump_state_is_canonical(self, cilium_entries):
        space = FwMarkSpace(cilium_entries)
        a = space.allocate()
        b = space.allocate()
        space.release(a)
        space.release(b)
        assert space.dump_state() == "reserved 0xffff1fff\n"

    def test_concurrent_allocation_is_duplicate_free(self, cilium_entries):
        space = FwMarkSpace(cilium_entries)
        results = []
        errors = []

        def worker():
            try:
                results.append(space.allocate())
            except AllocationExhausted as exc:
                errors.append(exc)

        threads = [threading.Thread(target=worker) for _ in range(10)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(results) == 7 and len(errors) == 3
        assert len(set(results)) == 7

    @given(st.data())
    @settings(max_examples=50, deadline=None)
    def test_allocate_release_interleaving_invariants(self, data):
        space = FwMarkSpace([ReservedEntry("x", MARK_MAX ^ 0xF0)])
        held = []
        for _ in range(data.draw(st.integers(min_value=1, max_value=30))):
            if held and data.draw(st.booleans()):
                mark = data.draw(st.sampled_from(held))
                held.remove(mark)
                space.release(mark)
            else:
                try:
                    mark = space.allocate()
                except AllocationExhausted:
                    assert len(held) == 15
                    continue
                assert mark not in held
                assert mark & ~0xF0 == 0 and mark != 0
                held.append(mark)
        assert space.allocated == frozenset(held)
