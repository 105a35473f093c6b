import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmemsim.memmap import (CPU_OWNER, AddressLayout, FrameRegion, PagePolicy,
                            PageTable, Pool, build_color_map, classify_access)

DEFAULT = AddressLayout(byte_offset_bits=6, column_bits=7, channel_bits=1,
                        bank_bits=4, row_bits=14, page_offset_bits=12)
SMALL = AddressLayout(byte_offset_bits=2, column_bits=3, channel_bits=1,
                      bank_bits=2, row_bits=5, page_offset_bits=4)


def mask_decompose(addr, layout):
    """Independent shift/mask reference for the field extraction."""
    widths = [layout.byte_offset_bits, layout.column_bits, layout.channel_bits,
              layout.bank_bits, layout.row_bits]
    vals = []
    shift = 0
    for w in widths:
        vals.append((addr >> shift) & ((1 << w) - 1))
        shift += w
    byte, column, channel, bank, row = vals
    return channel, bank, row, column, byte


def test_decompose_zero():
    d = DEFAULT.decompose(0)
    assert (d.channel, d.bank, d.row, d.column, d.byte) == (0, 0, 0, 0, 0)


def test_compose_known_value():
    addr = DEFAULT.compose(channel=1, bank=3, row=2, column=5, byte=0)
    assert addr == 0x8E140


def test_round_trip_random_addresses():
    rng = random.Random(1234)
    for layout in (DEFAULT, SMALL):
        hi = 1 << layout.address_bits
        for _ in range(10_000):
            addr = rng.randrange(hi)
            d = layout.decompose(addr)
            assert layout.compose(d.channel, d.bank, d.row, d.column, d.byte) == addr
            assert mask_decompose(addr, layout) == (
                d.channel, d.bank, d.row, d.column, d.byte)


def test_out_of_range_address_faults():
    with pytest.raises(ValueError):
        SMALL.decompose(1 << SMALL.address_bits)


def test_coloring_feasibility_rejected():
    bad = AddressLayout(byte_offset_bits=6, column_bits=7, channel_bits=1,
                        bank_bits=4, row_bits=14, page_offset_bits=14)
    bad.validate(coloring=False)
    with pytest.raises(ValueError, match="coloring infeasible"):
        bad.validate(coloring=True)


def test_default_layout_has_coloring_slack():
    DEFAULT.validate(coloring=True)
    assert DEFAULT.page_offset_bits + 1 == (
        DEFAULT.column_bits + DEFAULT.byte_offset_bits)
    assert DEFAULT.pages_per_row == 2


def test_color_map_even_division():
    cm = build_color_map(8, DEFAULT)
    assert all(len(v) == 4 for v in cm.values())
    flat = [p for v in cm.values() for p in v]
    assert len(flat) == len(set(flat)) == 32


def test_color_map_too_many_sms():
    with pytest.raises(ValueError):
        build_color_map(64, SMALL)


def make_table(policy, num_sms=2, region=None, cpu_pool=Pool.DDR):
    layouts = {Pool.GDDR: SMALL,
               Pool.DDR: AddressLayout(2, 3, 0, 2, 5, 4)}
    cm = build_color_map(num_sms, SMALL)
    return PageTable(policy, layouts, cm, region=region, cpu_pool=cpu_pool)


def test_first_touch_fills_gddr_in_frame_order():
    t = make_table(PagePolicy.FIRST_TOUCH)
    frames = [t.allocate_page(v, 0).frame for v in range(4)]
    assert frames == [0, 1, 2, 3]
    assert t.pool_pages[Pool.GDDR] == 4


def test_coloring_respects_owner_colors():
    t = make_table(PagePolicy.COLORING)
    for v in range(6):
        e = t.allocate_page(v, 1)
        assert (e.channel, e.bank) in t.color_map[1]
    assert t.spilled_pages == 0


def test_coloring_packs_rows_before_opening_new_ones():
    # single SM owning one bank: two pages per row
    layouts = {Pool.GDDR: SMALL, Pool.DDR: AddressLayout(2, 3, 0, 2, 5, 4)}
    cm = {0: ((0, 0),)}
    t = PageTable(PagePolicy.COLORING, layouts, cm)
    entries = [t.allocate_page(v, 0) for v in range(4)]
    assert [e.row for e in entries] == [0, 0, 1, 1]
    assert all((e.channel, e.bank) == (0, 0) for e in entries)


def test_coloring_spills_when_colors_exhausted():
    layouts = {Pool.GDDR: SMALL, Pool.DDR: AddressLayout(2, 3, 0, 2, 5, 4)}
    # one SM restricted to one bank: 32 rows * 2 pages per row = 64 frames
    t = PageTable(PagePolicy.COLORING, layouts, {0: ((0, 0),)})
    for v in range(64):
        t.allocate_page(v, 0)
    assert t.spilled_pages == 0
    e = t.allocate_page(64, 0)
    assert t.spilled_pages == 1
    assert (e.channel, e.bank) != (0, 0)


def test_bw_aware_ratio():
    t = make_table(PagePolicy.BW_AWARE)
    t.bw_ratio = (2, 1)
    for v in range(300):
        t.allocate_page(v, 0)
    assert t.pool_pages[Pool.GDDR] == 200
    assert t.pool_pages[Pool.DDR] == 100


def test_hetero_row_split():
    region = FrameRegion.split(SMALL.num_rows, 0.5)
    region.validate(SMALL.num_rows)
    t = make_table(PagePolicy.COLORING_HETERO, region=region,
                   cpu_pool=Pool.GDDR)
    gpu = [t.allocate_page(v, 0) for v in range(8)]
    cpu = [t.allocate_page(100 + v, CPU_OWNER) for v in range(8)]
    g_lo, g_hi = region.gpu_rows
    c_lo, c_hi = region.cpu_rows
    assert all(g_lo <= e.row < g_hi for e in gpu)
    assert all(c_lo <= e.row < c_hi for e in cpu)
    assert all(e.pool is Pool.GDDR for e in gpu + cpu)


def test_hetero_requires_region():
    with pytest.raises(ValueError, match="frame region"):
        make_table(PagePolicy.COLORING_HETERO)


def test_frame_injectivity():
    t = make_table(PagePolicy.COLORING)
    seen = set()
    for v in range(40):
        e = t.allocate_page(v, v % 2)
        key = (e.pool, e.frame)
        assert key not in seen
        seen.add(key)


def test_translate_allocates_once():
    t = make_table(PagePolicy.FIRST_TOUCH)
    pool_a, pa = t.translate(0x13, 0)
    pool_b, pb = t.translate(0x17, 1)  # same page, later touch ignored
    assert pool_a is pool_b
    assert pa // 16 == pb // 16
    assert len(t.entries) == 1


def test_classification():
    t = make_table(PagePolicy.COLORING)
    e0 = t.allocate_page(0, 0)
    assert classify_access(0, e0.pool, e0.channel, e0.bank, t) == "local"
    assert classify_access(1, e0.pool, e0.channel, e0.bank, t) == "remote"


def test_ddr_never_local():
    t = make_table(PagePolicy.FIRST_TOUCH)
    e = t.allocate_page(5, CPU_OWNER)
    assert e.pool is Pool.DDR
    assert classify_access(0, e.pool, e.channel, e.bank, t) == "remote"


def test_pool_exhaustion_faults():
    layouts = {Pool.GDDR: AddressLayout(2, 2, 0, 0, 1, 4),
               Pool.DDR: AddressLayout(2, 2, 0, 0, 1, 4)}
    t = PageTable(PagePolicy.FIRST_TOUCH, layouts, {0: ((0, 0),)})
    t.allocate_page(0, 0)  # 2 rows x 1 page per row
    t.allocate_page(1, 0)
    with pytest.raises(MemoryError):
        t.allocate_page(2, 0)


def test_region_split_covers_bank():
    region = FrameRegion.split(32, 0.25)
    region.validate(32)
    assert region.gpu_rows == (0, 24)
    assert region.cpu_rows == (24, 32)
    with pytest.raises(ValueError):
        FrameRegion(gpu_rows=(0, 10), cpu_rows=(12, 32)).validate(32)


@settings(max_examples=60, deadline=None)
@given(byte=st.integers(0, 6), col=st.integers(0, 7), ch=st.integers(0, 2),
       bank=st.integers(0, 4), row=st.integers(1, 10), data=st.data())
def test_round_trip_property(byte, col, ch, bank, row, data):
    layout = AddressLayout(byte, col, ch, bank, row,
                           page_offset_bits=min(byte + col, byte + col))
    layout.validate()
    addr = data.draw(st.integers(0, (1 << layout.address_bits) - 1))
    d = layout.decompose(addr)
    assert layout.compose(d.channel, d.bank, d.row, d.column, d.byte) == addr
