import pytest

import fixture_lib
from cmsift.datascan import (
    find_data_segment,
    find_switch_helpers,
    identify_inline_data,
    load_helper_signatures,
)
from cmsift.executor import Executor
from cmsift.image import DataSource, FirmwareImage, read_vector_table
from cmsift.isa import LR, decode_stream


def scanned(res):
    img = FirmwareImage(data=res.data, code_base=res.base)
    read_vector_table(img)
    scan = identify_inline_data(img)
    return img, scan


def annotated_bytes(img):
    return {a for a in img._data_bytes}


def expect_range(res, label, size):
    start = res.symbols[label]
    return set(range(start, start + size))


# ---------------------------------------------------------------------------
# reset-handler .data segment

def test_data_segment_discovered():
    res = fixture_lib.data_segment_fixture(data_size=16)
    img, scan = scanned(res)
    text_end = res.symbols["text_end"]
    assert scan.data_segment == (
        text_end, fixture_lib.RAM_DATA_START, fixture_lib.RAM_DATA_START + 16)
    # every byte from text end to EOF is data
    for a in range(text_end, img.end):
        assert img.is_data(a)
    # and the data-segment source has top precedence
    assert img.data_source(text_end) == DataSource.RESET_HANDLER_SEGMENT


def test_data_segment_ground_truth_byte_for_byte():
    res = fixture_lib.data_segment_fixture(data_size=16)
    img, scan = scanned(res)
    pool = {a for start, size in res.data_ranges
            for a in range(start, start + size)
            if start >= res.symbols["reset"]}
    assert annotated_bytes(img) == pool


def test_no_loads_means_no_segment():
    res = fixture_lib.base_fixture(0)
    img = FirmwareImage(data=res.data, code_base=0)
    read_vector_table(img)
    instrs = decode_stream(img)
    assert find_data_segment(img, res.symbols["reset"], instrs) is None


# ---------------------------------------------------------------------------
# PC-relative loads

def test_literal_annotations_byte_for_byte():
    res = fixture_lib.literal_fixture()
    img, scan = scanned(res)
    expected = (expect_range(res, "word_slot", 4)
                | expect_range(res, "half_slot", 2)
                | expect_range(res, "byte_slot", 1))
    assert annotated_bytes(img) == expected


def test_word_slot_emits_no_instruction():
    res = fixture_lib.literal_fixture()
    img, scan = scanned(res)
    slot = res.symbols["word_slot"]
    assert slot not in scan.instructions
    assert slot + 2 not in scan.instructions


def test_ldrh_residual_redecoded():
    """Partial consumption of a word-aligned slot: the trailing halfword
    after the 2-byte literal decodes as an instruction again."""
    res = fixture_lib.literal_fixture()
    img, scan = scanned(res)
    residual = res.symbols["residual"]
    assert residual in scan.instructions
    assert scan.instructions[residual].render() == "movs r0, #34"


def test_reannotation_is_idempotent():
    res = fixture_lib.literal_fixture()
    img, scan = scanned(res)
    before = dict(img._data_bytes)
    from cmsift.datascan import scan_pc_relative_loads
    assert scan_pc_relative_loads(img, scan.instructions) is False
    assert img._data_bytes == before


# ---------------------------------------------------------------------------
# table branches

def test_tbb_table_annotated_and_targets():
    res = fixture_lib.tbb_fixture()
    img, scan = scanned(res)
    table = res.symbols["tb_table"]
    # cmp value 2, byte entries: [table, table + 2*1 + 2)
    assert annotated_bytes(img) >= set(range(table, table + 4))
    ts = scan.target_sets[res.symbols["tb_table"] - 4]
    want = {res.symbols[f"case{i}"] for i in range(3)}
    assert set(ts.targets) == want


def test_tbb_ground_truth_byte_for_byte():
    res = fixture_lib.tbb_fixture()
    img, scan = scanned(res)
    expected = expect_range(res, "tb_table", 4)
    assert annotated_bytes(img) == expected


def test_tbh_six_cases():
    res = fixture_lib.tbh_fixture(cases=6)
    img, scan = scanned(res)
    table = res.symbols["th_table"]
    assert annotated_bytes(img) == set(range(table, table + 12))
    origin = table - 4
    assert len(scan.target_sets[origin].targets) == 6
    assert set(scan.target_sets[origin].targets) == \
        {res.symbols[f"hcase{i}"] for i in range(6)}


def test_degenerate_cmp_zero_bound():
    # cmp value 0 -> minimal 2-byte table per the bound formula
    template = (
        fixture_lib.vector_table()
        + """
reset:
    b reset
nmi:
    b nmi
hardfault:
    b hardfault
pendsv:
    b pendsv
systick:
    b systick
main:
    cmp r0, #0
    bhi dflt
    tbb [pc, r0]
ztable:
    .byte <<(zcase-ztable)//2>>
    .byte 0
zcase:
    movs r1, #1
dflt:
    bx lr
"""
    )
    res = fixture_lib.assemble_twice(template, base=0)
    img, scan = scanned(res)
    table = res.symbols["ztable"]
    assert annotated_bytes(img) == set(range(table, table + 2))


# ---------------------------------------------------------------------------
# switch helpers

def test_helper_prologues_located():
    res = fixture_lib.gnu_switch_fixture()
    img = FirmwareImage(data=res.data, code_base=0)
    helpers = find_switch_helpers(img, load_helper_signatures())
    assert res.symbols["gnu_uqi"] in helpers
    assert helpers[res.symbols["gnu_uqi"]]["name"] == "__gnu_thumb1_case_uqi"


def test_gnu_switch_table_and_targets():
    res = fixture_lib.gnu_switch_fixture()
    img, scan = scanned(res)
    table = res.symbols["g_table"]
    assert annotated_bytes(img) == set(range(table, table + 4))
    ts = scan.target_sets[table - 4]      # the bl site
    assert set(ts.targets) == {res.symbols[f"gcase{i}"] for i in range(4)}


def test_keil_switch_table_and_targets():
    res = fixture_lib.keil_switch_fixture()
    img, scan = scanned(res)
    table = res.symbols["k_table"]
    assert annotated_bytes(img) == set(range(table, table + 6))
    ts = scan.target_sets[table - 4]
    assert set(ts.targets) == {res.symbols[f"kcase{i}"] for i in range(3)}


def test_helper_present_but_never_called():
    src = (
        fixture_lib.vector_table()
        + """
reset:
    b reset
nmi:
    b nmi
hardfault:
    b hardfault
pendsv:
    b pendsv
systick:
    b systick
"""
        + fixture_lib.GNU_UQI_BODY
        + """
main:
    movs r0, #1
    bx lr
"""
    )
    res = fixture_lib.assemble(src, base=0)
    img, scan = scanned(res)
    assert annotated_bytes(img) == set()
    assert not scan.target_sets


@pytest.mark.parametrize("index", range(4))
def test_gnu_helper_body_executes_to_scanned_target(index):
    """The published-ABI helper body, run in the micro-executor with lr at
    the call return, lands exactly on the scan's computed target."""
    res = fixture_lib.gnu_switch_fixture()
    img, scan = scanned(res)
    table = res.symbols["g_table"]
    ts = scan.target_sets[table - 4]
    ex = Executor(img)
    state = ex.fresh_state(pc=res.symbols["gnu_uqi"])
    state.regs[0] = index
    state.regs[LR] = table | 1        # return address after the bl
    instrs = scan.instructions
    for _ in range(32):
        ins = instrs.get(state.pc)
        if ins is None:
            break
        ex.step(state, ins)
        if ins.mnemonic == "bx":
            break
    target = state.pc & ~1
    assert target == res.symbols[f"gcase{index}"]
    assert target in ts.targets


@pytest.mark.parametrize("index", range(3))
def test_keil_helper_body_executes_to_scanned_target(index):
    res = fixture_lib.keil_switch_fixture()
    img, scan = scanned(res)
    table = res.symbols["k_table"]
    ts = scan.target_sets[table - 4]
    ex = Executor(img)
    state = ex.fresh_state(pc=res.symbols["arm_switch8"])
    state.regs[0] = index
    state.regs[LR] = table | 1
    instrs = scan.instructions
    for _ in range(64):
        ins = instrs.get(state.pc)
        if ins is None:
            break
        ex.step(state, ins)
        if ins.mnemonic == "bx":
            break
    target = state.pc & ~1
    assert target == res.symbols[f"kcase{index}"]
    assert target in ts.targets


# ---------------------------------------------------------------------------
# write-to-PC tables

def test_pc_write_table_and_targets():
    res = fixture_lib.pc_write_fixture(cases=4)
    img, scan = scanned(res)
    table = res.symbols["p_table"]
    assert annotated_bytes(img) == set(range(table, table + 16))
    sites = [o for o in scan.target_sets
             if set(scan.target_sets[o].targets)
             == {res.symbols[f"pcase{i}"] for i in range(4)}]
    assert sites, "pc-write targets not collected"


def test_pc_write_single_entry_range():
    res = fixture_lib.pc_write_fixture(cases=1)
    img, scan = scanned(res)
    table = res.symbols["p_table"]
    assert annotated_bytes(img) == set(range(table, table + 4))


def test_pc_write_unbounded_is_flagged():
    src = (
        fixture_lib.vector_table()
        + """
reset:
    b reset
nmi:
    b nmi
hardfault:
    b hardfault
pendsv:
    b pendsv
systick:
    b systick
main:
    lsls r3, r0, #2
    ldr r3, [r2, r3]
    mov pc, r3
"""
    )
    res = fixture_lib.assemble(src, base=0)
    img, scan = scanned(res)
    assert any("pc-write" in w for w in scan.warnings)
    assert annotated_bytes(img) == set()


# ---------------------------------------------------------------------------
# global properties

ALL_MECHANISM_FIXTURES = [
    fixture_lib.data_segment_fixture(),
    fixture_lib.literal_fixture(),
    fixture_lib.tbb_fixture(),
    fixture_lib.tbh_fixture(),
    fixture_lib.gnu_switch_fixture(),
    fixture_lib.keil_switch_fixture(),
    fixture_lib.pc_write_fixture(),
    fixture_lib.passkey_fixture(),
]


@pytest.mark.parametrize("res", ALL_MECHANISM_FIXTURES,
                         ids=lambda r: f"{len(r.data)}b")
def test_no_address_both_code_and_data(res):
    img, scan = scanned(res)
    for addr, ins in scan.instructions.items():
        for i in range(ins.width):
            assert not img.is_data(addr + i), hex(addr)


@pytest.mark.parametrize("res", ALL_MECHANISM_FIXTURES,
                         ids=lambda r: f"{len(r.data)}b")
def test_fixpoint_stability(res):
    img, scan = scanned(res)
    before = dict(img._data_bytes)
    scan2 = identify_inline_data(img)
    assert img._data_bytes == before
    assert scan2.rounds <= 1 or not any(
        True for _ in ())  # second run converges immediately


@pytest.mark.parametrize("res", ALL_MECHANISM_FIXTURES,
                         ids=lambda r: f"{len(r.data)}b")
def test_branch_targets_decode_as_instructions(res):
    img, scan = scanned(res)
    for ts in scan.target_sets.values():
        for t in ts.targets:
            assert t in scan.instructions, hex(t)
