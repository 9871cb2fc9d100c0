import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fixture_lib
from cmsift.image import DataSource, FirmwareImage
from cmsift.isa import (
    DecodedInstruction,
    decode_at,
    decode_stream,
    is_wide_prefix,
    it_condition_list,
    reinterpret,
    thumb_expand_imm,
)


def decode_halfwords(*halfwords, address=0):
    data = b"".join(struct.pack("<H", h) for h in halfwords)
    return decode_at(data, 0, address)


def test_movs_r0_34():
    ins = decode_halfwords(0x2022, address=0x1EAC0)
    assert ins.render() == "movs r0, #34"
    assert ins.width == 2


def test_ldr_pc_736():
    ins = decode_halfwords(0x4AB8, address=0x1EABA)
    assert ins.render() == "ldr r2, [pc, #736]"
    # literal address per aligned PC+4 semantics: 0x1ed9c
    assert ins.pc_relative_target() == 0x1ED9C


def test_nop():
    ins = decode_halfwords(0xBF00)
    assert ins.render() == "nop"
    assert ins.width == 2


def test_self_branch():
    ins = decode_halfwords(0xE7FE, address=0x2C0)
    assert ins.render() == "b 0x2c0"
    assert ins.target == 0x2C0


def test_svc():
    ins = decode_halfwords(0xDF68)
    assert ins.mnemonic == "svc"
    assert ins.operands[0].value == 0x68


def test_wide_prefix_rule():
    assert is_wide_prefix(0xF000)
    assert is_wide_prefix(0xE800)
    assert is_wide_prefix(0xFB00)
    assert not is_wide_prefix(0xE7FE)
    assert not is_wide_prefix(0x4AB8)


def test_bl_encoding_roundtrip():
    # fff7 3afe == bl #-0x38c relative (paper example bl #0x3748 at 0x3ad0)
    ins = decode_halfwords(0xF7FF, 0xFE3A, address=0x3AD0)
    assert ins.mnemonic == "bl"
    assert ins.target == 0x3748


def test_undecodable_is_unknown():
    ins = decode_halfwords(0xDE00 & 0xB800 | 0xBF90)   # unallocated hint
    assert ins.mnemonic in ("unknown", "udf", "unsupported")


def test_unsupported_wide_has_width_4():
    ins = decode_halfwords(0xE800 | 0x40, 0x0000)
    assert ins.width in (4,)


def test_it_condition_expansion():
    assert it_condition_list(0, 0b1000) == ("eq",)
    assert it_condition_list(0, 0b0100) == ("eq", "eq")      # itt eq
    assert it_condition_list(0, 0b1100) == ("eq", "ne")      # ite eq
    assert it_condition_list(1, 0b0100) == ("ne", "eq")      # ite ne (fc0=1)
    assert it_condition_list(0, 0b0110) == ("eq", "eq", "ne")  # itte eq


def test_thumb_expand_imm():
    assert thumb_expand_imm(0x0FF) == 0xFF
    assert thumb_expand_imm(0x1FF) == 0x00FF00FF
    assert thumb_expand_imm(0x2FF) == 0xFF00FF00
    assert thumb_expand_imm(0x3FF) == 0xFFFFFFFF
    # rotated: imm12 = rot<<7 | (base & 0x7F), value = ror(0x80|base7, rot)
    assert thumb_expand_imm(0b010011111111) == ((0xFF >> 9) | (0xFF << 23)) & 0xFFFFFFFF


# ---------------------------------------------------------------------------
# decode <-> assemble identity over the whole fixture corpus

ALL_FIXTURES = [
    fixture_lib.base_fixture(0),
    fixture_lib.base_fixture(0x1B000),
    fixture_lib.data_segment_fixture(),
    fixture_lib.literal_fixture(),
    fixture_lib.tbb_fixture(),
    fixture_lib.tbh_fixture(),
    fixture_lib.gnu_switch_fixture(),
    fixture_lib.keil_switch_fixture(),
    fixture_lib.pc_write_fixture(),
    fixture_lib.fig4_fixture(),
    fixture_lib.twenty_function_fixture()[0],
    fixture_lib.memset_fixture("a"),
    fixture_lib.memset_fixture("b"),
    fixture_lib.passkey_fixture(),
    fixture_lib.chaining_fixture(),
    fixture_lib.depth_rule_fixture(),
    fixture_lib.deny_rule_fixture(),
    fixture_lib.two_path_fixture(),
]


@pytest.mark.parametrize("res", ALL_FIXTURES,
                         ids=lambda r: f"base0x{r.base:x}_{len(r.data)}b")
def test_decode_reencode_identity(res):
    """Decoding assembler output and re-rendering matches the listing
    token-for-token."""
    pending = []
    for addr, text in res.listing:
        ins = decode_at(res.data, addr - res.base, addr,
                        cond=pending.pop(0) if pending else None)
        if ins.it_conds:
            pending = list(ins.it_conds)
        assert ins.render() == text, f"at 0x{addr:x}"


def test_decode_stream_skips_data():
    res = fixture_lib.literal_fixture()
    img = FirmwareImage(data=res.data)
    # mark the .word literal as data: decoder must not emit an instruction
    addr = res.symbols["word_slot"]
    img.mark_data(addr, 4, DataSource.PC_RELATIVE_LOAD)
    instrs = decode_stream(img)
    assert addr not in instrs
    assert addr + 2 not in instrs


def test_decode_stream_deterministic():
    res = fixture_lib.passkey_fixture()
    img = FirmwareImage(data=res.data, code_base=res.base)
    a = [(k, v.render()) for k, v in decode_stream(img).items()]
    b = [(k, v.render()) for k, v in decode_stream(img).items()]
    assert a == b


# ---------------------------------------------------------------------------
# reinterpret

def test_reinterpret_noop():
    img = FirmwareImage(data=bytes(128))
    assert reinterpret(img, 0x10, "data", 0) is False
    assert not img.is_data(0x10)


def test_reinterpret_marks_word():
    res = fixture_lib.literal_fixture()
    img = FirmwareImage(data=res.data)
    slot = res.symbols["word_slot"]
    assert reinterpret(img, slot, "data", 4)
    instrs = decode_stream(img)
    assert slot not in instrs


def test_reinterpret_partial_slot_residual_redecode():
    """A 2-byte data annotation inside a former 4-byte slot leaves the
    residual halfword decoding as an instruction."""
    res = fixture_lib.literal_fixture()
    img = FirmwareImage(data=res.data)
    half = res.symbols["half_slot"]
    residual = res.symbols["residual"]
    reinterpret(img, half, "data", 2)
    instrs = decode_stream(img)
    assert half not in instrs
    assert residual in instrs
    assert instrs[residual].render() == "movs r0, #34"


def test_reinterpret_back_to_code():
    img = FirmwareImage(data=bytes(128))
    reinterpret(img, 0x10, "data", 4)
    assert img.is_data(0x10)
    reinterpret(img, 0x10, "code", 4)
    assert not img.is_data(0x10)


# ---------------------------------------------------------------------------
# robustness

@given(st.binary(min_size=2, max_size=6))
@settings(max_examples=300, deadline=None)
def test_decode_never_crashes(blob):
    ins = decode_at(blob, 0, 0x1000)
    assert isinstance(ins, DecodedInstruction)
    assert ins.width in (2, 4)
    assert isinstance(ins.render(), str)


@given(st.integers(min_value=0, max_value=0xFFFF),
       st.integers(min_value=0, max_value=0xFFFF))
@settings(max_examples=300, deadline=None)
def test_decode_width_matches_prefix(hw1, hw2):
    data = struct.pack("<HH", hw1, hw2)
    ins = decode_at(data, 0, 0)
    if is_wide_prefix(hw1):
        assert ins.width == 4
    else:
        assert ins.width == 2


def test_reinterpret_conflict_with_pinned_annotation():
    from cmsift.errors import AnnotationConflict
    img = FirmwareImage(data=bytes(128))
    img.mark_data(0x10, 4, DataSource.RESET_HANDLER_SEGMENT)
    with pytest.raises(AnnotationConflict):
        reinterpret(img, 0x10, "data", 2, source=DataSource.TABLE_BRANCH)
