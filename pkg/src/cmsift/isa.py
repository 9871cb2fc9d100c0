"""Thumb / Thumb-2 instruction decoding.

Covers the full ARMv6-M set plus the ARMv7-M additions the rest of the
toolkit needs (table branches, compare-and-branch, IT blocks, wide
loads/stores and moves, stmdb, wide branches, integer divide and
multiply-accumulate).  Anything else decodes as ``unsupported`` with the
correct width; undecodable 16-bit patterns decode as ``unknown`` and are
treated as inline-data candidates downstream.

Decoding is pure: bytes in, instructions out, no global state.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

REG_NAMES = ["r0", "r1", "r2", "r3", "r4", "r5", "r6", "r7",
             "r8", "r9", "r10", "r11", "r12", "sp", "lr", "pc"]

SP, LR, PC = 13, 14, 15

COND_NAMES = ["eq", "ne", "cs", "cc", "mi", "pl", "vs", "vc",
              "hi", "ls", "ge", "lt", "gt", "le"]


@dataclass(frozen=True)
class Reg:
    n: int

    def __str__(self):
        return REG_NAMES[self.n]


@dataclass(frozen=True)
class Imm:
    value: int

    def __str__(self):
        return f"#{self.value}"


@dataclass(frozen=True)
class RegList:
    regs: tuple[int, ...]

    def __str__(self):
        return "{" + ", ".join(REG_NAMES[r] for r in self.regs) + "}"


@dataclass(frozen=True)
class Mem:
    base: int
    offset: int = 0
    index: int | None = None
    shift: int = 0

    def __str__(self):
        inner = REG_NAMES[self.base]
        if self.index is not None:
            inner += f", {REG_NAMES[self.index]}"
            if self.shift:
                inner += f", lsl #{self.shift}"
        elif self.offset:
            inner += f", #{self.offset}"
        return f"[{inner}]"


@dataclass(frozen=True)
class Target:
    address: int

    def __str__(self):
        return f"0x{self.address:x}"


BRANCH_MNEMONICS = {"b", "bl", "bx", "blx", "cbz", "cbnz"}
LOAD_MNEMONICS = {"ldr", "ldrb", "ldrh", "ldrsb", "ldrsh"}
STORE_MNEMONICS = {"str", "strb", "strh"}


@dataclass
class DecodedInstruction:
    address: int
    mnemonic: str
    operands: tuple = ()
    width: int = 2
    condition: str | None = None
    sets_flags: bool = False
    wide: bool = False
    writeback: bool = False
    raw: bytes = b""
    it_conds: tuple = ()    # for "it" only: conditions applied to the block

    @property
    def target(self) -> int | None:
        for op in self.operands:
            if isinstance(op, Target):
                return op.address
        return None

    @property
    def base_mnemonic(self) -> str:
        return self.mnemonic[:-2] if self.mnemonic.endswith(".w") else self.mnemonic

    @property
    def is_branch(self) -> bool:
        return self.base_mnemonic in BRANCH_MNEMONICS

    @property
    def is_load(self) -> bool:
        return self.base_mnemonic in LOAD_MNEMONICS

    @property
    def is_store(self) -> bool:
        return self.base_mnemonic in STORE_MNEMONICS

    @property
    def load_size(self) -> int:
        m = self.base_mnemonic
        if m == "ldr":
            return 4
        if m in ("ldrh", "ldrsh"):
            return 2
        return 1

    def pc_relative_target(self) -> int | None:
        """Literal address for [pc, #imm] loads (aligned PC+4 semantics)."""
        for op in self.operands:
            if isinstance(op, Mem) and op.base == PC and op.index is None:
                return ((self.address + 4) & ~3) + op.offset
        return None

    def render(self) -> str:
        if self.mnemonic.startswith("it") and self.it_conds:
            return f"{self.mnemonic} {self.it_conds[0]}"
        if self.mnemonic in ("svc", "bkpt", "udf"):
            return f"{self.mnemonic} 0x{self.operands[0].value:x}"
        if self.mnemonic in ("cpsie", "cpsid"):
            bits = self.operands[0].value
            flags = "".join(ch for ch, b in (("a", 4), ("i", 2), ("f", 1))
                            if bits & b)
            return f"{self.mnemonic} {flags}"
        head = self.mnemonic
        if self.condition:
            head = self.base_mnemonic + self.condition
            if self.mnemonic.endswith(".w") or (self.wide and self.base_mnemonic == "b"):
                head += ".w"
        ops = []
        for i, op in enumerate(self.operands):
            text = str(op)
            if isinstance(op, Reg) and self.writeback and i == 0:
                text += "!"
            ops.append(text)
        return (head + " " + ", ".join(ops)).rstrip()


# ---------------------------------------------------------------------------
# helpers

def _sign_extend(value: int, bits: int) -> int:
    if value & (1 << (bits - 1)):
        value -= 1 << bits
    return value


def thumb_expand_imm(imm12: int) -> int:
    """ThumbExpandImm for 32-bit modified immediates."""
    if (imm12 >> 10) & 3 == 0:
        mode = (imm12 >> 8) & 3
        b = imm12 & 0xFF
        if mode == 0:
            return b
        if mode == 1:
            return (b << 16) | b
        if mode == 2:
            return (b << 24) | (b << 8)
        return (b << 24) | (b << 16) | (b << 8) | b
    rot = (imm12 >> 7) & 0x1F
    base = 0x80 | (imm12 & 0x7F)
    return ((base >> rot) | (base << (32 - rot))) & 0xFFFFFFFF


def is_wide_prefix(hw: int) -> bool:
    return (hw >> 11) in (0b11101, 0b11110, 0b11111)


def it_condition_list(firstcond: int, mask: int) -> tuple:
    """Expand an IT instruction's firstcond/mask into per-slot conditions."""
    length = 4
    m = mask
    while (m & 1) == 0:
        m >>= 1
        length -= 1
    conds = [COND_NAMES[firstcond]]
    fc0 = firstcond & 1
    for k in range(1, length):
        bit = (mask >> (4 - k)) & 1
        conds.append(COND_NAMES[firstcond if bit == fc0 else firstcond ^ 1])
    return tuple(conds)


def it_suffix(firstcond: int, mask: int) -> str:
    conds = it_condition_list(firstcond, mask)
    return "".join("t" if c == conds[0] else "e" for c in conds[1:])


# ---------------------------------------------------------------------------
# 16-bit decode

_FMT4 = ["ands", "eors", "lsls", "lsrs", "asrs", "adcs", "sbcs", "rors",
         "tst", "rsbs", "cmp", "cmn", "orrs", "muls", "bics", "mvns"]

_HINTS = {0: "nop", 1: "yield", 2: "wfe", 3: "wfi", 4: "sev"}

# mnemonics whose trailing "s" disappears inside an IT block
_S_SUFFIXED = {"movs", "lsls", "lsrs", "asrs", "adds", "subs", "ands",
               "eors", "adcs", "sbcs", "rors", "rsbs", "orrs", "muls",
               "bics", "mvns"}


def _decode16(hw: int, address: int, cond: str | None) -> DecodedInstruction:
    def ins(mnemonic, *operands, sets_flags=False, writeback=False):
        m = mnemonic
        sf = sets_flags
        if cond is not None and mnemonic in _S_SUFFIXED:
            m = mnemonic[:-1]
            sf = False
        return DecodedInstruction(address, m, tuple(operands), 2,
                                  condition=cond, sets_flags=sf,
                                  writeback=writeback)

    top6 = hw >> 10
    top5 = hw >> 11
    top4 = hw >> 12

    if top5 in (0b00000, 0b00001, 0b00010):            # shift immediate
        op = top5 & 3
        imm5 = (hw >> 6) & 0x1F
        rm = (hw >> 3) & 7
        rd = hw & 7
        if op == 0 and imm5 == 0:
            return ins("movs", Reg(rd), Reg(rm), sets_flags=True)
        shift = imm5 if (op == 0 or imm5 != 0) else 32
        return ins(["lsls", "lsrs", "asrs"][op], Reg(rd), Reg(rm),
                   Imm(shift), sets_flags=True)
    if top5 == 0b00011:                                # add/sub reg or imm3
        sub = (hw >> 9) & 1
        imm = (hw >> 10) & 1
        rx = (hw >> 6) & 7
        rn = (hw >> 3) & 7
        rd = hw & 7
        name = "subs" if sub else "adds"
        third = Imm(rx) if imm else Reg(rx)
        return ins(name, Reg(rd), Reg(rn), third, sets_flags=True)
    if top4 in (0b0010, 0b0011):                       # mov/cmp/add/sub imm8
        op = (hw >> 11) & 3
        rd = (hw >> 8) & 7
        imm8 = hw & 0xFF
        name = ["movs", "cmp", "adds", "subs"][op]
        return ins(name, Reg(rd), Imm(imm8), sets_flags=name != "cmp")
    if top6 == 0b010000:                               # ALU register
        op = (hw >> 6) & 0xF
        rm = (hw >> 3) & 7
        rdn = hw & 7
        name = _FMT4[op]
        if name == "rsbs":
            return ins(name, Reg(rdn), Reg(rm), Imm(0), sets_flags=True)
        return ins(name, Reg(rdn), Reg(rm),
                   sets_flags=name not in ("tst", "cmp", "cmn"))
    if top6 == 0b010001:                               # hi-reg / bx / blx
        op = (hw >> 8) & 3
        rm = (hw >> 3) & 0xF
        rdn = (hw & 7) | ((hw >> 4) & 8)
        if op == 0:
            return ins("add", Reg(rdn), Reg(rm))
        if op == 1:
            return ins("cmp", Reg(rdn), Reg(rm))
        if op == 2:
            return ins("mov", Reg(rdn), Reg(rm))
        if (hw >> 7) & 1:
            return ins("blx", Reg(rm))
        return ins("bx", Reg(rm))
    if top5 == 0b01001:                                # ldr literal
        return ins("ldr", Reg((hw >> 8) & 7), Mem(PC, (hw & 0xFF) * 4))
    if top4 == 0b0101:                                 # load/store register
        op = (hw >> 9) & 7
        name = ["str", "strh", "strb", "ldrsb",
                "ldr", "ldrh", "ldrb", "ldrsh"][op]
        return ins(name, Reg(hw & 7), Mem((hw >> 3) & 7, index=(hw >> 6) & 7))
    if top4 in (0b0110, 0b0111):                       # str/ldr(b) imm5
        load = (hw >> 11) & 1
        byte = (hw >> 12) & 1
        imm5 = (hw >> 6) & 0x1F
        rn = (hw >> 3) & 7
        rt = hw & 7
        if byte:
            return ins("ldrb" if load else "strb", Reg(rt), Mem(rn, imm5))
        return ins("ldr" if load else "str", Reg(rt), Mem(rn, imm5 * 4))
    if top5 in (0b10000, 0b10001):                     # strh/ldrh imm5
        load = (hw >> 11) & 1
        return ins("ldrh" if load else "strh", Reg(hw & 7),
                   Mem((hw >> 3) & 7, ((hw >> 6) & 0x1F) * 2))
    if top5 in (0b10010, 0b10011):                     # str/ldr sp-relative
        load = (hw >> 11) & 1
        return ins("ldr" if load else "str", Reg((hw >> 8) & 7),
                   Mem(SP, (hw & 0xFF) * 4))
    if top5 == 0b10100:                                # adr
        return ins("adr", Reg((hw >> 8) & 7),
                   Target(((address + 4) & ~3) + (hw & 0xFF) * 4))
    if top5 == 0b10101:                                # add rd, sp, #imm
        return ins("add", Reg((hw >> 8) & 7), Reg(SP), Imm((hw & 0xFF) * 4))
    if top4 == 0b1011:                                 # misc
        mid = (hw >> 8) & 0xF
        if mid == 0b0000:
            imm = (hw & 0x7F) * 4
            return ins("sub" if (hw >> 7) & 1 else "add", Reg(SP), Imm(imm))
        if mid == 0b0010:
            op = (hw >> 6) & 3
            return ins(["sxth", "sxtb", "uxth", "uxtb"][op],
                       Reg(hw & 7), Reg((hw >> 3) & 7))
        if mid in (0b0001, 0b0011, 0b1001, 0b1011):    # cbz/cbnz
            op = (hw >> 11) & 1
            off = (((hw >> 9) & 1) << 6) | (((hw >> 3) & 0x1F) << 1)
            return ins("cbnz" if op else "cbz", Reg(hw & 7),
                       Target(address + 4 + off))
        if mid in (0b0100, 0b0101):                    # push
            regs = [r for r in range(8) if (hw >> r) & 1]
            if (hw >> 8) & 1:
                regs.append(LR)
            if not regs:
                return DecodedInstruction(address, "unknown", (), 2)
            return ins("push", RegList(tuple(regs)))
        if mid in (0b1100, 0b1101):                    # pop
            regs = [r for r in range(8) if (hw >> r) & 1]
            if (hw >> 8) & 1:
                regs.append(PC)
            if not regs:
                return DecodedInstruction(address, "unknown", (), 2)
            return ins("pop", RegList(tuple(regs)))
        if mid == 0b1010:                              # rev/rev16/revsh
            op = (hw >> 6) & 3
            if op in (0, 1, 3):
                return ins({0: "rev", 1: "rev16", 3: "revsh"}[op],
                           Reg(hw & 7), Reg((hw >> 3) & 7))
        if mid == 0b0110 and (hw & 0xFFE8) == 0xB660:  # cps
            return ins("cpsid" if (hw >> 4) & 1 else "cpsie", Imm(hw & 7))
        if mid == 0b1110:
            return ins("bkpt", Imm(hw & 0xFF))
        if mid == 0b1111:                              # it / hints
            mask = hw & 0xF
            firstcond = (hw >> 4) & 0xF
            if mask == 0:
                name = _HINTS.get(firstcond)
                if name:
                    return ins(name)
                return DecodedInstruction(address, "unknown", (), 2)
            if firstcond in (0xE, 0xF):
                return DecodedInstruction(address, "unknown", (), 2)
            return DecodedInstruction(
                address, "it" + it_suffix(firstcond, mask),
                (Imm(firstcond),), 2,
                it_conds=it_condition_list(firstcond, mask))
        return DecodedInstruction(address, "unknown", (), 2)
    if top4 == 0b1100:                                 # stmia/ldmia
        load = (hw >> 11) & 1
        rn = (hw >> 8) & 7
        regs = tuple(r for r in range(8) if (hw >> r) & 1)
        if not regs:
            return DecodedInstruction(address, "unknown", (), 2)
        wb = not (load and rn in regs)
        return ins("ldmia" if load else "stmia", Reg(rn), RegList(regs),
                   writeback=wb)
    if top4 == 0b1101:                                 # cond branch / svc
        cc = (hw >> 8) & 0xF
        imm8 = hw & 0xFF
        if cc == 0xF:
            return ins("svc", Imm(imm8))
        if cc == 0xE:
            return ins("udf", Imm(imm8))
        off = _sign_extend(imm8, 8) * 2
        return DecodedInstruction(address, "b", (Target(address + 4 + off),),
                                  2, condition=COND_NAMES[cc])
    if top5 == 0b11100:                                # unconditional branch
        off = _sign_extend(hw & 0x7FF, 11) * 2
        return ins("b", Target(address + 4 + off))
    return DecodedInstruction(address, "unknown", (), 2)


# ---------------------------------------------------------------------------
# 32-bit decode

def _decode32(hw1: int, hw2: int, address: int,
              cond: str | None) -> DecodedInstruction:
    def ins(mnemonic, *operands, wide=False, writeback=False):
        return DecodedInstruction(address, mnemonic, tuple(operands), 4,
                                  condition=cond, wide=wide,
                                  writeback=writeback)

    def unsupported():
        return DecodedInstruction(address, "unsupported", (), 4,
                                  condition=cond)

    if (hw1 >> 11) == 0b11110 and (hw2 >> 15) == 1:
        s = (hw1 >> 10) & 1
        j1 = (hw2 >> 13) & 1
        j2 = (hw2 >> 11) & 1
        if (hw2 >> 12) & 1:                            # BL (T1) / B.W (T4)
            i1 = ~(j1 ^ s) & 1
            i2 = ~(j2 ^ s) & 1
            off = (s << 24) | (i1 << 23) | (i2 << 22) | \
                  ((hw1 & 0x3FF) << 12) | ((hw2 & 0x7FF) << 1)
            off = _sign_extend(off, 25)
            target = Target(address + 4 + off)
            if (hw2 >> 14) & 1:
                return ins("bl", target)
            return ins("b.w", target, wide=True)
        ccode = (hw1 >> 6) & 0xF
        if ccode < 14:                                 # B<c>.W (T3)
            off = (s << 20) | (j2 << 19) | (j1 << 18) | \
                  ((hw1 & 0x3F) << 12) | ((hw2 & 0x7FF) << 1)
            off = _sign_extend(off, 21)
            return DecodedInstruction(address, "b",
                                      (Target(address + 4 + off),), 4,
                                      condition=COND_NAMES[ccode], wide=True)
        if hw1 == 0xF3EF:                              # mrs
            return ins("mrs", Reg((hw2 >> 8) & 0xF), Imm(hw2 & 0xFF))
        if (hw1 & 0xFFE0) == 0xF380:                   # msr
            return ins("msr", Imm(hw2 & 0xFF), Reg(hw1 & 0xF))
        if hw1 == 0xF3BF:                              # barriers
            name = {5: "dmb", 4: "dsb", 6: "isb"}.get((hw2 >> 4) & 0xF)
            if name:
                return ins(name)
        return unsupported()

    if (hw1 & 0xFBEF) == 0xF04F and (hw2 >> 15) == 0:  # mov.w rd, #const
        i = (hw1 >> 10) & 1
        imm3 = (hw2 >> 12) & 7
        rd = (hw2 >> 8) & 0xF
        value = thumb_expand_imm((i << 11) | (imm3 << 8) | (hw2 & 0xFF))
        return ins("mov.w", Reg(rd), Imm(value), wide=True)
    if (hw1 & 0xFBF0) == 0xF240 and (hw2 >> 15) == 0:  # movw
        imm16 = ((hw1 & 0xF) << 12) | (((hw1 >> 10) & 1) << 11) | \
                (((hw2 >> 12) & 7) << 8) | (hw2 & 0xFF)
        return ins("movw", Reg((hw2 >> 8) & 0xF), Imm(imm16))
    if (hw1 & 0xFBF0) == 0xF2C0 and (hw2 >> 15) == 0:  # movt
        imm16 = ((hw1 & 0xF) << 12) | (((hw1 >> 10) & 1) << 11) | \
                (((hw2 >> 12) & 7) << 8) | (hw2 & 0xFF)
        return ins("movt", Reg((hw2 >> 8) & 0xF), Imm(imm16))

    if (hw1 & 0xFE00) == 0xF800:                       # wide load/store
        size = (hw1 >> 5) & 3
        load = (hw1 >> 4) & 1
        signed = (hw1 >> 8) & 1
        rn = hw1 & 0xF
        rt = (hw2 >> 12) & 0xF
        if size == 3 or (signed and not load):
            return unsupported()
        if load:
            name = {(0, 0): "ldrb", (1, 0): "ldrh", (2, 0): "ldr",
                    (0, 1): "ldrsb", (1, 1): "ldrsh"}.get((size, signed))
        else:
            name = {0: "strb", 1: "strh", 2: "str"}[size]
        if name is None:
            return unsupported()
        if rn == 0xF:                                  # literal
            if not load:
                return unsupported()
            u = (hw1 >> 7) & 1
            imm12 = hw2 & 0xFFF
            return ins(name + ".w", Reg(rt),
                       Mem(PC, imm12 if u else -imm12), wide=True)
        if (hw1 >> 7) & 1:                             # imm12
            return ins(name + ".w", Reg(rt), Mem(rn, hw2 & 0xFFF), wide=True)
        if (hw2 >> 11) & 1:                            # imm8 (P/U/W)
            p = (hw2 >> 10) & 1
            u = (hw2 >> 9) & 1
            w = (hw2 >> 8) & 1
            if p == 1 and w == 0:
                imm8 = hw2 & 0xFF
                return ins(name + ".w", Reg(rt),
                           Mem(rn, imm8 if u else -imm8), wide=True)
            return unsupported()
        if (hw2 & 0x0FC0) == 0:                        # register offset
            return ins(name + ".w", Reg(rt),
                       Mem(rn, index=hw2 & 0xF, shift=(hw2 >> 4) & 3),
                       wide=True)
        return unsupported()

    if (hw1 & 0xFFF0) == 0xE8D0 and (hw2 & 0xFFE0) == 0xF000:   # tbb/tbh
        if (hw2 >> 4) & 1:
            return ins("tbh", Mem(hw1 & 0xF, index=hw2 & 0xF, shift=1))
        return ins("tbb", Mem(hw1 & 0xF, index=hw2 & 0xF))

    if (hw1 & 0xFFD0) == 0xE900:                       # stmdb
        regs = tuple(r for r in range(16) if (hw2 >> r) & 1 and r != 13)
        return ins("stmdb", Reg(hw1 & 0xF), RegList(regs),
                   writeback=bool((hw1 >> 5) & 1))
    if (hw1 & 0xFFD0) == 0xE890:                       # ldmia.w
        regs = tuple(r for r in range(16) if (hw2 >> r) & 1 and r != 13)
        return ins("ldmia.w", Reg(hw1 & 0xF), RegList(regs),
                   writeback=bool((hw1 >> 5) & 1), wide=True)
    if (hw1 & 0xFFD0) == 0xE880:                       # stmia.w
        regs = tuple(r for r in range(16) if (hw2 >> r) & 1 and r != 13)
        return ins("stmia.w", Reg(hw1 & 0xF), RegList(regs),
                   writeback=bool((hw1 >> 5) & 1), wide=True)

    if (hw1 & 0xFFF0) == 0xFB00 and (hw2 & 0x00C0) == 0:
        rn = hw1 & 0xF
        ra = (hw2 >> 12) & 0xF
        rd = (hw2 >> 8) & 0xF
        rm = hw2 & 0xF
        op2 = (hw2 >> 4) & 3
        if op2 == 0:
            if ra == 0xF:
                return ins("mul", Reg(rd), Reg(rn), Reg(rm))
            return ins("mla", Reg(rd), Reg(rn), Reg(rm), Reg(ra))
        if op2 == 1 and ra != 0xF:
            return ins("mls", Reg(rd), Reg(rn), Reg(rm), Reg(ra))
        return unsupported()
    if (hw1 & 0xFFF0) == 0xFBB0 and (hw2 & 0xF0F0) == 0xF0F0:   # udiv
        return ins("udiv", Reg((hw2 >> 8) & 0xF), Reg(hw1 & 0xF),
                   Reg(hw2 & 0xF))
    if (hw1 & 0xFFF0) == 0xFB90 and (hw2 & 0xF0F0) == 0xF0F0:   # sdiv
        return ins("sdiv", Reg((hw2 >> 8) & 0xF), Reg(hw1 & 0xF),
                   Reg(hw2 & 0xF))

    return unsupported()


# ---------------------------------------------------------------------------
# stream decode

def decode_at(data: bytes, offset: int, address: int,
              cond: str | None = None) -> DecodedInstruction:
    """Decode one instruction at a file offset mapped to a true address."""
    if offset + 2 > len(data):
        return DecodedInstruction(address, "unknown", (), 2,
                                  raw=data[offset:offset + 2])
    hw = struct.unpack_from("<H", data, offset)[0]
    if is_wide_prefix(hw):
        if offset + 4 > len(data):
            out = DecodedInstruction(address, "unknown", (), 2)
            out.raw = data[offset:offset + 2]
            return out
        hw2 = struct.unpack_from("<H", data, offset + 2)[0]
        out = _decode32(hw, hw2, address, cond)
        out.raw = data[offset:offset + 4]
        return out
    out = _decode16(hw, address, cond)
    out.raw = data[offset:offset + 2]
    return out


def decode_stream(img) -> dict[int, DecodedInstruction]:
    """Linear-sweep decode of an image, honouring data annotations.

    Returns instructions keyed by true address, in address order.  Data
    bytes are skipped; a halfword partially covered by a data annotation
    is treated as data.  IT blocks attach conditions to the following
    instructions at decode time.
    """
    out: dict[int, DecodedInstruction] = {}
    data = img.data
    base = img.code_base
    offset = 0
    pending_conds: list[str] = []
    while offset + 2 <= len(data):
        address = base + offset
        if img.is_data(address, 2):
            skip_to = img.data_extent_after(address)
            offset = skip_to - base
            if offset % 2:
                offset += 1
            pending_conds = []
            continue
        cond = pending_conds.pop(0) if pending_conds else None
        ins = decode_at(data, offset, address, cond)
        out[address] = ins
        if ins.it_conds:
            pending_conds = list(ins.it_conds)
        offset += ins.width
    return out


def reinterpret(img, address: int, as_kind: str, n_bytes: int,
                source=None) -> bool:
    """Re-annotate bytes at address as code or data.

    Returns True when the annotation map changed.  Partial consumption of
    a previously 4-byte slot leaves the residual halfword to be re-decoded
    as an instruction on the next decode_stream pass.  Raises
    AnnotationConflict when the request overlaps bytes pinned by a
    higher-confidence source.
    """
    from .image import DataSource
    if n_bytes <= 0:
        return False
    if as_kind == "code":
        img.clear_data(address, n_bytes)
        return True
    if source is None:
        source = DataSource.PC_RELATIVE_LOAD
    return img.mark_data(address, n_bytes, source, strict=True)
