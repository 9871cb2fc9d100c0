"""Bounded concrete micro-execution over decoded instructions.

The machine state tracks known/unknown per register, per flag and per
memory byte.  Unknown-ness is monotone: a known output is never derived
from an unknown required input, and reads of unmapped RAM yield unknown
rather than fabricated values.  Writes to image-backed addresses land in
an overlay; the image itself is never mutated.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .errors import BudgetExceeded, UnsupportedInstruction
from .isa import LR, PC, SP, Imm, Mem, Reg, Target

STACK_BASE = 0x2FFF0000
STACK_SIZE = 0x10000
STACK_TOP = STACK_BASE + STACK_SIZE


class IndeterminateCondition(Exception):
    """A conditional check depends on flags/values that are unknown."""

    def __init__(self, instruction):
        self.instruction = instruction
        super().__init__(f"indeterminate condition at 0x{instruction.address:x}")


@dataclass
class StepBudget:
    max_instructions: int = 10_000
    wall_clock_limit: float | None = None     # seconds

    def __post_init__(self):
        if self.max_instructions <= 0:
            raise ValueError("max_instructions must be positive")
        if self.wall_clock_limit is not None and self.wall_clock_limit <= 0:
            raise ValueError("wall_clock_limit must be positive")

    def start(self) -> "BudgetClock":
        return BudgetClock(self)


@dataclass
class BudgetClock:
    budget: StepBudget
    steps: int = 0
    started_at: float = field(default_factory=time.monotonic)

    def tick(self):
        self.steps += 1
        if self.steps > self.budget.max_instructions:
            raise BudgetExceeded(
                f"instruction budget of {self.budget.max_instructions} exhausted")
        if self.budget.wall_clock_limit is not None and \
                time.monotonic() - self.started_at > self.budget.wall_clock_limit:
            raise BudgetExceeded("wall clock limit exhausted")

    @property
    def expired(self) -> bool:
        if self.steps > self.budget.max_instructions:
            return True
        return (self.budget.wall_clock_limit is not None and
                time.monotonic() - self.started_at > self.budget.wall_clock_limit)


class MachineState:
    """Registers, NZCV flags and a sparse byte overlay; None marks unknown."""

    __slots__ = ("regs", "flags", "memory", "sp_flagged")

    def __init__(self):
        self.regs: list = [None] * 16
        self.regs[SP] = STACK_TOP
        self.flags: dict = {"n": None, "z": None, "c": None, "v": None}
        self.memory: dict = {}
        self.sp_flagged = False

    def clone(self) -> "MachineState":
        out = MachineState.__new__(MachineState)
        out.regs = list(self.regs)
        out.flags = dict(self.flags)
        out.memory = dict(self.memory)
        out.sp_flagged = self.sp_flagged
        return out

    @property
    def pc(self):
        return self.regs[PC]

    @pc.setter
    def pc(self, value):
        self.regs[PC] = value

    def set_reg(self, n: int, value):
        if value is not None:
            value &= 0xFFFFFFFF
        self.regs[n] = value
        if n == SP and value is not None and \
                not (STACK_BASE <= value <= STACK_TOP):
            self.sp_flagged = True

    def set_flags(self, n=..., z=..., c=..., v=...):
        if n is not ...:
            self.flags["n"] = n
        if z is not ...:
            self.flags["z"] = z
        if c is not ...:
            self.flags["c"] = c
        if v is not ...:
            self.flags["v"] = v


def _u32(v: int) -> int:
    return v & 0xFFFFFFFF


def _s32(v: int) -> int:
    v &= 0xFFFFFFFF
    return v - 0x100000000 if v & 0x80000000 else v


def _add_with_carry(a: int, b: int, carry: int):
    total = a + b + carry
    result = _u32(total)
    c = 1 if total > 0xFFFFFFFF else 0
    v = 1 if (_s32(a) + _s32(b) + carry) != _s32(result) else 0
    return result, c, v


def _cond_eval(flags: dict, cond: str):
    """Three-valued condition evaluation; None when undecidable."""
    n, z, c, v = flags["n"], flags["z"], flags["c"], flags["v"]

    def t_not(x):
        return None if x is None else (1 - x)

    def t_and(x, y):
        if x == 0 or y == 0:
            return 0
        if x is None or y is None:
            return None
        return 1

    def t_or(x, y):
        if x == 1 or y == 1:
            return 1
        if x is None or y is None:
            return None
        return 0

    def t_eq(x, y):
        if x is None or y is None:
            return None
        return 1 if x == y else 0

    table = {
        "eq": z, "ne": t_not(z),
        "cs": c, "cc": t_not(c),
        "mi": n, "pl": t_not(n),
        "vs": v, "vc": t_not(v),
        "hi": t_and(c, t_not(z)), "ls": t_or(t_not(c), z),
        "ge": t_eq(n, v), "lt": t_not(t_eq(n, v)),
        "gt": t_and(t_not(z), t_eq(n, v)), "le": t_or(z, t_not(t_eq(n, v))),
    }
    return table[cond]


class Executor:
    """Applies instruction semantics against an image-backed memory view."""

    def __init__(self, img, shared_overlay: dict | None = None):
        self.img = img
        self.shared_overlay = shared_overlay if shared_overlay is not None else {}

    # -- state and memory ------------------------------------------------

    def fresh_state(self, pc: int | None = None) -> MachineState:
        state = MachineState()
        state.regs[PC] = pc
        return state

    def read_byte(self, state: MachineState, address: int):
        if address in state.memory:
            return state.memory[address]
        if address in self.shared_overlay:
            return self.shared_overlay[address]
        if self.img is not None and self.img.contains(address, 1):
            return self.img.data[self.img.offset_of(address)]
        return None

    def read_mem(self, state: MachineState, address, size: int):
        if address is None:
            return None
        value = 0
        for i in range(size):
            b = self.read_byte(state, _u32(address + i))
            if b is None:
                return None
            value |= b << (8 * i)
        return value

    def write_mem(self, state: MachineState, address, value, size: int):
        if address is None:
            return
        for i in range(size):
            state.memory[_u32(address + i)] = \
                None if value is None else (value >> (8 * i)) & 0xFF

    def condition_passes(self, state: MachineState, cond: str | None):
        if cond is None:
            return True
        result = _cond_eval(state.flags, cond)
        if result is None:
            return None
        return bool(result)

    # -- operand helpers ---------------------------------------------------

    def _read_reg(self, state, n: int, ins):
        if n == PC:
            return _u32(ins.address + 4)
        return state.regs[n]

    def _value(self, state, op, ins):
        if isinstance(op, Imm):
            return op.value & 0xFFFFFFFF
        if isinstance(op, Reg):
            return self._read_reg(state, op.n, ins)
        if isinstance(op, Target):
            return op.address
        raise TypeError(f"unexpected operand {op!r}")

    def _mem_address(self, state, mem: Mem, ins):
        if mem.base == PC:
            base = _u32(ins.address + 4)
            if mem.index is None:
                base &= ~3
        else:
            base = state.regs[mem.base]
        if base is None:
            return None
        if mem.index is not None:
            idx = state.regs[mem.index]
            if idx is None:
                return None
            return _u32(base + (idx << mem.shift))
        return _u32(base + mem.offset)

    # -- stepping ----------------------------------------------------------

    def step(self, state: MachineState, ins, assume: bool | None = None):
        """Apply one instruction architecturally.

        Conditional instructions with undecidable conditions raise
        IndeterminateCondition unless `assume` forces an outcome.  svc is
        modelled as a successful stack call: r0 := 0.  Raises
        UnsupportedInstruction for encodings outside the modelled subset.
        """
        if ins.mnemonic in ("unknown", "unsupported", "bkpt", "udf"):
            raise UnsupportedInstruction(ins)

        next_pc = ins.address + ins.width
        if ins.condition is not None and not ins.is_branch:
            passes = self.condition_passes(state, ins.condition) \
                if assume is None else assume
            if passes is None:
                raise IndeterminateCondition(ins)
            if not passes:
                state.pc = next_pc
                return state

        handler = getattr(self, f"_op_{ins.base_mnemonic.replace('.', '_')}",
                          None)
        if handler is None:
            raise UnsupportedInstruction(ins)
        jumped = handler(state, ins, assume)
        if not jumped:
            state.pc = next_pc
        return state

    # every handler returns True when it assigned pc itself

    # ---- moves

    def _op_movs(self, state, ins, assume):
        value = self._value(state, ins.operands[1], ins)
        state.set_reg(ins.operands[0].n, value)
        if ins.sets_flags:
            self._nz(state, value)
        return ins.operands[0].n == PC

    _op_mov = _op_movs

    def _op_movw(self, state, ins, assume):
        state.set_reg(ins.operands[0].n, ins.operands[1].value)
        return False

    def _op_movt(self, state, ins, assume):
        rd = ins.operands[0].n
        old = state.regs[rd]
        if old is None:
            state.set_reg(rd, None)
        else:
            state.set_reg(rd, (old & 0xFFFF) | (ins.operands[1].value << 16))
        return False

    def _op_mvns(self, state, ins, assume):
        value = self._value(state, ins.operands[1], ins)
        result = None if value is None else _u32(~value)
        state.set_reg(ins.operands[0].n, result)
        if ins.sets_flags:
            self._nz(state, result)
        return False

    _op_mvn = _op_mvns

    def _op_adr(self, state, ins, assume):
        state.set_reg(ins.operands[0].n, ins.operands[1].address)
        return False

    # ---- flag helpers

    def _nz(self, state, value):
        if value is None:
            state.set_flags(n=None, z=None)
        else:
            state.set_flags(n=(value >> 31) & 1, z=1 if value == 0 else 0)

    def _nzcv(self, state, result, c, v):
        if result is None:
            state.set_flags(n=None, z=None, c=None, v=None)
        else:
            state.set_flags(n=(result >> 31) & 1, z=1 if result == 0 else 0,
                            c=c, v=v)

    # ---- arithmetic

    def _binary_operands(self, state, ins):
        ops = ins.operands
        if len(ops) == 3:
            a = self._value(state, ops[1], ins)
            b = self._value(state, ops[2], ins)
        else:
            a = self._value(state, ops[0], ins)
            b = self._value(state, ops[1], ins)
        return a, b

    def _op_adds(self, state, ins, assume):
        a, b = self._binary_operands(state, ins)
        rd = ins.operands[0].n
        if a is None or b is None:
            state.set_reg(rd, None)
            if ins.sets_flags:
                self._nzcv(state, None, None, None)
            return rd == PC
        result, c, v = _add_with_carry(a, b, 0)
        state.set_reg(rd, result)
        if ins.sets_flags:
            self._nzcv(state, result, c, v)
        return rd == PC

    _op_add = _op_adds

    def _op_subs(self, state, ins, assume):
        a, b = self._binary_operands(state, ins)
        rd = ins.operands[0].n
        if a is None or b is None:
            state.set_reg(rd, None)
            if ins.sets_flags:
                self._nzcv(state, None, None, None)
            return False
        result, c, v = _add_with_carry(a, _u32(~b), 1)
        state.set_reg(rd, result)
        if ins.sets_flags:
            self._nzcv(state, result, c, v)
        return False

    _op_sub = _op_subs

    def _op_rsbs(self, state, ins, assume):
        a = self._value(state, ins.operands[1], ins)
        rd = ins.operands[0].n
        if a is None:
            state.set_reg(rd, None)
            if ins.sets_flags:
                self._nzcv(state, None, None, None)
            return False
        result, c, v = _add_with_carry(_u32(~a), 0, 1)
        state.set_reg(rd, result)
        if ins.sets_flags:
            self._nzcv(state, result, c, v)
        return False

    _op_rsb = _op_rsbs

    def _op_adcs(self, state, ins, assume):
        a, b = self._binary_operands(state, ins)
        carry = state.flags["c"]
        rd = ins.operands[0].n
        if a is None or b is None or carry is None:
            state.set_reg(rd, None)
            if ins.sets_flags:
                self._nzcv(state, None, None, None)
            return False
        result, c, v = _add_with_carry(a, b, carry)
        state.set_reg(rd, result)
        if ins.sets_flags:
            self._nzcv(state, result, c, v)
        return False

    _op_adc = _op_adcs

    def _op_sbcs(self, state, ins, assume):
        a, b = self._binary_operands(state, ins)
        carry = state.flags["c"]
        rd = ins.operands[0].n
        if a is None or b is None or carry is None:
            state.set_reg(rd, None)
            if ins.sets_flags:
                self._nzcv(state, None, None, None)
            return False
        result, c, v = _add_with_carry(a, _u32(~b), carry)
        state.set_reg(rd, result)
        if ins.sets_flags:
            self._nzcv(state, result, c, v)
        return False

    _op_sbc = _op_sbcs

    def _op_cmp(self, state, ins, assume):
        a = self._value(state, ins.operands[0], ins)
        b = self._value(state, ins.operands[1], ins)
        if a is None or b is None:
            self._nzcv(state, None, None, None)
            return False
        result, c, v = _add_with_carry(a, _u32(~b), 1)
        self._nzcv(state, result, c, v)
        return False

    def _op_cmn(self, state, ins, assume):
        a = self._value(state, ins.operands[0], ins)
        b = self._value(state, ins.operands[1], ins)
        if a is None or b is None:
            self._nzcv(state, None, None, None)
            return False
        result, c, v = _add_with_carry(a, b, 0)
        self._nzcv(state, result, c, v)
        return False

    # ---- logical

    def _logical(self, state, ins, fn):
        a, b = self._binary_operands(state, ins)
        rd = ins.operands[0].n
        result = None if (a is None or b is None) else _u32(fn(a, b))
        state.set_reg(rd, result)
        if ins.sets_flags:
            self._nz(state, result)
        return False

    def _op_ands(self, state, ins, assume):
        return self._logical(state, ins, lambda a, b: a & b)

    _op_and = _op_ands

    def _op_orrs(self, state, ins, assume):
        return self._logical(state, ins, lambda a, b: a | b)

    _op_orr = _op_orrs

    def _op_eors(self, state, ins, assume):
        return self._logical(state, ins, lambda a, b: a ^ b)

    _op_eor = _op_eors

    def _op_bics(self, state, ins, assume):
        return self._logical(state, ins, lambda a, b: a & ~b)

    _op_bic = _op_bics

    def _op_tst(self, state, ins, assume):
        a = self._value(state, ins.operands[0], ins)
        b = self._value(state, ins.operands[1], ins)
        self._nz(state, None if (a is None or b is None) else a & b)
        return False

    # ---- shifts

    def _shift_amount(self, state, ins):
        if len(ins.operands) == 3:
            return ins.operands[2].value
        return state.regs[ins.operands[1].n]

    def _shift_source(self, state, ins):
        if len(ins.operands) == 3:
            return state.regs[ins.operands[1].n] \
                if ins.operands[1].n != PC else _u32(ins.address + 4)
        return state.regs[ins.operands[0].n]

    def _apply_shift(self, state, ins, kind):
        value = self._shift_source(state, ins)
        amount = self._shift_amount(state, ins)
        rd = ins.operands[0].n
        if value is None or amount is None:
            state.set_reg(rd, None)
            if ins.sets_flags:
                state.set_flags(n=None, z=None, c=None)
            return False
        amount &= 0xFF
        result, carry = _shift_c(value, kind, amount, state.flags["c"])
        state.set_reg(rd, result)
        if ins.sets_flags:
            self._nz(state, result)
            state.set_flags(c=carry)
        return False

    def _op_lsls(self, state, ins, assume):
        return self._apply_shift(state, ins, "lsl")

    _op_lsl = _op_lsls

    def _op_lsrs(self, state, ins, assume):
        return self._apply_shift(state, ins, "lsr")

    _op_lsr = _op_lsrs

    def _op_asrs(self, state, ins, assume):
        return self._apply_shift(state, ins, "asr")

    _op_asr = _op_asrs

    def _op_rors(self, state, ins, assume):
        return self._apply_shift(state, ins, "ror")

    _op_ror = _op_rors

    # ---- multiply / divide

    def _op_muls(self, state, ins, assume):
        a, b = self._binary_operands(state, ins)
        rd = ins.operands[0].n
        result = None if (a is None or b is None) else _u32(a * b)
        state.set_reg(rd, result)
        if ins.sets_flags:
            self._nz(state, result)
        return False

    def _op_mul(self, state, ins, assume):
        a = self._value(state, ins.operands[1], ins)
        b = self._value(state, ins.operands[2], ins)
        rd = ins.operands[0].n
        state.set_reg(rd, None if (a is None or b is None) else _u32(a * b))
        return False

    def _op_mla(self, state, ins, assume):
        _, rn, rm, ra = ins.operands
        a = state.regs[rn.n]
        b = state.regs[rm.n]
        acc = state.regs[ra.n]
        rd = ins.operands[0].n
        if None in (a, b, acc):
            state.set_reg(rd, None)
        else:
            state.set_reg(rd, _u32(acc + a * b))
        return False

    def _op_mls(self, state, ins, assume):
        _, rn, rm, ra = ins.operands
        a = state.regs[rn.n]
        b = state.regs[rm.n]
        acc = state.regs[ra.n]
        rd = ins.operands[0].n
        if None in (a, b, acc):
            state.set_reg(rd, None)
        else:
            state.set_reg(rd, _u32(acc - a * b))
        return False

    def _op_udiv(self, state, ins, assume):
        a = state.regs[ins.operands[1].n]
        b = state.regs[ins.operands[2].n]
        rd = ins.operands[0].n
        if a is None or b is None:
            state.set_reg(rd, None)
        elif b == 0:
            state.set_reg(rd, 0)
        else:
            state.set_reg(rd, a // b)
        return False

    def _op_sdiv(self, state, ins, assume):
        a = state.regs[ins.operands[1].n]
        b = state.regs[ins.operands[2].n]
        rd = ins.operands[0].n
        if a is None or b is None:
            state.set_reg(rd, None)
        elif _s32(b) == 0:
            state.set_reg(rd, 0)
        else:
            q = abs(_s32(a)) // abs(_s32(b))
            if (_s32(a) < 0) != (_s32(b) < 0):
                q = -q
            state.set_reg(rd, _u32(q))
        return False

    # ---- extend / byte-reverse

    def _op_sxtb(self, state, ins, assume):
        v = state.regs[ins.operands[1].n]
        state.set_reg(ins.operands[0].n,
                      None if v is None else _u32(_sext(v & 0xFF, 8)))
        return False

    def _op_sxth(self, state, ins, assume):
        v = state.regs[ins.operands[1].n]
        state.set_reg(ins.operands[0].n,
                      None if v is None else _u32(_sext(v & 0xFFFF, 16)))
        return False

    def _op_uxtb(self, state, ins, assume):
        v = state.regs[ins.operands[1].n]
        state.set_reg(ins.operands[0].n, None if v is None else v & 0xFF)
        return False

    def _op_uxth(self, state, ins, assume):
        v = state.regs[ins.operands[1].n]
        state.set_reg(ins.operands[0].n, None if v is None else v & 0xFFFF)
        return False

    def _op_rev(self, state, ins, assume):
        v = state.regs[ins.operands[1].n]
        if v is None:
            state.set_reg(ins.operands[0].n, None)
        else:
            state.set_reg(ins.operands[0].n,
                          ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) |
                          ((v >> 8) & 0xFF00) | ((v >> 24) & 0xFF))
        return False

    def _op_rev16(self, state, ins, assume):
        v = state.regs[ins.operands[1].n]
        if v is None:
            state.set_reg(ins.operands[0].n, None)
        else:
            state.set_reg(ins.operands[0].n,
                          ((v & 0x00FF00FF) << 8) | ((v >> 8) & 0x00FF00FF))
        return False

    def _op_revsh(self, state, ins, assume):
        v = state.regs[ins.operands[1].n]
        if v is None:
            state.set_reg(ins.operands[0].n, None)
        else:
            half = ((v & 0xFF) << 8) | ((v >> 8) & 0xFF)
            state.set_reg(ins.operands[0].n, _u32(_sext(half, 16)))
        return False

    # ---- loads / stores

    def _op_ldr(self, state, ins, assume):
        return self._load(state, ins, 4, signed=False)

    def _op_ldrh(self, state, ins, assume):
        return self._load(state, ins, 2, signed=False)

    def _op_ldrb(self, state, ins, assume):
        return self._load(state, ins, 1, signed=False)

    def _op_ldrsh(self, state, ins, assume):
        return self._load(state, ins, 2, signed=True)

    def _op_ldrsb(self, state, ins, assume):
        return self._load(state, ins, 1, signed=True)

    def _load(self, state, ins, size, signed):
        address = self._mem_address(state, ins.operands[1], ins)
        value = self.read_mem(state, address, size)
        if value is not None and signed:
            value = _u32(_sext(value, size * 8))
        rt = ins.operands[0].n
        state.set_reg(rt, value)
        return rt == PC and value is not None

    def _op_str(self, state, ins, assume):
        return self._store(state, ins, 4)

    def _op_strh(self, state, ins, assume):
        return self._store(state, ins, 2)

    def _op_strb(self, state, ins, assume):
        return self._store(state, ins, 1)

    def _store(self, state, ins, size):
        address = self._mem_address(state, ins.operands[1], ins)
        value = state.regs[ins.operands[0].n]
        self.write_mem(state, address, value, size)
        return False

    def _op_push(self, state, ins, assume):
        regs = ins.operands[0].regs
        sp = state.regs[SP]
        if sp is None:
            return False
        sp = _u32(sp - 4 * len(regs))
        for i, r in enumerate(regs):
            value = state.regs[r] if r != PC else _u32(ins.address + 4)
            self.write_mem(state, sp + 4 * i, value, 4)
        state.set_reg(SP, sp)
        return False

    def _op_pop(self, state, ins, assume):
        regs = ins.operands[0].regs
        sp = state.regs[SP]
        if sp is None:
            for r in regs:
                state.set_reg(r, None)
            return PC in regs
        jumped = False
        for i, r in enumerate(regs):
            value = self.read_mem(state, sp + 4 * i, 4)
            if r == PC:
                if value is None:
                    state.set_reg(PC, None)
                else:
                    state.set_reg(PC, value & ~1)
                jumped = True
            else:
                state.set_reg(r, value)
        state.set_reg(SP, _u32(sp + 4 * len(regs)))
        return jumped

    def _op_stmia(self, state, ins, assume):
        rn = ins.operands[0].n
        regs = ins.operands[1].regs
        base = state.regs[rn]
        if base is not None:
            for i, r in enumerate(regs):
                self.write_mem(state, base + 4 * i, state.regs[r], 4)
        if ins.writeback:
            state.set_reg(rn, None if base is None
                          else _u32(base + 4 * len(regs)))
        return False

    def _op_ldmia(self, state, ins, assume):
        rn = ins.operands[0].n
        regs = ins.operands[1].regs
        base = state.regs[rn]
        jumped = False
        for i, r in enumerate(regs):
            value = None if base is None else \
                self.read_mem(state, base + 4 * i, 4)
            if r == PC:
                state.set_reg(PC, None if value is None else value & ~1)
                jumped = True
            else:
                state.set_reg(r, value)
        if ins.writeback and rn not in regs:
            state.set_reg(rn, None if base is None
                          else _u32(base + 4 * len(regs)))
        return jumped

    def _op_stmdb(self, state, ins, assume):
        rn = ins.operands[0].n
        regs = ins.operands[1].regs
        base = state.regs[rn]
        if base is None:
            if ins.writeback:
                state.set_reg(rn, None)
            return False
        base = _u32(base - 4 * len(regs))
        for i, r in enumerate(regs):
            self.write_mem(state, base + 4 * i, state.regs[r], 4)
        if ins.writeback:
            state.set_reg(rn, base)
        return False

    # ---- control flow

    def _op_b(self, state, ins, assume):
        passes = self.condition_passes(state, ins.condition) \
            if assume is None else assume
        if passes is None:
            raise IndeterminateCondition(ins)
        if passes:
            state.pc = ins.target
            return True
        return False

    def _op_bl(self, state, ins, assume):
        state.set_reg(LR, (ins.address + ins.width) | 1)
        state.pc = ins.target
        return True

    def _op_bx(self, state, ins, assume):
        value = state.regs[ins.operands[0].n]
        state.pc = None if value is None else value & ~1
        return True

    def _op_blx(self, state, ins, assume):
        value = state.regs[ins.operands[0].n]
        state.set_reg(LR, (ins.address + ins.width) | 1)
        state.pc = None if value is None else value & ~1
        return True

    def _op_cbz(self, state, ins, assume):
        value = state.regs[ins.operands[0].n]
        if assume is None:
            if value is None:
                raise IndeterminateCondition(ins)
            taken = value == 0
        else:
            taken = assume
        if taken:
            state.pc = ins.target
            return True
        return False

    def _op_cbnz(self, state, ins, assume):
        value = state.regs[ins.operands[0].n]
        if assume is None:
            if value is None:
                raise IndeterminateCondition(ins)
            taken = value != 0
        else:
            taken = assume
        if taken:
            state.pc = ins.target
            return True
        return False

    def _op_tbb(self, state, ins, assume):
        return self._table_branch(state, ins, 1)

    def _op_tbh(self, state, ins, assume):
        return self._table_branch(state, ins, 2)

    def _table_branch(self, state, ins, entry_size):
        mem = ins.operands[0]
        base = _u32(ins.address + 4) if mem.base == PC else state.regs[mem.base]
        idx = state.regs[mem.index]
        if base is None or idx is None:
            raise IndeterminateCondition(ins)
        entry = self.read_mem(state, base + idx * entry_size, entry_size)
        if entry is None:
            raise IndeterminateCondition(ins)
        state.pc = _u32(ins.address + 4 + 2 * entry)
        return True

    def _op_svc(self, state, ins, assume):
        # stack-call success convention: result register cleared
        state.set_reg(0, 0)
        return False

    # ---- no-effect / system

    def _op_nop(self, state, ins, assume):
        return False

    _op_yield = _op_nop
    _op_wfe = _op_nop
    _op_wfi = _op_nop
    _op_sev = _op_nop
    _op_cpsie = _op_nop
    _op_cpsid = _op_nop
    _op_dmb = _op_nop
    _op_dsb = _op_nop
    _op_isb = _op_nop
    _op_msr = _op_nop

    def _op_it(self, state, ins, assume):
        return False

    def _op_mrs(self, state, ins, assume):
        state.set_reg(ins.operands[0].n, None)
        return False

    def __getattr__(self, name):
        if name.startswith("_op_it"):
            return self._op_it
        raise AttributeError(name)

    # -- modelled long-running functions -----------------------------------

    def run_modeled(self, state: MachineState, callee: str) -> MachineState:
        """Apply the effect of a recognised library routine natively.

        memset: r0 destination, r1 fill byte, r2 length, returns r0.
        udivsi3: r0 = r0 / r1 (unsigned, truncated; divide by zero -> 0).
        """
        if callee == "memset":
            dest = state.regs[0]
            fill = state.regs[1]
            length = state.regs[2]
            if dest is None:
                return state
            if length is None:
                for i in range(256):
                    state.memory[_u32(dest + i)] = None
                return state
            byte = None if fill is None else fill & 0xFF
            for i in range(length):
                state.memory[_u32(dest + i)] = byte
            return state
        if callee == "udivsi3":
            a, b = state.regs[0], state.regs[1]
            if a is None or b is None:
                state.set_reg(0, None)
            elif b == 0:
                state.set_reg(0, 0)
            else:
                state.set_reg(0, a // b)
            return state
        raise ValueError(f"unknown modelled callee: {callee}")


def _sext(value: int, bits: int) -> int:
    if value & (1 << (bits - 1)):
        value -= 1 << bits
    return value


def _shift_c(value: int, kind: str, amount: int, carry_in):
    """Shift with carry-out; carry_in returned when the shift leaves C alone."""
    if amount == 0:
        return value, carry_in
    if kind == "lsl":
        if amount > 32:
            return 0, 0
        if amount == 32:
            return 0, value & 1
        return _u32(value << amount), (value >> (32 - amount)) & 1
    if kind == "lsr":
        if amount > 32:
            return 0, 0
        if amount == 32:
            return 0, (value >> 31) & 1
        return value >> amount, (value >> (amount - 1)) & 1
    if kind == "asr":
        if amount >= 32:
            sign = (value >> 31) & 1
            return (0xFFFFFFFF if sign else 0), sign
        return _u32(_sext(value, 32) >> amount), (value >> (amount - 1)) & 1
    if kind == "ror":
        amount %= 32
        if amount == 0:
            return value, (value >> 31) & 1
        result = _u32((value >> amount) | (value << (32 - amount)))
        return result, (result >> 31) & 1
    raise ValueError(kind)
