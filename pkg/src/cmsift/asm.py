"""A small two-pass Thumb assembler for building test firmware.

Accepts exactly the instruction subset the decoder understands, using the
same canonical syntax the decoder renders.  This is tooling for fixtures,
demos and benchmarks, not a general-purpose assembler: wide encodings are
selected explicitly (``ldr.w``, ``b.w``), sizes are static per mnemonic,
and expressions are limited to ``label``, ``label+n``, ``label-n`` and
integer literals.

Directives: ``.word``, ``.hword``, ``.byte``, ``.ascii``, ``.space``,
``.align``, ``.pool`` (flushes ``ldr rX, =expr`` literals).
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field

from .isa import (
    COND_NAMES,
    LR,
    PC,
    SP,
    DecodedInstruction,
    Imm,
    Mem,
    Reg,
    RegList,
    Target,
    it_condition_list,
    thumb_expand_imm,
)

_REG_ALIASES = {"r0": 0, "r1": 1, "r2": 2, "r3": 3, "r4": 4, "r5": 5,
                "r6": 6, "r7": 7, "r8": 8, "r9": 9, "r10": 10, "r11": 11,
                "r12": 12, "sp": 13, "r13": 13, "lr": 14, "r14": 14,
                "pc": 15, "r15": 15}

_FMT4_OPS = {"ands": 0, "eors": 1, "lsls": 2, "lsrs": 3, "asrs": 4,
             "adcs": 5, "sbcs": 6, "rors": 7, "tst": 8, "rsbs": 9,
             "cmp": 10, "cmn": 11, "orrs": 12, "muls": 13, "bics": 14,
             "mvns": 15}

_HINT_ENC = {"nop": 0xBF00, "yield": 0xBF10, "wfe": 0xBF20, "wfi": 0xBF30,
             "sev": 0xBF40}

_WIDE_MNEMONICS = {"bl", "b.w", "mov.w", "movw", "movt", "tbb", "tbh",
                   "stmdb", "ldmia.w", "stmia.w", "udiv", "sdiv", "mul",
                   "mla", "mls", "mrs", "msr", "dmb", "dsb", "isb",
                   "ldr.w", "ldrb.w", "ldrh.w", "ldrsb.w", "ldrsh.w",
                   "str.w", "strb.w", "strh.w"}

# mnemonics that lose their "s" inside an IT block; maps the bare name
# written in source back to the flag-setting encoding
_IT_SFORM = {"mov": "movs", "add": "adds", "sub": "subs", "lsl": "lsls",
             "lsr": "lsrs", "asr": "asrs", "and": "ands", "orr": "orrs",
             "eor": "eors", "bic": "bics", "mvn": "mvns", "mul": "muls",
             "adc": "adcs", "sbc": "sbcs", "ror": "rors", "rsb": "rsbs"}

_S_SUFFIXED = set(_IT_SFORM.values())


class AsmError(Exception):
    pass


@dataclass(frozen=True)
class Expr:
    text: str

    def resolve(self, symbols: dict[str, int]) -> int:
        t = self.text.strip()
        m = re.fullmatch(r"([A-Za-z_.$][\w.$]*)\s*([+-])\s*(.+)", t)
        if m:
            base = symbols.get(m.group(1))
            if base is None:
                raise AsmError(f"undefined symbol: {m.group(1)}")
            off = int(m.group(3), 0)
            return base + off if m.group(2) == "+" else base - off
        if re.fullmatch(r"-?0[xX][0-9a-fA-F]+|-?\d+", t):
            return int(t, 0)
        if t in symbols:
            return symbols[t]
        raise AsmError(f"cannot resolve expression: {t!r}")


@dataclass
class _Item:
    kind: str               # ins | word | hword | byte | ascii | space | align | pool
    address: int = 0
    size: int = 0
    mnemonic: str = ""
    cond: str | None = None
    raw_operands: list = field(default_factory=list)
    payload: list = field(default_factory=list)
    line: str = ""
    lineno: int = 0
    literal: Expr | None = None      # for ldr rX, =expr
    literal_addr: int | None = None
    it_conds: tuple = ()
    in_it_cond: str | None = None


@dataclass
class AsmResult:
    base: int
    data: bytes
    symbols: dict[str, int]
    listing: list          # [(address, text)] for instructions
    data_ranges: list      # [(address, size)] ground-truth inline data
    instruction_addresses: list


def _split_operands(text: str) -> list[str]:
    out = []
    depth = 0
    cur = ""
    for ch in text:
        if ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur.strip())
    return out


class Assembler:
    def __init__(self, base: int = 0):
        self.base = base

    def assemble(self, source: str) -> AsmResult:
        items: list[_Item] = []
        symbols: dict[str, int] = {}
        pending: list[_Item] = []
        address = self.base
        it_queue: list[str] = []

        for lineno, raw_line in enumerate(source.splitlines(), 1):
            line = raw_line.split(";")[0].split("@")[0].strip()
            if not line:
                continue
            while True:
                m = re.match(r"^([A-Za-z_.$][\w.$]*):\s*", line)
                if not m:
                    break
                symbols[m.group(1)] = address
                line = line[m.end():]
            if not line:
                continue

            if line.startswith("."):
                item = self._parse_directive(line, lineno)
                if item.kind == "align":
                    item.size = (-address) % item.payload[0]
                elif item.kind == "pool":
                    pad = (-address) % 4
                    slots: dict[str, int] = {}
                    for p in pending:
                        key = p.literal.text
                        if key not in slots:
                            slots[key] = address + pad + 4 * len(slots)
                        p.literal_addr = slots[key]
                    item.size = pad + 4 * len(slots)
                    item.payload = sorted(slots.items(), key=lambda kv: kv[1])
                    pending = []
                item.address = address
                address += item.size
                items.append(item)
                continue

            item = self._parse_instruction(line, lineno)
            if it_queue:
                item.in_it_cond = it_queue.pop(0)
                mn = item.mnemonic
                if mn.endswith(item.in_it_cond):
                    mn = mn[: -len(item.in_it_cond)]
                if mn in _IT_SFORM and self._wants_sform(mn, item.raw_operands):
                    mn = _IT_SFORM[mn]
                item.mnemonic = mn
            if item.mnemonic.startswith("it") and item.it_conds:
                it_queue = list(item.it_conds)
            if item.literal is not None:
                pending.append(item)
            item.address = address
            address += item.size
            items.append(item)

        if pending:
            raise AsmError("unflushed literal pool; add a .pool directive")

        blob = bytearray()
        listing = []
        data_ranges = []
        ins_addresses = []
        for item in items:
            at = item.address
            if item.kind == "ins":
                encoded, rendered = self._encode(item, symbols)
                blob += encoded
                listing.append((at, rendered))
                ins_addresses.append(at)
            elif item.kind == "align":
                blob += b"\x00" * item.size
            elif item.kind == "pool":
                pad = item.size - 4 * len(item.payload)
                blob += b"\x00" * pad
                for key, slot_addr in item.payload:
                    blob += struct.pack("<I", Expr(key).resolve(symbols)
                                        & 0xFFFFFFFF)
                if item.payload:
                    data_ranges.append((at + pad, 4 * len(item.payload)))
            elif item.kind == "word":
                for e in item.payload:
                    blob += struct.pack("<I", e.resolve(symbols) & 0xFFFFFFFF)
                data_ranges.append((at, 4 * len(item.payload)))
            elif item.kind == "hword":
                for e in item.payload:
                    blob += struct.pack("<H", e.resolve(symbols) & 0xFFFF)
                data_ranges.append((at, 2 * len(item.payload)))
            elif item.kind == "byte":
                for e in item.payload:
                    blob.append(e.resolve(symbols) & 0xFF)
                data_ranges.append((at, len(item.payload)))
            elif item.kind == "ascii":
                blob += item.payload[0]
                data_ranges.append((at, len(item.payload[0])))
            elif item.kind == "space":
                blob += bytes([item.payload[1]]) * item.payload[0]
                data_ranges.append((at, item.payload[0]))
        return AsmResult(self.base, bytes(blob), symbols, listing,
                         data_ranges, ins_addresses)

    @staticmethod
    def _wants_sform(mn: str, raw_operands: list) -> bool:
        if mn in ("mov", "add", "sub"):
            # 2-register mov/add keep their non-flag (hi-reg) encoding
            return len(raw_operands) >= 2 and raw_operands[-1].startswith("#") \
                and not (mn in ("add", "sub")
                         and raw_operands[0].lower() in ("sp", "r13"))
        return True

    # -- parsing --------------------------------------------------------

    def _parse_directive(self, line: str, lineno: int) -> _Item:
        parts = line.split(None, 1)
        name = parts[0]
        rest = parts[1] if len(parts) > 1 else ""
        if name == ".word":
            exprs = [Expr(t) for t in _split_operands(rest)]
            return _Item("word", size=4 * len(exprs), payload=exprs,
                         lineno=lineno)
        if name in (".hword", ".half"):
            exprs = [Expr(t) for t in _split_operands(rest)]
            return _Item("hword", size=2 * len(exprs), payload=exprs,
                         lineno=lineno)
        if name == ".byte":
            exprs = [Expr(t) for t in _split_operands(rest)]
            return _Item("byte", size=len(exprs), payload=exprs,
                         lineno=lineno)
        if name == ".ascii":
            m = re.fullmatch(r'"([^"]*)"', rest.strip())
            if not m:
                raise AsmError(f"line {lineno}: bad .ascii")
            return _Item("ascii", size=len(m.group(1)),
                         payload=[m.group(1).encode()], lineno=lineno)
        if name == ".space":
            args = _split_operands(rest)
            n = int(args[0], 0)
            fill = int(args[1], 0) if len(args) > 1 else 0
            return _Item("space", size=n, payload=[n, fill], lineno=lineno)
        if name == ".align":
            return _Item("align", payload=[int(rest, 0) if rest else 4],
                         lineno=lineno)
        if name == ".pool":
            return _Item("pool", lineno=lineno)
        raise AsmError(f"line {lineno}: unknown directive {name}")

    def _parse_instruction(self, line: str, lineno: int) -> _Item:
        parts = line.split(None, 1)
        mnemonic = parts[0].lower()
        rest = parts[1] if len(parts) > 1 else ""
        cond = None

        if re.fullmatch(r"it[te]{0,3}", mnemonic):
            cond_name = rest.strip().lower()
            if cond_name not in COND_NAMES:
                raise AsmError(f"line {lineno}: bad it condition {cond_name}")
            conds = it_condition_list(COND_NAMES.index(cond_name),
                                      self._it_mask(mnemonic, cond_name))
            return _Item("ins", size=2, mnemonic=mnemonic,
                         raw_operands=[cond_name], it_conds=conds,
                         line=line, lineno=lineno)

        m = re.fullmatch(r"b(eq|ne|cs|cc|mi|pl|vs|vc|hi|ls|ge|lt|gt|le)(\.w)?",
                         mnemonic)
        if m:
            cond = m.group(1)
            mnemonic = "b.w" if m.group(2) else "b"

        size = 4 if mnemonic in _WIDE_MNEMONICS else 2
        operands = _split_operands(rest)
        literal = None
        if operands and operands[-1].startswith("="):
            if mnemonic != "ldr":
                raise AsmError(f"line {lineno}: =literal only valid with ldr")
            literal = Expr(operands[-1][1:])
        return _Item("ins", size=size, mnemonic=mnemonic, cond=cond,
                     raw_operands=operands, line=line, lineno=lineno,
                     literal=literal)

    @staticmethod
    def _it_mask(mnemonic: str, cond: str) -> int:
        suffix = mnemonic[2:]
        fc0 = COND_NAMES.index(cond) & 1
        length = 1 + len(suffix)
        mask = 1 << (4 - length)
        for k, ch in enumerate(suffix, start=1):
            bit = fc0 if ch == "t" else fc0 ^ 1
            mask |= bit << (4 - k)
        return mask

    # -- operand parsing ----------------------------------------------

    def _operand(self, text: str, symbols):
        text = text.strip()
        bare = text.rstrip("!").lower()
        if bare in _REG_ALIASES:
            return Reg(_REG_ALIASES[bare]), text.endswith("!")
        if text.startswith("#"):
            return Imm(Expr(text[1:]).resolve(symbols)), False
        if text.startswith("{"):
            regs = sorted(_REG_ALIASES[t.strip().lower()]
                          for t in text[1:-1].split(","))
            return RegList(tuple(regs)), False
        if text.startswith("["):
            inner = _split_operands(text[1:-1])
            base = _REG_ALIASES[inner[0].lower()]
            offset = 0
            index = None
            shift = 0
            if len(inner) > 1:
                if inner[1].startswith("#"):
                    offset = Expr(inner[1][1:]).resolve(symbols)
                else:
                    index = _REG_ALIASES[inner[1].lower()]
                    if len(inner) > 2:
                        m = re.fullmatch(r"lsl\s+#(\d+)", inner[2])
                        if not m:
                            raise AsmError(f"bad shift: {inner[2]}")
                        shift = int(m.group(1))
            return Mem(base, offset, index, shift), False
        return Target(Expr(text).resolve(symbols) & 0xFFFFFFFF), False

    # -- encoding -------------------------------------------------------

    def _encode(self, item: _Item, symbols):
        mn = item.mnemonic
        addr = item.address
        cond = item.cond

        if mn in ("cpsie", "cpsid"):
            flagmap = {"a": 4, "i": 2, "f": 1}
            bits = sum(flagmap[c] for c in item.raw_operands[0].lower())
            ops = [Imm(bits)]
            wbs = [False]
        elif mn in ("svc", "bkpt", "udf"):
            op, _ = self._operand(item.raw_operands[0], symbols)
            ops = [Imm(op.value if isinstance(op, Imm) else op.address)]
            wbs = [False]
        elif item.it_conds:
            ops = []
            wbs = []
        elif item.literal is not None:
            off = item.literal_addr - ((addr + 4) & ~3)
            ops = [self._operand(item.raw_operands[0], symbols)[0],
                   Mem(PC, off)]
            wbs = [False, False]
        else:
            ops = []
            wbs = []
            for o in item.raw_operands:
                op, wb = self._operand(o, symbols)
                ops.append(op)
                wbs.append(wb)

        hw = self._encode_ops(item, mn, cond, ops, wbs, addr)
        if isinstance(hw, tuple):
            encoded = struct.pack("<HH", hw[0], hw[1])
        else:
            encoded = struct.pack("<H", hw)
        return encoded, self._render(item, mn, cond, ops, wbs, addr)

    def _render(self, item, mn, cond, ops, wbs, addr) -> str:
        """Listing text built from the parse, for decode-identity checks."""
        if mn.startswith("it") and item.it_conds:
            return DecodedInstruction(addr, mn, (Imm(0),), 2,
                                      it_conds=item.it_conds).render()
        mnemonic = mn
        condition = cond or item.in_it_cond
        if item.in_it_cond and mnemonic in _S_SUFFIXED:
            mnemonic = mnemonic[:-1]
        wide = item.size == 4
        if mn == "b.w" and cond is not None:
            mnemonic = "b"
        d = DecodedInstruction(addr, mnemonic, tuple(ops), item.size,
                               condition=condition, wide=wide,
                               writeback=bool(wbs and wbs[0]))
        return d.render()

    def _encode_ops(self, item: _Item, mn, cond, ops, wbs, addr):
        E = AsmError

        def reg(i):
            if not isinstance(ops[i], Reg):
                raise E(f"line {item.lineno}: operand {i} must be a register")
            return ops[i].n

        def imm(i):
            if isinstance(ops[i], Imm):
                return ops[i].value
            if isinstance(ops[i], Target):
                return ops[i].address
            raise E(f"line {item.lineno}: operand {i} must be immediate")

        def target(i):
            if isinstance(ops[i], Target):
                return ops[i].address
            raise E(f"line {item.lineno}: operand {i} must be an address")

        def fit(value, lo, hi, what):
            if not lo <= value <= hi:
                raise E(f"line {item.lineno}: {what} out of range: {value}"
                        f" ({item.line})")
            return value

        nops = len(ops)

        if mn == "b" and cond is None:
            off = target(0) - (addr + 4)
            fit(off, -2048, 2046, "b offset")
            return 0xE000 | ((off >> 1) & 0x7FF)
        if mn == "b" and cond is not None:
            off = target(0) - (addr + 4)
            fit(off, -256, 254, "bcc offset")
            return 0xD000 | (COND_NAMES.index(cond) << 8) | ((off >> 1) & 0xFF)
        if mn in ("bl", "b.w") and cond is None:
            off = target(0) - (addr + 4)
            fit(off, -(1 << 24), (1 << 24) - 2, "bl offset")
            s = (off >> 24) & 1
            j1 = (~(((off >> 23) & 1) ^ s)) & 1
            j2 = (~(((off >> 22) & 1) ^ s)) & 1
            hw1 = 0xF000 | (s << 10) | ((off >> 12) & 0x3FF)
            hw2 = ((0xD000 if mn == "bl" else 0x9000)
                   | (j1 << 13) | (j2 << 11) | ((off >> 1) & 0x7FF))
            return hw1, hw2
        if mn == "b.w" and cond is not None:
            off = target(0) - (addr + 4)
            fit(off, -(1 << 20), (1 << 20) - 2, "bcc.w offset")
            s = (off >> 20) & 1
            j2 = (off >> 19) & 1
            j1 = (off >> 18) & 1
            hw1 = 0xF000 | (s << 10) | (COND_NAMES.index(cond) << 6) | \
                ((off >> 12) & 0x3F)
            hw2 = 0x8000 | (j1 << 13) | (j2 << 11) | ((off >> 1) & 0x7FF)
            return hw1, hw2
        if mn == "bx":
            return 0x4700 | (reg(0) << 3)
        if mn == "blx":
            return 0x4780 | (reg(0) << 3)
        if mn in ("cbz", "cbnz"):
            off = target(1) - (addr + 4)
            fit(off, 0, 126, "cbz offset")
            return (0xB100 | (0x0800 if mn == "cbnz" else 0)
                    | (((off >> 6) & 1) << 9) | (((off >> 1) & 0x1F) << 3)
                    | reg(0))

        if mn == "movs":
            if isinstance(ops[1], Imm):
                return 0x2000 | (reg(0) << 8) | fit(imm(1), 0, 255, "imm8")
            return (reg(1) << 3) | reg(0)
        if mn == "mov" and nops == 2 and isinstance(ops[1], Reg):
            rd, rm = reg(0), reg(1)
            return 0x4600 | ((rd & 8) << 4) | (rm << 3) | (rd & 7)
        if mn in ("lsls", "lsrs", "asrs") and nops == 3:
            op = {"lsls": 0, "lsrs": 1, "asrs": 2}[mn]
            sh = imm(2)
            if mn != "lsls" and sh == 32:
                sh = 0
            fit(sh, 1 if mn == "lsls" else 0, 31, "shift")
            return (op << 11) | (sh << 6) | (reg(1) << 3) | reg(0)
        if mn == "rsbs":
            return 0x4240 | (reg(1) << 3) | reg(0)
        if mn in _FMT4_OPS and nops == 2:
            if mn == "cmp" and isinstance(ops[1], Imm):
                return 0x2800 | (reg(0) << 8) | fit(imm(1), 0, 255, "imm8")
            if mn == "cmp" and (reg(0) > 7 or reg(1) > 7):
                rn, rm = reg(0), reg(1)
                return 0x4500 | ((rn & 8) << 4) | (rm << 3) | (rn & 7)
            return 0x4000 | (_FMT4_OPS[mn] << 6) | (reg(1) << 3) | reg(0)
        if mn in ("adds", "subs"):
            sub = mn == "subs"
            if nops == 2 and isinstance(ops[1], Imm):
                return (0x3800 if sub else 0x3000) | (reg(0) << 8) | \
                    fit(imm(1), 0, 255, "imm8")
            if nops == 3 and isinstance(ops[2], Imm):
                return (0x1E00 if sub else 0x1C00) | \
                    (fit(imm(2), 0, 7, "imm3") << 6) | (reg(1) << 3) | reg(0)
            if nops == 3:
                return (0x1A00 if sub else 0x1800) | (reg(2) << 6) | \
                    (reg(1) << 3) | reg(0)
        if mn == "add":
            if nops == 2 and isinstance(ops[1], Imm) and reg(0) == SP:
                return 0xB000 | fit(imm(1) // 4, 0, 127, "sp imm")
            if nops == 3 and isinstance(ops[1], Reg) and ops[1].n == SP:
                return 0xA800 | (reg(0) << 8) | fit(imm(2) // 4, 0, 255, "imm")
            if nops == 2 and isinstance(ops[1], Reg):
                rdn, rm = reg(0), reg(1)
                return 0x4400 | ((rdn & 8) << 4) | (rm << 3) | (rdn & 7)
        if mn == "sub" and nops == 2 and isinstance(ops[1], Imm) and \
                reg(0) == SP:
            return 0xB080 | fit(imm(1) // 4, 0, 127, "sp imm")
        if mn == "adr":
            off = target(1) - ((addr + 4) & ~3)
            fit(off, 0, 1020, "adr offset")
            if off % 4:
                raise E(f"line {item.lineno}: adr target not word-aligned")
            return 0xA000 | (reg(0) << 8) | (off >> 2)

        if mn in ("sxth", "sxtb", "uxth", "uxtb"):
            op = {"sxth": 0, "sxtb": 1, "uxth": 2, "uxtb": 3}[mn]
            return 0xB200 | (op << 6) | (reg(1) << 3) | reg(0)
        if mn in ("rev", "rev16", "revsh"):
            op = {"rev": 0, "rev16": 1, "revsh": 3}[mn]
            return 0xBA00 | (op << 6) | (reg(1) << 3) | reg(0)

        if mn in ("str", "strh", "strb", "ldrsb", "ldr", "ldrh", "ldrb",
                  "ldrsh") and nops == 2 and isinstance(ops[1], Mem):
            memop = ops[1]
            rt = reg(0)
            if memop.index is not None:
                op = ["str", "strh", "strb", "ldrsb",
                      "ldr", "ldrh", "ldrb", "ldrsh"].index(mn)
                fit(rt, 0, 7, "rt")
                fit(memop.base, 0, 7, "rn")
                fit(memop.index, 0, 7, "rm")
                return 0x5000 | (op << 9) | (memop.index << 6) | \
                    (memop.base << 3) | rt
            if memop.base == PC and mn == "ldr":
                off = fit(memop.offset, 0, 1020, "literal offset")
                return 0x4800 | (fit(rt, 0, 7, "rt") << 8) | (off >> 2)
            if memop.base == SP and mn in ("ldr", "str"):
                return (0x9800 if mn == "ldr" else 0x9000) | \
                    (fit(rt, 0, 7, "rt") << 8) | \
                    fit(memop.offset // 4, 0, 255, "sp offset")
            fit(rt, 0, 7, "rt")
            fit(memop.base, 0, 7, "rn")
            if mn in ("ldr", "str"):
                return (0x6800 if mn == "ldr" else 0x6000) | \
                    (fit(memop.offset // 4, 0, 31, "imm5") << 6) | \
                    (memop.base << 3) | rt
            if mn in ("ldrb", "strb"):
                return (0x7800 if mn == "ldrb" else 0x7000) | \
                    (fit(memop.offset, 0, 31, "imm5") << 6) | \
                    (memop.base << 3) | rt
            if mn in ("ldrh", "strh"):
                return (0x8800 if mn == "ldrh" else 0x8000) | \
                    (fit(memop.offset // 2, 0, 31, "imm5") << 6) | \
                    (memop.base << 3) | rt

        if mn == "push":
            bits = 0
            for r in ops[0].regs:
                if r < 8:
                    bits |= 1 << r
                elif r == LR:
                    bits |= 1 << 8
                else:
                    raise E(f"line {item.lineno}: bad push register")
            return 0xB400 | bits
        if mn == "pop":
            bits = 0
            for r in ops[0].regs:
                if r < 8:
                    bits |= 1 << r
                elif r == PC:
                    bits |= 1 << 8
                else:
                    raise E(f"line {item.lineno}: bad pop register")
            return 0xBC00 | bits
        if mn in ("stmia", "ldmia"):
            bits = 0
            for r in ops[1].regs:
                fit(r, 0, 7, "reglist")
                bits |= 1 << r
            return (0xC800 if mn == "ldmia" else 0xC000) | (reg(0) << 8) | bits

        if mn in _HINT_ENC:
            return _HINT_ENC[mn]
        if item.it_conds:
            first = COND_NAMES.index(item.raw_operands[0])
            return 0xBF00 | (first << 4) | self._it_mask(mn, item.raw_operands[0])
        if mn == "svc":
            return 0xDF00 | fit(imm(0), 0, 255, "svc")
        if mn == "bkpt":
            return 0xBE00 | fit(imm(0), 0, 255, "bkpt")
        if mn == "udf":
            return 0xDE00 | fit(imm(0), 0, 255, "udf")
        if mn in ("cpsie", "cpsid"):
            return 0xB660 | (0x10 if mn == "cpsid" else 0) | ops[0].value

        if mn == "mov.w":
            imm12 = _mod_imm_encode(imm(1))
            if imm12 is None:
                raise E(f"line {item.lineno}: not a modified immediate: "
                        f"{imm(1):#x}")
            return (0xF04F | ((imm12 >> 11) << 10),
                    (((imm12 >> 8) & 7) << 12) | (reg(0) << 8) | (imm12 & 0xFF))
        if mn in ("movw", "movt"):
            v = fit(imm(1), 0, 0xFFFF, "imm16")
            base = 0xF240 if mn == "movw" else 0xF2C0
            return (base | (((v >> 11) & 1) << 10) | (v >> 12),
                    (((v >> 8) & 7) << 12) | (reg(0) << 8) | (v & 0xFF))
        if mn in ("tbb", "tbh"):
            memop = ops[0]
            return (0xE8D0 | memop.base,
                    0xF000 | (0x10 if mn == "tbh" else 0) | memop.index)
        if mn == "stmdb":
            return (0xE900 | (0x20 if wbs[0] else 0) | reg(0),
                    _reglist_bits(ops[1].regs))
        if mn == "ldmia.w":
            return (0xE890 | (0x20 if wbs[0] else 0) | reg(0),
                    _reglist_bits(ops[1].regs))
        if mn == "stmia.w":
            return (0xE880 | (0x20 if wbs[0] else 0) | reg(0),
                    _reglist_bits(ops[1].regs))
        if mn in ("udiv", "sdiv"):
            return ((0xFBB0 if mn == "udiv" else 0xFB90) | reg(1),
                    0xF0F0 | (reg(0) << 8) | reg(2))
        if mn == "mul":
            return 0xFB00 | reg(1), 0xF000 | (reg(0) << 8) | reg(2)
        if mn in ("mla", "mls"):
            return (0xFB00 | reg(1),
                    (reg(3) << 12) | (reg(0) << 8) |
                    (0x10 if mn == "mls" else 0) | reg(2))
        if mn == "mrs":
            return 0xF3EF, 0x8000 | (reg(0) << 8) | fit(imm(1), 0, 255, "sysm")
        if mn == "msr":
            return 0xF380 | reg(1), 0x8800 | fit(imm(0), 0, 255, "sysm")
        if mn in ("dmb", "dsb", "isb"):
            return 0xF3BF, 0x8F00 | ({"dsb": 4, "dmb": 5, "isb": 6}[mn] << 4)
        if mn.endswith(".w") and mn[:-2] in ("ldr", "ldrb", "ldrh", "ldrsb",
                                             "ldrsh", "str", "strb", "strh"):
            return self._encode_wide_mem(item, mn[:-2], ops)

        raise E(f"line {item.lineno}: cannot encode: {item.line!r}")

    def _encode_wide_mem(self, item, name, ops):
        rt = ops[0].n
        memop = ops[1]
        size = {"ldr": 2, "str": 2, "ldrb": 0, "strb": 0, "ldrsb": 0,
                "ldrh": 1, "strh": 1, "ldrsh": 1}[name]
        load = name.startswith("ld")
        signed = name in ("ldrsb", "ldrsh")
        hw1 = 0xF800 | (size << 5) | (0x10 if load else 0) | \
            (0x100 if signed else 0)
        if memop.base == PC:
            if not load:
                raise AsmError(f"line {item.lineno}: pc-relative store")
            u = 1 if memop.offset >= 0 else 0
            return (hw1 | (u << 7) | 0xF,
                    (rt << 12) | (abs(memop.offset) & 0xFFF))
        if memop.index is not None:
            return (hw1 | memop.base,
                    (rt << 12) | (memop.shift << 4) | memop.index)
        if memop.offset >= 0:
            if memop.offset > 0xFFF:
                raise AsmError(f"line {item.lineno}: offset too large")
            return hw1 | 0x80 | memop.base, (rt << 12) | memop.offset
        if -memop.offset > 0xFF:
            raise AsmError(f"line {item.lineno}: negative offset too large")
        return hw1 | memop.base, (rt << 12) | 0xC00 | (-memop.offset)


def _reglist_bits(regs) -> int:
    bits = 0
    for r in regs:
        bits |= 1 << r
    return bits


def _mod_imm_encode(value: int) -> int | None:
    """Inverse of thumb_expand_imm; None when not encodable."""
    value &= 0xFFFFFFFF
    if value <= 0xFF:
        return value
    b = value & 0xFF
    if value == (b << 16) | b:
        return 0x100 | b
    if value == (b << 24) | (b << 8):
        return 0x200 | (value >> 24)
    if value == (b << 24) | (b << 16) | (b << 8) | b:
        return 0x300 | b
    for rot in range(8, 32):
        base = ((value << rot) | (value >> (32 - rot))) & 0xFFFFFFFF
        if 0x80 <= base <= 0xFF:
            return (rot << 7) | (base & 0x7F)
    return None


def assemble(source: str, base: int = 0) -> AsmResult:
    return Assembler(base).assemble(source)
