"""Calls of Interest: supervisor calls and pattern-matched functions.

Supervisor calls are found by a linear scan over the decoded (data-free)
instruction stream.  Configuration functions that are reached by plain
calls are located behaviourally: candidate blocks are executed with the
inputs of each test set and their outputs compared, with wildcard
addresses standing in for binary-specific locations.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

from .errors import AmbiguousMatch, BudgetExceeded, NoMatch, PackError
from .executor import Executor, IndeterminateCondition, MachineState, StepBudget
from .errors import UnsupportedInstruction
from .funcs import FunctionBlock, _block_index
from .isa import LR

log = logging.getLogger(__name__)

RETURN_SENTINEL = 0x2FE00000       # even; lr seeded with |1
WILDCARD_REGION = 0x2FF00000       # synthetic buffers for pattern inputs
WILDCARD_SPACING = 0x1000

MATCH_BUDGET = StepBudget(max_instructions=10_000)


@dataclass(frozen=True)
class CoiSite:
    kind: str                  # "svc" | "function"
    name: str
    site_address: int
    svc_number: int | None = None
    callee_start: int | None = None


@dataclass
class FunctionPattern:
    name: str
    test_sets: list

    @classmethod
    def from_dict(cls, raw: dict) -> "FunctionPattern":
        if "name" not in raw or "test_sets" not in raw:
            raise PackError("pattern file needs 'name' and 'test_sets'")
        sets = raw["test_sets"]
        if not sets:
            raise PackError(f"pattern {raw['name']}: needs at least one test set")
        for ts in sets:
            if not ts.get("regs_out") and not ts.get("mem_out"):
                raise PackError(
                    f"pattern {raw['name']}: every test set needs expected outputs")
        return cls(name=raw["name"], test_sets=sets)

    @classmethod
    def load(cls, path) -> "FunctionPattern":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# supervisor calls

def find_svcs(instrs: dict, svc_numbers: dict[int, str] | set) -> list[CoiSite]:
    """Linear scan for svc instructions carrying a number of interest.

    svc_numbers: mapping number -> name, or a bare set of numbers.
    """
    if not isinstance(svc_numbers, dict):
        svc_numbers = {n: f"svc_0x{n:02x}" for n in svc_numbers}
    sites = []
    for ins in instrs.values():
        if ins.mnemonic != "svc":
            continue
        number = ins.operands[0].value
        if number in svc_numbers:
            sites.append(CoiSite(kind="svc", name=svc_numbers[number],
                                 site_address=ins.address, svc_number=number))
    return sites


# ---------------------------------------------------------------------------
# pattern matching

def _parse_value(text, bindings):
    """Pattern value: integer literal or $wildcard."""
    if isinstance(text, int):
        return text
    text = text.strip()
    if text.startswith("$"):
        return bindings[text]
    return int(text, 0)


def _collect_wildcards(test_set) -> list[str]:
    names = []

    def see(v):
        if isinstance(v, str) and v.strip().startswith("$"):
            w = v.strip()
            if w not in names:
                names.append(w)

    for v in test_set.get("regs_in", {}).values():
        see(v)
    for entry in test_set.get("mem_in", []):
        see(entry["addr"])
    return names


class FunctionMatcher:
    """Executes candidate blocks against a pattern's test sets."""

    def __init__(self, img, instrs: dict, blocks: list[FunctionBlock],
                 executor: Executor | None = None,
                 budget: StepBudget = MATCH_BUDGET):
        self.img = img
        self.instrs = instrs
        self.blocks = blocks
        self.block_of = _block_index(blocks)
        self.executor = executor or Executor(img)
        self.budget = budget

    # -- execution ------------------------------------------------------

    def _run_candidate(self, start: int, state: MachineState) -> bool:
        """Execute from start until return to the sentinel; False on any
        trap, indeterminate check or budget exhaustion."""
        ex = self.executor
        clock = self.budget.start()
        state.pc = start
        state.set_reg(LR, RETURN_SENTINEL | 1)
        while True:
            if state.pc == RETURN_SENTINEL:
                return True
            if state.pc is None:
                return False
            ins = self.instrs.get(state.pc)
            if ins is None:
                return False
            try:
                clock.tick()
            except BudgetExceeded:
                return False
            if ins.mnemonic in ("bl", "blx"):
                target = ins.target
                if target is None and ins.operands:
                    from .isa import Reg
                    if isinstance(ins.operands[0], Reg):
                        target = state.regs[ins.operands[0].n]
                        if target is not None:
                            target &= ~1
                callee = self.block_of(target) if target is not None else None
                if callee is not None and callee.deny_listed:
                    state.set_reg(0, 0)
                    state.pc = ins.address + ins.width
                    continue
                if target is None:
                    state.set_reg(0, 0)
                    state.pc = ins.address + ins.width
                    continue
            try:
                ex.step(state, ins)
            except (IndeterminateCondition, UnsupportedInstruction):
                return False

    def _check_outputs(self, state: MachineState, test_set,
                       bindings: dict) -> bool:
        ex = self.executor
        for reg_name, expected in test_set.get("regs_out", {}).items():
            n = int(reg_name.lstrip("r"))
            actual = state.regs[n]
            if actual is None:
                return False
            if isinstance(expected, str) and expected.strip().startswith("$"):
                w = expected.strip()
                if w in bindings:
                    if actual != bindings[w]:
                        return False
                else:
                    bindings[w] = actual
            elif actual != _parse_value(expected, bindings):
                return False

        unbound: dict[str, list] = {}
        for entry in test_set.get("mem_out", []):
            addr_spec = entry["addr"]
            expected = bytes.fromhex(entry["bytes"])
            offset = entry.get("offset", 0)
            if isinstance(addr_spec, str) and addr_spec.strip().startswith("$") \
                    and addr_spec.strip() not in bindings:
                unbound.setdefault(addr_spec.strip(), []).append(
                    (offset, expected))
                continue
            base = _parse_value(addr_spec, bindings)
            got = [ex.read_byte(state, base + offset + i)
                   for i in range(len(expected))]
            if got != list(expected):
                return False

        for wildcard, checks in unbound.items():
            candidates = set()
            for written in state.memory:
                for offset, expected in checks:
                    candidates.add(written - offset)
            matches = []
            for base in sorted(candidates):
                ok = True
                for offset, expected in checks:
                    got = [ex.read_byte(state, base + offset + i)
                           for i in range(len(expected))]
                    if got != list(expected):
                        ok = False
                        break
                if ok:
                    matches.append(base)
            if len(matches) != 1:
                # zero matches fails; several bindings for one wildcard
                # also fail the set by decision
                return False
            bindings[wildcard] = matches[0]
        return True

    def _try_test_set(self, start: int, test_set) -> bool:
        bindings: dict[str, int] = {}
        for i, w in enumerate(_collect_wildcards(test_set)):
            bindings[w] = WILDCARD_REGION + i * WILDCARD_SPACING
        state = self.executor.fresh_state()
        for reg_name, value in test_set.get("regs_in", {}).items():
            state.set_reg(int(reg_name.lstrip("r")),
                          _parse_value(value, bindings))
        for entry in test_set.get("mem_in", []):
            base = _parse_value(entry["addr"], bindings)
            data = bytes.fromhex(entry["bytes"])
            for i, b in enumerate(data):
                state.memory[(base + i) & 0xFFFFFFFF] = b
        if not self._run_candidate(start, state):
            return False
        return self._check_outputs(state, test_set, bindings)

    # -- candidate filtering and driving ---------------------------------

    def _cheap_reject(self, block: FunctionBlock, pattern) -> bool:
        needs_store = any(ts.get("mem_out") for ts in pattern.test_sets)
        if not needs_store:
            return False
        for addr in range(block.start, block.end + 1, 2):
            ins = self.instrs.get(addr)
            if ins is None:
                continue
            if ins.is_store or ins.mnemonic in ("push", "stmia", "stmia.w",
                                                "stmdb"):
                return False
        return True

    def match(self, pattern: FunctionPattern) -> int:
        """Return the start of the unique matching block.

        Candidates run in ascending call-depth order; among multiple
        matches the lowest call depth wins, and a tie at the minimal
        depth raises AmbiguousMatch rather than guessing.
        """
        candidates = sorted((b for b in self.blocks if not b.deny_listed),
                            key=lambda b: (b.call_depth, b.start))
        matched: list[FunctionBlock] = []
        for block in candidates:
            if matched and block.call_depth > matched[0].call_depth:
                break
            if self._cheap_reject(block, pattern):
                continue
            if all(self._try_test_set(block.start, ts)
                   for ts in pattern.test_sets):
                matched.append(block)
        if not matched:
            raise NoMatch(f"no block matches pattern {pattern.name!r}")
        lowest = min(b.call_depth for b in matched)
        at_lowest = [b for b in matched if b.call_depth == lowest]
        if len(at_lowest) > 1:
            raise AmbiguousMatch([b.start for b in at_lowest])
        return at_lowest[0].start


def match_function(img, instrs, blocks, pattern: FunctionPattern,
                   executor: Executor | None = None) -> int:
    return FunctionMatcher(img, instrs, blocks, executor).match(pattern)


# ---------------------------------------------------------------------------
# call sites

def find_call_sites(instrs: dict, callee_start: int,
                    target_sets: dict | None = None,
                    name: str = "", svc_number: int | None = None)\
        -> list[CoiSite]:
    """Every direct or recorded-indirect call landing at callee_start."""
    sites = []
    for ins in instrs.values():
        if ins.base_mnemonic in ("b", "bl") and ins.target == callee_start:
            sites.append(CoiSite(kind="function", name=name,
                                 site_address=ins.address,
                                 callee_start=callee_start))
    if target_sets:
        for ts in target_sets.values():
            if callee_start in ts.targets:
                sites.append(CoiSite(kind="function", name=name,
                                     site_address=ts.origin,
                                     callee_start=callee_start))
    sites.sort(key=lambda s: s.site_address)
    return sites
