"""Firmware image container, vector table parsing and code-base recovery.

A stripped image carries no load address.  The vector table at file offset 0
holds the true addresses of the core exception handlers, and at least one of
those handlers is normally a self-targeting branch (the default handler).
Pairing the two recovers the offset at which the file was linked.
"""

from __future__ import annotations

import logging
import struct
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

from .errors import (
    AnnotationConflict,
    ImageTooSmall,
    NegativeBase,
    NoSelfBranch,
    NoUsableHandler,
)

log = logging.getLogger(__name__)

# Word indices of the core exception handlers checked during code-base
# recovery: Reset, NMI, HardFault, MemManage, BusFault, UsageFault,
# PendSV, SysTick.
CORE_HANDLER_SLOTS = (1, 2, 3, 4, 5, 6, 14, 15)

RESET_SLOT = 1

MIN_IMAGE_SIZE = 64

# Code bases are assumed to sit on a 4 KiB boundary; this is what makes
# matching on the low 12 bits of handler/branch addresses sound.
BASE_ALIGNMENT = 0x1000


class DataSource(IntEnum):
    """Provenance of a data annotation; higher value wins conflicts."""

    PC_WRITE_TABLE = 1
    SWITCH_HELPER = 1
    TABLE_BRANCH = 1
    PC_RELATIVE_LOAD = 2
    RESET_HANDLER_SEGMENT = 3


@dataclass(frozen=True)
class VectorEntry:
    index: int
    raw_value: int
    handler_address: int
    is_handler: bool


@dataclass
class DataItem:
    size: int
    source: DataSource


@dataclass
class FirmwareImage:
    data: bytes
    path: str = ""
    code_base: int = 0
    vector_table: list[VectorEntry] = field(default_factory=list)
    # data annotations keyed by true address -> DataItem
    data_items: dict[int, DataItem] = field(default_factory=dict)
    _data_bytes: dict[int, DataSource] = field(default_factory=dict)
    rebased: bool = False

    # -- addressing -------------------------------------------------

    @property
    def end(self) -> int:
        return self.code_base + len(self.data)

    def contains(self, address: int, n: int = 1) -> bool:
        return self.code_base <= address and address + n <= self.end

    def offset_of(self, address: int) -> int:
        return address - self.code_base

    def read_bytes(self, address: int, n: int) -> bytes:
        if not self.contains(address, n):
            raise ValueError(f"read outside image: 0x{address:x}+{n}")
        o = self.offset_of(address)
        return self.data[o:o + n]

    def read_halfword(self, address: int) -> int:
        return struct.unpack_from("<H", self.data, self.offset_of(address))[0]

    def read_word(self, address: int) -> int:
        return struct.unpack_from("<I", self.data, self.offset_of(address))[0]

    # -- annotations ------------------------------------------------

    def is_data(self, address: int, n: int = 1) -> bool:
        return any(address + i in self._data_bytes for i in range(n))

    def data_source(self, address: int) -> DataSource | None:
        return self._data_bytes.get(address)

    def mark_data(self, address: int, n: int, source: DataSource,
                  strict: bool = False) -> bool:
        """Annotate n bytes at address as data.

        Returns True if anything changed.  A lower-precedence request over
        an existing higher-precedence byte is dropped (or raises when
        strict); equal/lower precedence existing bytes are re-stamped.
        """
        if n <= 0:
            return False
        if not self.contains(address, n):
            log.warning("data annotation outside image skipped: 0x%x+%d",
                        address, n)
            return False
        for i in range(n):
            existing = self._data_bytes.get(address + i)
            if existing is not None and existing > source:
                if strict:
                    raise AnnotationConflict(address + i, existing, source)
                log.debug("kept %s over %s at 0x%x", existing.name,
                          source.name, address + i)
                return False
        changed = False
        for i in range(n):
            if self._data_bytes.get(address + i) is None:
                changed = True
            self._data_bytes[address + i] = source
        if changed or address not in self.data_items:
            self.data_items[address] = DataItem(
                max(n, self.data_items[address].size
                    if address in self.data_items else 0), source)
        return changed

    def clear_data(self, address: int, n: int) -> None:
        for i in range(n):
            self._data_bytes.pop(address + i, None)
        self.data_items.pop(address, None)

    def data_extent_after(self, address: int) -> int:
        """First non-data address at or after address."""
        a = address
        while a in self._data_bytes and a < self.end:
            a += 1
        return a

    def annotation_map(self) -> dict[int, str]:
        """address -> "data(n)" for every data item (debug/sidecar dump)."""
        return {a: f"data({it.size})" for a, it in sorted(self.data_items.items())}

    # -- rebasing ---------------------------------------------------

    def rebase(self, new_base: int) -> None:
        """Shift the image to new_base, re-keying annotations and the VT."""
        delta = new_base - self.code_base
        if delta:
            self.data_items = {a + delta: it for a, it in self.data_items.items()}
            self._data_bytes = {a + delta: s for a, s in self._data_bytes.items()}
        self.code_base = new_base
        self.rebased = True


def load_image(path) -> FirmwareImage:
    """Load a raw binary verbatim; code base starts at 0."""
    raw = Path(path).read_bytes()
    if len(raw) < MIN_IMAGE_SIZE:
        raise ImageTooSmall(
            f"{path}: {len(raw)} bytes, need at least {MIN_IMAGE_SIZE} "
            "for a vector table")
    return FirmwareImage(data=raw, path=str(path))


def read_vector_table(img: FirmwareImage) -> list[VectorEntry]:
    """Parse the core-handler slots of the Application Vector Table.

    Entries must carry the Thumb bit (LSB set); anything else is flagged
    non-handler and excluded from code-base matching, never fatal.
    """
    entries = []
    for slot in CORE_HANDLER_SLOTS:
        raw = struct.unpack_from("<I", img.data, slot * 4)[0]
        is_handler = raw != 0 and (raw & 1) == 1
        entries.append(VectorEntry(
            index=slot,
            raw_value=raw,
            handler_address=(raw & ~1) if is_handler else 0,
            is_handler=is_handler,
        ))
    img.vector_table = entries
    return entries


def handler_addresses(img: FirmwareImage) -> list[int]:
    return [e.handler_address for e in img.vector_table if e.is_handler]


def reset_handler_address(img: FirmwareImage) -> int | None:
    for e in img.vector_table:
        if e.index == RESET_SLOT and e.is_handler:
            return e.handler_address
    return None


def identify_code_base(img: FirmwareImage, instructions) -> int:
    """Recover the link address from self-targeting branches vs. VT entries.

    instructions: the decoded stream (any iterable of DecodedInstruction)
    produced at the current (provisional) base.  Candidate bases are voted
    on across all (handler, self-branch) pairs whose addresses agree in
    their low 12 bits; ties resolve to the smallest non-negative candidate.
    The image is rebased in place and the chosen base returned.
    """
    if not img.vector_table:
        read_vector_table(img)
    handlers = handler_addresses(img)
    if not handlers:
        raise NoUsableHandler(
            f"{img.path or 'image'}: vector table holds no Thumb handler "
            "entries; cannot recover a code base (pin one explicitly)")

    self_branches = []
    for ins in instructions:
        if ins.mnemonic in ("b", "b.w") and ins.condition is None:
            if ins.target == ins.address:
                self_branches.append(ins.address)
        elif ins.mnemonic == "bl" and ins.target == ins.address:
            self_branches.append(ins.address)
    if not self_branches:
        raise NoSelfBranch(
            f"{img.path or 'image'}: no self-targeting branch found")

    votes = Counter()
    for h in handlers:
        for b in self_branches:
            if (h & 0xFFF) != (b & 0xFFF):
                continue
            candidate = h - b
            if candidate % BASE_ALIGNMENT != 0:
                continue
            votes[candidate] += 1

    non_negative = Counter({c: n for c, n in votes.items() if c >= 0})
    if not non_negative:
        if votes:
            raise NegativeBase(
                "all code-base candidates negative: "
                + ", ".join(hex(c) for c in votes))
        raise NoSelfBranch(
            f"{img.path or 'image'}: no self-targeting branch matches a "
            "vector-table handler")

    best = max(non_negative.values())
    winners = sorted(c for c, n in non_negative.items() if n == best)
    base = winners[0]
    if len(winners) > 1:
        log.warning("ambiguous code base, equal support for %s; picking 0x%x",
                    ", ".join(hex(w) for w in winners), base)

    img.rebase(img.code_base + base)
    log.info("code base identified as 0x%x", img.code_base)
    return img.code_base
