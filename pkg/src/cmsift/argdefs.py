"""Argument Definition Objects: templates describing COI argument structure.

Grammar (JSON):
  file        := {"coi": <name>, "args": [<arg>...]}
  arg         := {"name": <str>, "type": <node>}
  node        := "u8"|"u16"|"u32"|"i8"|"i16"|"i32"
               | "bytes:<n>"
               | "ptr:<node>"            (one level of indirection)
               | "out:<node>"            (callee-written output, fed back)
               | {"ptr": <node>} | {"out": <node>} | {"bytes": <n>}
               | {"struct": {<field>: {"offset_bits": <n>, "node": <node>}}}

Arguments map to r0..r3 in order; later arguments are read from the stack
window captured at the COI.  Extraction follows pointers through the
capture's memory overlay and then the image; unknown cells become explicit
"unknown" leaves, never fabricated values.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from .errors import ArgdefError

log = logging.getLogger(__name__)

FEEDBACK_VALUE_BASE = 0x0100


# ---------------------------------------------------------------------------
# node model

@dataclass(frozen=True)
class Scalar:
    width_bits: int
    signed: bool

    def spec(self) -> str:
        return f"{'i' if self.signed else 'u'}{self.width_bits}"


@dataclass(frozen=True)
class ByteArray:
    length: int

    def spec(self) -> str:
        return f"bytes:{self.length}"


@dataclass(frozen=True)
class Pointer:
    inner: object

    def spec(self):
        inner = self.inner.spec()
        return f"ptr:{inner}" if isinstance(inner, str) else {"ptr": inner}


@dataclass(frozen=True)
class Record:
    fields: tuple       # ((name, offset_bits, node), ...)

    def spec(self):
        return {"struct": {name: {"offset_bits": off, "node": node.spec()}
                           for name, off, node in self.fields}}


@dataclass(frozen=True)
class Output:
    inner: object

    def spec(self):
        inner = self.inner.spec()
        return f"out:{inner}" if isinstance(inner, str) else {"out": inner}


@dataclass
class ArgumentDefinition:
    coi: str
    args: list          # [(name, node)]

    def to_dict(self) -> dict:
        return {"coi": self.coi,
                "args": [{"name": n, "type": node.spec()}
                         for n, node in self.args]}


_SCALARS = {"u8": (8, False), "u16": (16, False), "u32": (32, False),
            "i8": (8, True), "i16": (16, True), "i32": (32, True)}


def parse_node(spec, where: str):
    if isinstance(spec, str):
        text = spec.strip()
        if text in _SCALARS:
            w, s = _SCALARS[text]
            return Scalar(w, s)
        if text.startswith("bytes:"):
            try:
                n = int(text.split(":", 1)[1])
            except ValueError:
                raise ArgdefError(f"{where}: bad byte-array length in {text!r}")
            if n <= 0:
                raise ArgdefError(f"{where}: byte-array length must be positive")
            return ByteArray(n)
        if text.startswith("ptr:"):
            return Pointer(parse_node(text[4:], where))
        if text.startswith("out:"):
            return _make_output(parse_node(text[4:], where), where)
        raise ArgdefError(f"{where}: unknown node keyword {text!r}")
    if isinstance(spec, dict):
        if len(spec) != 1 and "struct" not in spec:
            raise ArgdefError(f"{where}: node object must have one key")
        if "ptr" in spec:
            return Pointer(parse_node(spec["ptr"], where))
        if "out" in spec:
            return _make_output(parse_node(spec["out"], where), where)
        if "bytes" in spec:
            return ByteArray(int(spec["bytes"]))
        if "struct" in spec:
            fields = []
            for name, f in spec["struct"].items():
                if not isinstance(f, dict) or "offset_bits" not in f \
                        or "node" not in f:
                    raise ArgdefError(
                        f"{where}.{name}: struct fields need offset_bits and node")
                fields.append((name, int(f["offset_bits"]),
                               parse_node(f["node"], f"{where}.{name}")))
            fields.sort(key=lambda t: t[1])
            return Record(tuple(fields))
        raise ArgdefError(f"{where}: unknown node object {list(spec)!r}")
    raise ArgdefError(f"{where}: node must be string or object, "
                      f"got {type(spec).__name__}")


def _make_output(inner, where):
    if not isinstance(inner, Pointer):
        raise ArgdefError(
            f"{where}: out: must wrap a ptr node (outputs are memory-written)")
    return Output(inner)


def parse_argdef_dict(raw: dict, where: str = "argdef") -> ArgumentDefinition:
    if not isinstance(raw, dict) or "coi" not in raw or "args" not in raw:
        raise ArgdefError(f"{where}: need 'coi' and 'args' keys")
    args = []
    for i, a in enumerate(raw["args"]):
        if not isinstance(a, dict) or "name" not in a or "type" not in a:
            raise ArgdefError(f"{where}.args[{i}]: need 'name' and 'type'")
        args.append((a["name"], parse_node(a["type"],
                                           f"{where}.args[{i}]({a['name']})")))
    return ArgumentDefinition(coi=raw["coi"], args=args)


def parse_argdef(path) -> ArgumentDefinition:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ArgdefError(f"{path}: line {e.lineno}, col {e.colno}: {e.msg}")
    return parse_argdef_dict(raw, where=str(path))


def serialize_argdef(definition: ArgumentDefinition) -> str:
    return json.dumps(definition.to_dict(), indent=2)


# ---------------------------------------------------------------------------
# extraction

class CaptureReader:
    """Memory view at capture time: overlay, then chain overlay, then image."""

    def __init__(self, capture, img=None, shared_overlay=None):
        self.capture = capture
        self.img = img
        self.shared = shared_overlay or {}

    def byte(self, address: int):
        if address in self.capture.memory:
            return self.capture.memory[address]
        if address in self.shared:
            return self.shared[address]
        if self.img is not None and self.img.contains(address, 1):
            return self.img.data[self.img.offset_of(address)]
        return None

    def read(self, address: int, size: int):
        value = 0
        for i in range(size):
            b = self.byte(address + i)
            if b is None:
                return None
            value |= b << (8 * i)
        return value

    def read_bytes(self, address: int, size: int) -> list:
        return [self.byte(address + i) for i in range(size)]


def _scalar_value(raw: int | None, node: Scalar):
    if raw is None:
        return None
    mask = (1 << node.width_bits) - 1
    v = raw & mask
    if node.signed and v & (1 << (node.width_bits - 1)):
        v -= 1 << node.width_bits
    return v


def _render_bytes(data: list) -> dict:
    known = all(b is not None for b in data)
    out = {"type": "bytes", "length": len(data)}
    if known:
        blob = bytes(data)
        out["hex"] = blob.hex()
        if all(0x20 <= b < 0x7F for b in blob):
            out["ascii"] = blob.decode("ascii")
        out["status"] = "ok"
    else:
        out["hex"] = "".join("??" if b is None else f"{b:02x}" for b in data)
        out["status"] = "unknown"
    return out


def _resolve(node, source, reader: CaptureReader, feedback: list,
             source_desc: str):
    """Resolve a template node against a value source.

    source: ("reg", value) or ("mem", address)."""
    kind, payload = source

    if isinstance(node, Output):
        inner = node.inner          # always a Pointer
        pointer_raw = payload if kind == "reg" else reader.read(payload, 4)
        rendered = {"type": "out", "status": "ok"}
        if pointer_raw is None:
            rendered["status"] = "unknown"
            rendered["points_to"] = None
            return rendered
        rendered["points_to"] = f"0x{pointer_raw:x}"
        width = _output_width(inner.inner)
        feedback.append({"address": pointer_raw, "width": width,
                         "rendered": rendered})
        current = _resolve(inner.inner, ("mem", pointer_raw), reader,
                           feedback, f"0x{pointer_raw:x}")
        rendered["value"] = current
        return rendered

    if isinstance(node, Scalar):
        if kind == "reg":
            raw = payload
            raw_bytes = None if raw is None else \
                raw.to_bytes(4, "little")[: node.width_bits // 8]
        else:
            raw = reader.read(payload, node.width_bits // 8)
            raw_bytes = None if raw is None else \
                raw.to_bytes(node.width_bits // 8, "little")
        value = _scalar_value(raw, node)
        return {"type": node.spec(), "value": value,
                "raw": raw_bytes.hex() if raw_bytes is not None else None,
                "source": source_desc,
                "status": "ok" if value is not None else "unknown"}

    if isinstance(node, ByteArray):
        if kind == "reg":
            if payload is None:
                return {"type": "bytes", "length": node.length,
                        "status": "unknown", "hex": "??" * node.length,
                        "source": source_desc}
            data = list(payload.to_bytes(4, "little")[: node.length])
        else:
            data = reader.read_bytes(payload, node.length)
        out = _render_bytes(data)
        out["source"] = source_desc
        return out

    if isinstance(node, Pointer):
        address = payload if kind == "reg" else reader.read(payload, 4)
        if address is None:
            return {"type": "ptr", "target": None, "value": None,
                    "status": "unresolved", "source": source_desc}
        return {"type": "ptr", "target": f"0x{address:x}",
                "value": _resolve(node.inner, ("mem", address), reader,
                                  feedback, f"0x{address:x}"),
                "status": "ok", "source": source_desc}

    if isinstance(node, Record):
        if kind == "reg":
            return {"type": "struct", "status": "unresolved",
                    "error": "struct argument must live in memory",
                    "source": source_desc}
        base = payload
        fields = {}
        for name, offset_bits, sub in node.fields:
            if isinstance(sub, Scalar):
                span = (offset_bits % 8 + sub.width_bits + 7) // 8
                raw = reader.read(base + offset_bits // 8, span)
                if raw is None:
                    value = None
                    raw_hex = None
                else:
                    shifted = raw >> (offset_bits % 8)
                    value = _scalar_value(shifted, sub)
                    raw_hex = raw.to_bytes(span, "little").hex()
                fields[name] = {"type": sub.spec(), "value": value,
                                "raw": raw_hex,
                                "status": "ok" if value is not None
                                else "unknown"}
            else:
                if offset_bits % 8:
                    raise ArgdefError(
                        f"struct field {name}: non-scalar fields need "
                        "byte-aligned offsets")
                fields[name] = _resolve(sub, ("mem", base + offset_bits // 8),
                                        reader, feedback,
                                        f"0x{base + offset_bits // 8:x}")
        return {"type": "struct", "fields": fields, "status": "ok",
                "source": source_desc}

    raise ArgdefError(f"unhandled node {node!r}")


def _output_width(node) -> int:
    if isinstance(node, Scalar):
        return node.width_bits // 8
    if isinstance(node, ByteArray):
        return node.length
    return 4


@dataclass
class ExtractedReport:
    coi: str
    site_address: int
    path_id: int
    decisions: str
    args: list
    feedback: list = field(default_factory=list)   # pending output writes

    def to_dict(self) -> dict:
        return {
            "coi": self.coi,
            "site": f"0x{self.site_address:x}",
            "path": self.path_id,
            "decisions": self.decisions,
            "args": self.args,
        }


def extract_arguments(capture, definition: ArgumentDefinition, img=None,
                      shared_overlay: dict | None = None) -> ExtractedReport:
    """Interpret captured registers/stack/memory through the definition."""
    reader = CaptureReader(capture, img=img, shared_overlay=shared_overlay)
    rendered = []
    feedback: list = []
    for i, (name, node) in enumerate(definition.args):
        if i < 4:
            source = ("reg", capture.regs.get(i))
            desc = f"r{i}"
        else:
            stack_off = 4 * (i - 4)
            if capture.sp is not None and stack_off + 4 <= len(capture.stack):
                raw = capture.stack[stack_off:stack_off + 4]
                value = None if any(b is None for b in raw) else \
                    int.from_bytes(bytes(raw), "little")
            else:
                value = None
            source = ("reg", value)
            desc = f"sp+{stack_off}"
        # the resolved dict itself goes into the report: feedback entries
        # keep a reference to it so fed-back values appear in the output
        entry = _resolve(node, source, reader, feedback, desc)
        entry["name"] = name
        rendered.append(entry)
    return ExtractedReport(coi=definition.coi,
                           site_address=capture.site.site_address,
                           path_id=capture.path_id,
                           decisions=capture.decisions,
                           args=rendered, feedback=feedback)


class FeedbackAllocator:
    """Deterministic synthetic values for callee-written outputs."""

    def __init__(self, base: int = FEEDBACK_VALUE_BASE):
        self.next_value = base

    def allocate(self) -> int:
        v = self.next_value
        self.next_value += 1
        return v


def apply_feedback(report: ExtractedReport, shared_overlay: dict,
                   allocator: FeedbackAllocator) -> dict:
    """Persist output-designated writes into the per-binary shared overlay.

    Each output slot receives a deterministic synthetic value, recorded in
    the report so downstream traces that consume the location can be
    linked back.  Overlapping writes: last writer wins, logged.
    """
    for fb in report.feedback:
        address = fb["address"]
        width = fb["width"]
        value = allocator.allocate()
        for i in range(width):
            key = (address + i) & 0xFFFFFFFF
            if key in shared_overlay:
                log.info("feedback overwrite at 0x%x", key)
            shared_overlay[key] = (value >> (8 * i)) & 0xFF
        fb["rendered"]["fed_back"] = value
        fb["rendered"]["fed_back_at"] = f"0x{address:x}"
    return shared_overlay
