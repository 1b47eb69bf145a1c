"""Parsing of Kieker-style execution-trace logs and capability mapping files.

A log holds two record kinds, one per line, ``;``-separated::

    $2;<timestamp>;Test_<Capability>_<UseCase>
    $1;<logging_ts>;<signature>;<session>;<trace_id>;<tin>;<tout>;<host>;<eoi>;<ess>

Every ``$1`` record belongs to the most recent preceding ``$2`` header.
"""

from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Union

HEADER_KIND = "$2"
OPERATION_KIND = "$1"

_HEADER_FIELDS = 3
_OPERATION_FIELDS = 10
_INT_RE = re.compile(r"-?[0-9]+")


class TraceParseError(ValueError):
    """Base class for every structured error raised while reading a log."""

    def __init__(self, message: str, line_no: int | None = None, source: str | None = None):
        self.line_no = line_no
        self.source = source
        self.message = message
        super().__init__(self._render())

    def _render(self) -> str:
        where = ""
        if self.source is not None:
            where = f"{self.source}:"
        if self.line_no is not None:
            where += f"{self.line_no}: "
        elif where:
            where += " "
        return f"{where}{self.message}"

    def located(self, line_no: int | None = None, source: str | None = None) -> "TraceParseError":
        if line_no is not None:
            self.line_no = line_no
        if source is not None:
            self.source = source
        self.args = (self._render(),)
        return self


class MalformedRecord(TraceParseError):
    pass


class UnknownRecordKind(TraceParseError):
    pass


class RecordBeforeHeader(TraceParseError):
    pass


class BadTestCaseId(TraceParseError):
    pass


class CapabilityMapError(ValueError):
    pass


@dataclass(frozen=True)
class TraceHeader:
    timestamp: int
    test_case_id: str
    record_kind: str = HEADER_KIND

    def to_line(self) -> str:
        return f"{HEADER_KIND};{self.timestamp};{self.test_case_id}"


@dataclass(frozen=True)
class OperationRecord:
    logging_timestamp: int
    operation_signature: str
    session_id: str
    trace_id: int
    tin: int
    tout: int
    hostname: str
    eoi: int
    ess: int
    record_kind: str = OPERATION_KIND

    def to_line(self) -> str:
        return ";".join(
            [
                OPERATION_KIND,
                str(self.logging_timestamp),
                self.operation_signature,
                self.session_id,
                str(self.trace_id),
                str(self.tin),
                str(self.tout),
                self.hostname,
                str(self.eoi),
                str(self.ess),
            ]
        )


@dataclass(frozen=True)
class TraceBlock:
    header: TraceHeader
    records: tuple[OperationRecord, ...] = ()

    def by_trace_id(self) -> list[tuple[int, tuple[OperationRecord, ...]]]:
        """Split the block per trace id, keeping first-appearance order."""
        groups: dict[int, list[OperationRecord]] = {}
        for rec in self.records:
            groups.setdefault(rec.trace_id, []).append(rec)
        return [(tid, tuple(recs)) for tid, recs in groups.items()]

    @property
    def mixed_trace_ids(self) -> bool:
        return len({r.trace_id for r in self.records}) > 1


@dataclass(frozen=True)
class TraceLog:
    blocks: tuple[TraceBlock, ...] = ()

    @property
    def n_records(self) -> int:
        return sum(len(b.records) for b in self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True)
class CapabilityMap:
    capabilities: frozenset[str]
    method_caps: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self):
        for method, caps in self.method_caps.items():
            if not caps:
                raise CapabilityMapError(f"method {method!r} has an empty capability set")
            unknown = caps - self.capabilities
            if unknown:
                raise CapabilityMapError(
                    f"method {method!r} references unknown capabilities {sorted(unknown)}"
                )

    @property
    def n_capabilities(self) -> int:
        return len(self.capabilities)

    def caps_of(self, method: str) -> frozenset[str]:
        return self.method_caps.get(method, frozenset())

    def restrict(self, methods: Iterable[str]) -> "CapabilityMap":
        keep = set(methods)
        return CapabilityMap(
            self.capabilities,
            {m: c for m, c in self.method_caps.items() if m in keep},
        )

    def override(self, other: "CapabilityMap") -> "CapabilityMap":
        """Entries of ``other`` replace this map's entries method by method."""
        merged = dict(self.method_caps)
        merged.update(other.method_caps)
        return CapabilityMap(self.capabilities | other.capabilities, merged)


Record = Union[TraceHeader, OperationRecord]


def _to_int(value: str, name: str) -> int:
    # int() also accepts "1_000", whitespace and non-ASCII digits; the log format does not
    if not _INT_RE.fullmatch(value):
        raise MalformedRecord(f"field {name!r} is not an integer: {value!r}")
    return int(value)


def parse_line(line: str) -> Record:
    """Parse one log line into a header or an operation record."""
    line = line.rstrip("\r\n")
    if not line:
        raise MalformedRecord("empty line")
    fields = line.split(";")
    kind = fields[0]
    if kind == HEADER_KIND:
        if len(fields) != _HEADER_FIELDS:
            raise MalformedRecord(
                f"header record needs {_HEADER_FIELDS} fields, got {len(fields)}"
            )
        return TraceHeader(timestamp=_to_int(fields[1], "timestamp"), test_case_id=fields[2])
    if kind == OPERATION_KIND:
        if len(fields) != _OPERATION_FIELDS:
            raise MalformedRecord(
                f"operation record needs {_OPERATION_FIELDS} fields, got {len(fields)}"
            )
        _, lts, sig, session, tid, tin, tout, host, eoi, ess = fields
        if not sig:
            raise MalformedRecord("empty operation signature")
        rec = OperationRecord(
            logging_timestamp=_to_int(lts, "logging_timestamp"),
            operation_signature=sig,
            session_id=session,
            trace_id=_to_int(tid, "trace_id"),
            tin=_to_int(tin, "tin"),
            tout=_to_int(tout, "tout"),
            hostname=host,
            eoi=_to_int(eoi, "eoi"),
            ess=_to_int(ess, "ess"),
        )
        if rec.eoi < 0 or rec.ess < 0:
            raise MalformedRecord("eoi and ess must be non-negative")
        if rec.tin > rec.tout:
            raise MalformedRecord(f"tin {rec.tin} is after tout {rec.tout}")
        return rec
    raise UnknownRecordKind(f"unknown record kind {kind!r}")


def parse_log(lines: Iterable[str] | str, source: str | None = None) -> TraceLog:
    """Group a stream of lines into header-delimited blocks.

    Blank lines are skipped. Within one block, eoi must strictly increase in
    file order for each trace id.
    """
    if isinstance(lines, str):
        lines = lines.splitlines()
    blocks: list[TraceBlock] = []
    header: TraceHeader | None = None
    records: list[OperationRecord] = []
    last_eoi: dict[int, int] = {}

    def close():
        if header is not None:
            blocks.append(TraceBlock(header, tuple(records)))

    for line_no, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            rec = parse_line(raw)
        except TraceParseError as exc:
            raise exc.located(line_no, source) from None
        if isinstance(rec, TraceHeader):
            close()
            header, records, last_eoi = rec, [], {}
            continue
        if header is None:
            raise RecordBeforeHeader("operation record before any trace header", line_no, source)
        prev = last_eoi.get(rec.trace_id)
        if prev is not None and rec.eoi <= prev:
            raise MalformedRecord(
                f"eoi {rec.eoi} does not follow {prev} in trace {rec.trace_id}", line_no, source
            )
        last_eoi[rec.trace_id] = rec.eoi
        records.append(rec)
    close()
    return TraceLog(tuple(blocks))


def read_log(path: str | Path) -> TraceLog:
    path = Path(path)
    # latin-1 maps every byte, so no input can fail decoding
    with open(path, encoding="latin-1", newline="") as fh:
        return parse_log(fh, source=str(path))


def extract_capability(test_case_id: str) -> tuple[str, str]:
    parts = test_case_id.split("_")
    if len(parts) != 3 or parts[0] != "Test" or not all(parts):
        raise BadTestCaseId(f"test case id {test_case_id!r} is not Test_<Capability>_<UseCase>")
    return parts[1], parts[2]


def parse_capability_map(text: str) -> CapabilityMap:
    """Read a capability map from CSV-like lines or a JSON document.

    CSV form: one ``method_signature,capability`` pair per line. Signatures
    may contain commas, so the line is split on its last comma. Repeated
    methods accumulate capabilities. Lines starting with ``#`` are comments.

    JSON form: ``{"capabilities": [...], "methods": {sig: [cap, ...]}}`` or
    the bare ``{sig: [cap, ...]}`` mapping.
    """
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CapabilityMapError(f"invalid JSON capability map: {exc}") from None
        if not isinstance(doc, dict):
            raise CapabilityMapError("JSON capability map must be an object")
        if isinstance(doc.get("methods"), dict):
            methods, declared = doc["methods"], doc.get("capabilities", [])
        else:
            methods, declared = doc, []
        method_caps: dict[str, frozenset[str]] = {}
        for sig, caps in methods.items():
            if isinstance(caps, str):
                caps = [caps]
            if not isinstance(caps, list) or not all(isinstance(c, str) and c for c in caps):
                raise CapabilityMapError(f"bad capability list for {sig!r}")
            method_caps[sig] = frozenset(caps)
        # an explicit capability list is authoritative; otherwise infer it
        all_caps = frozenset(declared) if declared else frozenset().union(*method_caps.values())
        return CapabilityMap(all_caps, method_caps)

    acc: dict[str, set[str]] = {}
    for line_no, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "," not in line:
            raise CapabilityMapError(f"line {line_no}: expected 'method_signature,capability'")
        sig, cap = line.rsplit(",", 1)
        sig, cap = sig.strip(), cap.strip()
        if not sig or not cap:
            raise CapabilityMapError(f"line {line_no}: empty method or capability")
        acc.setdefault(sig, set()).add(cap)
    method_caps = {m: frozenset(c) for m, c in acc.items()}
    return CapabilityMap(frozenset().union(*method_caps.values()), method_caps)


def read_capability_map(path: str | Path) -> CapabilityMap:
    return parse_capability_map(Path(path).read_text(encoding="utf-8"))


def write_capability_map(cmap: CapabilityMap, path: str | Path) -> None:
    """Write the CSV form; one line per (method, capability) membership."""
    lines = [
        f"{method},{cap}\n"
        for method in sorted(cmap.method_caps)
        for cap in sorted(cmap.method_caps[method])
    ]
    Path(path).write_text("".join(lines), encoding="utf-8")
