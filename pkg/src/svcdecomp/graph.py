"""Call-graph reconstruction from trace blocks and the system-wide dependency matrix."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .trace_ingest import (
    BadTestCaseId,
    CapabilityMap,
    OperationRecord,
    TraceLog,
    extract_capability,
)

GRAPH_FORMAT = "svcdecomp-graph/1"


class GraphError(ValueError):
    pass


class BrokenStack(GraphError):
    pass


class NoTracesForCapability(GraphError):
    pass


class GraphFormatError(GraphError):
    pass


def reconstruct_calls(
    records: Sequence[OperationRecord],
) -> tuple[list[tuple[str, str]], set[str]]:
    """Recover caller->callee occurrences from eoi/ess ordering.

    The caller of a record at stack depth ``s`` is the latest earlier record
    at depth ``s - 1``. Records at the block's minimal depth are entry points.
    Returns the edge occurrences (one per call, repeats kept) and the
    entry-point signatures.
    """
    if not records:
        return [], set()
    ordered = sorted(records, key=lambda r: r.eoi)
    base = min(r.ess for r in ordered)
    open_frames: dict[int, OperationRecord] = {}
    edges: list[tuple[str, str]] = []
    entries: set[str] = set()
    for rec in ordered:
        depth = rec.ess
        if depth == base:
            entries.add(rec.operation_signature)
        else:
            caller = open_frames.get(depth - 1)
            if caller is None:
                raise BrokenStack(
                    f"{rec.operation_signature} at eoi {rec.eoi} has depth {depth} "
                    f"but no open caller at depth {depth - 1}"
                )
            edges.append((caller.operation_signature, rec.operation_signature))
        # a frame at this depth closes every deeper frame
        for d in [d for d in open_frames if d > depth]:
            del open_frames[d]
        open_frames[depth] = rec
    return edges, entries


@dataclass
class Odg:
    """Operation dependency graph for one capability.

    ``capability`` is None for blocks whose test-case id carries no
    capability; such graphs contribute structure but no labels.
    """

    capability: str | None
    nodes: set[str] = field(default_factory=set)
    edges: Counter = field(default_factory=Counter)
    entry_points: set[str] = field(default_factory=set)
    split_blocks: int = 0

    def add_block(self, records: Sequence[OperationRecord]) -> None:
        calls, entries = reconstruct_calls(records)
        self.nodes.update(r.operation_signature for r in records)
        self.edges.update(calls)
        self.entry_points.update(entries)

    @property
    def total_calls(self) -> int:
        return sum(self.edges.values())


def _block_capability(test_case_id: str) -> str | None:
    try:
        return extract_capability(test_case_id)[0]
    except BadTestCaseId:
        return None


def _add_block_to(odg: Odg, block) -> None:
    # interleaved trace ids are reconstructed separately and counted
    groups = block.by_trace_id()
    if len(groups) > 1:
        odg.split_blocks += 1
    for _, recs in groups:
        odg.add_block(recs)


def build_odg(log: TraceLog, capability: str) -> Odg:
    odg = Odg(capability)
    matched = False
    for block in log.blocks:
        if _block_capability(block.header.test_case_id) != capability:
            continue
        matched = True
        _add_block_to(odg, block)
    if not matched:
        raise NoTracesForCapability(f"no trace blocks for capability {capability!r}")
    return odg


def build_odgs(log: TraceLog, allow_unlabeled: bool = False) -> list[Odg]:
    """One ODG per capability found in the headers, sorted by capability name.

    Blocks with an unparseable test-case id raise ``BadTestCaseId`` unless
    ``allow_unlabeled`` is set, in which case they are gathered into a
    trailing ODG with ``capability=None``.
    """
    by_cap: dict[str | None, Odg] = {}
    for block in log.blocks:
        tcid = block.header.test_case_id
        cap = _block_capability(tcid)
        if cap is None and not allow_unlabeled:
            raise BadTestCaseId(f"test case id {tcid!r} is not Test_<Capability>_<UseCase>")
        odg = by_cap.setdefault(cap, Odg(cap))
        _add_block_to(odg, block)
    labeled = sorted((k for k in by_cap if k is not None))
    out = [by_cap[k] for k in labeled]
    if None in by_cap:
        out.append(by_cap[None])
    return out


@dataclass(frozen=True, eq=False)
class CallGraph:
    """N methods and the N x N matrix of runtime call counts.

    ``inv[k, l]`` is the number of observed calls from ``methods[k]`` to
    ``methods[l]``. ``caps`` may leave some methods unlabeled.
    """

    methods: tuple[str, ...]
    inv: np.ndarray
    caps: CapabilityMap

    def __post_init__(self):
        n = len(self.methods)
        if len(set(self.methods)) != n:
            raise GraphError("duplicate method ids")
        inv = np.array(self.inv, dtype=np.int64, copy=True)
        if inv.shape != (n, n):
            raise GraphError(f"inv has shape {inv.shape}, expected {(n, n)}")
        if (inv < 0).any():
            raise GraphError("negative call count")
        inv.flags.writeable = False
        object.__setattr__(self, "inv", inv)
        unknown = set(self.caps.method_caps) - set(self.methods)
        if unknown:
            raise GraphError(f"capability map names unknown methods: {sorted(unknown)[:5]}")

    @classmethod
    def from_edges(
        cls,
        methods: Sequence[str],
        edges: Iterable[tuple[str, str, int] | tuple[str, str]],
        method_caps: Mapping[str, Iterable[str]] | None = None,
        capabilities: Iterable[str] | None = None,
    ) -> "CallGraph":
        index = {m: i for i, m in enumerate(methods)}
        inv = np.zeros((len(methods), len(methods)), dtype=np.int64)
        for edge in edges:
            a, b = edge[0], edge[1]
            count = edge[2] if len(edge) > 2 else 1
            inv[index[a], index[b]] += count
        mc = {m: frozenset(c) for m, c in (method_caps or {}).items() if c}
        all_caps = frozenset(capabilities or ()).union(*mc.values())
        return cls(tuple(methods), inv, CapabilityMap(all_caps, mc))

    @property
    def n(self) -> int:
        return len(self.methods)

    @cached_property
    def index(self) -> dict[str, int]:
        return {m: i for i, m in enumerate(self.methods)}

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Unique-edge view: ``adjacency[k, l]`` iff at least one call k -> l."""
        adj = self.inv > 0
        adj.flags.writeable = False
        return adj

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum())

    @property
    def total_calls(self) -> int:
        return int(self.inv.sum())

    @cached_property
    def capability_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.caps.capabilities))

    def membership(self, fractional: bool = False) -> np.ndarray:
        """N x B matrix of capability memberships.

        Shared methods count fully in every capability they belong to, or
        ``1/|caps|`` each when ``fractional``.
        """
        key = "_membership_frac" if fractional else "_membership"
        cached = self.__dict__.get(key)
        if cached is not None:
            return cached
        col = {c: j for j, c in enumerate(self.capability_names)}
        mat = np.zeros((self.n, len(col)))
        for m, caps in self.caps.method_caps.items():
            w = 1.0 / len(caps) if fractional else 1.0
            for c in caps:
                mat[self.index[m], col[c]] = w
        mat.flags.writeable = False
        self.__dict__[key] = mat
        return mat

    def edge_list(self) -> list[tuple[int, int, int]]:
        ks, ls = np.nonzero(self.inv)
        return [(int(k), int(l), int(self.inv[k, l])) for k, l in zip(ks, ls)]

    def to_dict(self) -> dict:
        return {
            "format": GRAPH_FORMAT,
            "methods": list(self.methods),
            "edges": [list(e) for e in self.edge_list()],
            "capabilities": {
                "names": list(self.capability_names),
                "methods": {m: sorted(self.caps.method_caps[m]) for m in self.methods if m in self.caps.method_caps},
            },
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "CallGraph":
        try:
            methods = doc["methods"]
            edges = doc["edges"]
            caps = doc.get("capabilities", {})
        except (KeyError, TypeError) as exc:
            raise GraphFormatError(f"graph document missing field: {exc}") from None
        n = len(methods)
        inv = np.zeros((n, n), dtype=np.int64)
        for e in edges:
            if len(e) != 3:
                raise GraphFormatError(f"edge {e!r} is not [caller_idx, callee_idx, count]")
            k, l, c = (int(x) for x in e)
            if not (0 <= k < n and 0 <= l < n) or c <= 0:
                raise GraphFormatError(f"edge {e!r} out of range")
            inv[k, l] += c
        method_caps = {m: frozenset(c) for m, c in caps.get("methods", {}).items() if c}
        names = frozenset(caps.get("names", ())).union(*method_caps.values())
        return cls(tuple(methods), inv, CapabilityMap(names, method_caps))

    def to_dot(self) -> str:
        lines = ["digraph calls {"]
        for i, m in enumerate(self.methods):
            label = m.replace('"', '\\"')
            lines.append(f'  n{i} [label="{label}"];')
        for k, l, c in self.edge_list():
            lines.append(f'  n{k} -> n{l} [label="{c}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def save_graph(g: CallGraph, path: str | Path) -> None:
    from .io import write_json_atomic

    write_json_atomic(path, g.to_dict())


def load_graph(path: str | Path) -> CallGraph:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: invalid JSON: {exc}") from None
    return CallGraph.from_dict(doc)


def merge_odgs(odgs: Sequence[Odg], capability_map: CapabilityMap | None = None) -> CallGraph:
    """Union the ODGs into one graph with lexicographically ordered methods.

    Call counts are summed. A method's capabilities are those of every ODG
    containing it; an explicit ``capability_map`` replaces that set for each
    method it lists.
    """
    if not odgs:
        raise GraphError("merge_odgs needs at least one ODG")
    methods = sorted(set().union(*(o.nodes for o in odgs)))
    index = {m: i for i, m in enumerate(methods)}
    inv = np.zeros((len(methods), len(methods)), dtype=np.int64)
    acc: dict[str, set[str]] = {}
    for odg in odgs:
        for (a, b), c in odg.edges.items():
            inv[index[a], index[b]] += c
        if odg.capability is not None:
            for m in odg.nodes:
                acc.setdefault(m, set()).add(odg.capability)
    cmap = CapabilityMap(
        frozenset(o.capability for o in odgs if o.capability is not None),
        {m: frozenset(c) for m, c in acc.items()},
    )
    if capability_map is not None:
        cmap = cmap.override(capability_map.restrict(methods))
    return CallGraph(tuple(methods), inv, cmap)


def overlap_ratio(g: CallGraph) -> float:
    """Fraction of methods that belong to two or more capabilities."""
    if g.n == 0:
        return 0.0
    shared = sum(1 for m in g.methods if len(g.caps.caps_of(m)) >= 2)
    return shared / g.n
