"""Decomposition quality metrics.

Structural: cohesion, coupling and modularization quality (MQ) over the
unique-edge view of the call graph; ICP (log-damped share of call weight
crossing services) and IFN (mean count of externally invoked methods per
service) over call counts.

Business alignment: BCP (capability purity inside each service), DI
(concentration of each capability across services) and their equal-weight
mean ABCP, all on a 0-100 scale. Entropies use the natural log normalized by
log(B) for BCP and log(k) for DI, so each per-item entropy lies in [0, 1].

Empty services never count: k and every average run over non-empty services.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import CallGraph

TABLE_COLUMNS = ("k", "mq", "abcp", "icp", "ifn", "cohesion", "coupling", "bcp", "di")


class DecompositionError(ValueError):
    pass


class MethodSetMismatch(DecompositionError):
    def __init__(self, missing: Sequence[str], extra: Sequence[str], duplicated: Sequence[str] = ()):
        self.missing = list(missing)
        self.extra = list(extra)
        self.duplicated = list(duplicated)
        parts = []
        if self.missing:
            parts.append(f"missing {len(self.missing)}: {self.missing[:10]}")
        if self.extra:
            parts.append(f"unknown {len(self.extra)}: {self.extra[:10]}")
        if self.duplicated:
            parts.append(f"assigned twice {len(self.duplicated)}: {self.duplicated[:10]}")
        super().__init__("decomposition does not cover the graph's methods; " + "; ".join(parts))


def compact_labels(assignment: Sequence[int] | np.ndarray) -> np.ndarray:
    """Relabel services 0..k-1 in order of first appearance (a restricted growth string)."""
    assignment = np.asarray(assignment)
    _, first, inverse = np.unique(assignment, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse.reshape(-1)]


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Method-to-service assignment; service ids are arbitrary integers."""

    assignment: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64).reshape(-1).copy()
        if a.size == 0:
            raise DecompositionError("empty assignment")
        if (a < 0).any():
            raise DecompositionError("negative service index")
        a.flags.writeable = False
        object.__setattr__(self, "assignment", a)

    @classmethod
    def single(cls, n: int) -> "Decomposition":
        return cls(np.zeros(n, dtype=np.int64))

    @classmethod
    def from_services(cls, g: CallGraph, services: Iterable[Iterable[str]]) -> "Decomposition":
        """Build from lists of method ids, checking they partition the graph."""
        assignment = np.full(g.n, -1, dtype=np.int64)
        extra, dup = [], []
        sid = 0
        for members in services:
            members = list(members)
            if not members:
                continue
            for m in members:
                i = g.index.get(m)
                if i is None:
                    extra.append(m)
                elif assignment[i] >= 0:
                    dup.append(m)
                else:
                    assignment[i] = sid
            sid += 1
        missing = [g.methods[i] for i in np.flatnonzero(assignment < 0)]
        if missing or extra or dup:
            raise MethodSetMismatch(missing, extra, dup)
        return cls(assignment)

    @property
    def labels(self) -> np.ndarray:
        return compact_labels(self.assignment)

    @property
    def k(self) -> int:
        return int(np.unique(self.assignment).size)

    @property
    def n(self) -> int:
        return int(self.assignment.size)

    def services(self) -> list[np.ndarray]:
        labels = self.labels
        return [np.flatnonzero(labels == s) for s in range(int(labels.max()) + 1)]

    def compacted(self) -> "Decomposition":
        return Decomposition(self.labels)

    def key(self) -> tuple[int, ...]:
        """Canonical restricted-growth string; equal for equivalent partitions."""
        return tuple(int(x) for x in self.labels)

    def __eq__(self, other):
        if not isinstance(other, Decomposition):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


def _onehot(labels: np.ndarray, k: int) -> np.ndarray:
    x = np.zeros((labels.size, k))
    x[np.arange(labels.size), labels] = 1.0
    return x


def _check(g: CallGraph, d: Decomposition) -> tuple[np.ndarray, int, np.ndarray]:
    if d.n != g.n:
        raise DecompositionError(f"decomposition covers {d.n} methods, graph has {g.n}")
    labels = d.labels
    k = int(labels.max()) + 1
    return labels, k, _onehot(labels, k)


def _service_edges(g: CallGraph, x: np.ndarray) -> np.ndarray:
    # e[i, j] = number of unique directed edges from service i to service j
    a = g.adjacency.astype(float)
    return x.T @ a @ x


def cohesion(g: CallGraph, d: Decomposition) -> tuple[float, list[float]]:
    labels, k, x = _check(g, d)
    e = _service_edges(g, x)
    sizes = x.sum(axis=0)
    per = np.diag(e) / sizes**2
    return float(per.mean()), [float(v) for v in per]


def coupling(g: CallGraph, d: Decomposition) -> tuple[float, dict[tuple[int, int], float]]:
    """Mean pairwise coupling over unordered service pairs; 0 when k == 1."""
    labels, k, x = _check(g, d)
    if k < 2:
        return 0.0, {}
    e = _service_edges(g, x)
    sizes = x.sum(axis=0)
    iu, ju = np.triu_indices(k, 1)
    nu = e[iu, ju] + e[ju, iu]
    pair = nu / (2.0 * sizes[iu] * sizes[ju])
    per = {(int(i), int(j)): float(v) for i, j, v in zip(iu, ju, pair)}
    return float(pair.mean()), per


def mq(g: CallGraph, d: Decomposition) -> float:
    ch, per = cohesion(g, d)
    if len(per) == 1:
        return per[0]
    cp, _ = coupling(g, d)
    return ch - cp


def entropy_rows(p: np.ndarray) -> np.ndarray:
    # natural-log entropy of each row, 0 log 0 = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def _bcp_entropies(g: CallGraph, x: np.ndarray, fractional: bool) -> tuple[np.ndarray, list[int]]:
    c = g.membership(fractional)
    n_caps = c.shape[1]
    hist = x.T @ c
    totals = hist.sum(axis=1)
    unlabeled = [int(i) for i in np.flatnonzero(totals <= 0)]
    h = np.ones(hist.shape[0])
    ok = totals > 0
    if n_caps <= 1:
        h[ok] = 0.0
    elif ok.any():
        p = hist[ok] / totals[ok, None]
        h[ok] = entropy_rows(p) / np.log(n_caps)
    return h, unlabeled


def bcp(g: CallGraph, d: Decomposition, fractional: bool = False) -> float:
    """Business context purity in [0, 100].

    A service whose methods carry no capability label counts as maximally
    impure (normalized entropy 1).
    """
    _, _, x = _check(g, d)
    h, _ = _bcp_entropies(g, x, fractional)
    return float((1.0 - h.mean()) * 100.0)


def _di_entropies(g: CallGraph, x: np.ndarray, fractional: bool) -> tuple[np.ndarray, list[str]]:
    c = g.membership(fractional)
    k = x.shape[1]
    hist = x.T @ c  # k x B
    mass = hist.sum(axis=0)
    empty = [g.capability_names[b] for b in np.flatnonzero(mass <= 0)]
    live = mass > 0
    if not live.any():
        return np.zeros(0), empty
    if k == 1:
        return np.zeros(int(live.sum())), empty
    q = (hist[:, live] / mass[live]).T
    return entropy_rows(q) / np.log(k), empty


def di(g: CallGraph, d: Decomposition, fractional: bool = False) -> float:
    """Domain independence in [0, 100]; capabilities without methods are skipped."""
    _, _, x = _check(g, d)
    h, _ = _di_entropies(g, x, fractional)
    if h.size == 0:
        return 0.0
    return float((1.0 - h.mean()) * 100.0)


def abcp(bcp_value: float, di_value: float) -> float:
    return 0.5 * bcp_value + 0.5 * di_value


def icp_weights(g: CallGraph) -> np.ndarray:
    w = g.__dict__.get("_icp_weights")
    if w is None:
        inv = g.inv
        with np.errstate(divide="ignore"):
            w = np.where(inv > 0, np.log(np.where(inv > 0, inv, 1)) + 1.0, 0.0)
        w.flags.writeable = False
        g.__dict__["_icp_weights"] = w
    return w


def icp(g: CallGraph, d: Decomposition) -> float:
    labels, k, x = _check(g, d)
    if k == 1:
        return 0.0
    w = icp_weights(g)
    total = w.sum()
    if total <= 0:
        return 0.0
    intra = np.trace(x.T @ w @ x)
    return float((total - intra) / total)


def _interfaces(g: CallGraph, labels: np.ndarray) -> np.ndarray:
    cross = g.adjacency & (labels[:, None] != labels[None, :])
    return cross.any(axis=0)


def ifn(g: CallGraph, d: Decomposition) -> float:
    labels, k, x = _check(g, d)
    exposed = _interfaces(g, labels)
    return float(exposed.sum() / k)


@dataclass
class ServiceDetail:
    size: int
    intra_edges: int
    cohesion: float
    interfaces: list[str]
    capabilities: dict[str, float]
    methods: list[str] = field(default_factory=list)


@dataclass
class MetricsReport:
    cohesion: float
    coupling: float
    mq: float
    bcp: float
    di: float
    abcp: float
    icp: float
    ifn: float
    k: int
    per_service: list[ServiceDetail] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def row(self) -> dict[str, float | int]:
        return {c: getattr(self, c) for c in TABLE_COLUMNS}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MetricsReport":
        doc = dict(doc)
        doc["per_service"] = [ServiceDetail(**s) for s in doc.get("per_service", [])]
        return cls(**doc)


def evaluate(g: CallGraph, d: Decomposition, fractional: bool = False) -> MetricsReport:
    """Every metric plus per-service detail for one decomposition."""
    labels, k, x = _check(g, d)
    flags: list[str] = []
    ch, per_ch = cohesion(g, d)
    cp, _ = coupling(g, d)
    if k == 1:
        flags.append("single service: coupling undefined, reported as 0")
    mq_value = per_ch[0] if k == 1 else ch - cp

    h_bcp, unlabeled = _bcp_entropies(g, x, fractional)
    for s in unlabeled:
        flags.append(f"service {s} has no capability-labelled methods (BCP entropy set to 1)")
    bcp_value = float((1.0 - h_bcp.mean()) * 100.0)
    h_di, empty_caps = _di_entropies(g, x, fractional)
    for c in empty_caps:
        flags.append(f"capability {c!r} has no methods in the graph (skipped by DI)")
    di_value = 0.0 if h_di.size == 0 else float((1.0 - h_di.mean()) * 100.0)

    e = _service_edges(g, x)
    exposed = _interfaces(g, labels)
    hist = x.T @ g.membership(fractional)
    per_service = []
    for s in range(k):
        members = np.flatnonzero(labels == s)
        per_service.append(
            ServiceDetail(
                size=int(members.size),
                intra_edges=int(round(e[s, s])),
                cohesion=per_ch[s],
                interfaces=[g.methods[i] for i in members if exposed[i]],
                capabilities={
                    c: float(hist[s, b]) for b, c in enumerate(g.capability_names) if hist[s, b] > 0
                },
                methods=[g.methods[i] for i in members],
            )
        )
    return MetricsReport(
        cohesion=ch,
        coupling=cp,
        mq=mq_value,
        bcp=bcp_value,
        di=di_value,
        abcp=abcp(bcp_value, di_value),
        icp=icp(g, d),
        ifn=float(exposed.sum() / k),
        k=k,
        per_service=per_service,
        flags=flags,
    )


def majority_capability(detail: ServiceDetail) -> str | None:
    """Annotation only: most frequent capability, lexicographic tie-break."""
    if not detail.capabilities:
        return None
    return min(detail.capabilities.items(), key=lambda kv: (-kv[1], kv[0]))[0]
