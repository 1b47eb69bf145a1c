"""Ground truth for small graphs and a local-search baseline for larger ones.

``enumerate_partitions`` walks restricted growth strings in lexicographic
order, so exhaustive search can break ties by keeping the first optimum.
``reference_metrics`` recomputes every metric with plain loops over method
pairs; tests use it to cross-check the vectorized versions.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .env import Objective, ObjectiveEvaluator, service_cap
from .graph import CallGraph
from .metrics import Decomposition

DEFAULT_CAP = 10
TIE_TOL = 1e-9


class OracleError(ValueError):
    pass


class TooLarge(OracleError):
    def __init__(self, n: int, cap: int):
        self.n = n
        self.cap = cap
        super().__init__(f"exhaustive search over {n} methods exceeds the cap of {cap}")


class InvalidConfig(OracleError):
    pass


@dataclass
class OracleResult:
    best: Decomposition
    objective: float
    evaluated: int
    elapsed: float = field(default=0.0, compare=False)
    mode: str = "exhaustive"


def enumerate_partitions(n: int, max_blocks: int | None = None, cap: int = DEFAULT_CAP) -> Iterator[tuple[int, ...]]:
    """Every set partition of ``range(n)`` as a restricted growth string.

    ``max_blocks`` defaults to the environment's service cap ceil(n/2); pass
    ``n`` to lift it. Strings come out in lexicographic order.
    """
    if n < 1:
        raise OracleError("n must be >= 1")
    if n > cap:
        raise TooLarge(n, cap)
    limit = service_cap(n) if max_blocks is None else max(1, min(max_blocks, n))
    a = [0] * n
    # m[i] = max(a[0..i]); a[i] may take values 0..m[i-1]+1 (bounded by limit-1)
    m = [0] * n
    while True:
        yield tuple(a)
        i = n - 1
        while i > 0:
            if a[i] < limit - 1 and a[i] <= m[i - 1]:
                break
            i -= 1
        if i == 0:
            return
        a[i] += 1
        m[i] = max(m[i - 1], a[i])
        for j in range(i + 1, n):
            a[j] = 0
            m[j] = m[i]


def stirling2(n: int, k: int) -> int:
    if n == k:
        return 1
    if k == 0 or k > n:
        return 0
    return k * stirling2(n - 1, k) + stirling2(n - 1, k - 1)


def count_partitions(n: int, max_blocks: int) -> int:
    return sum(stirling2(n, k) for k in range(1, max_blocks + 1))


def exhaustive_best(g: CallGraph, objective: Objective, cap: int = DEFAULT_CAP, fractional: bool = False) -> OracleResult:
    if g.n > cap:
        raise TooLarge(g.n, cap)
    t0 = time.perf_counter()
    evaluate = ObjectiveEvaluator(g, objective, fractional)
    best_rgs = None
    best_val = -math.inf
    count = 0
    for rgs in enumerate_partitions(g.n, cap=cap):
        val = evaluate(np.asarray(rgs, dtype=np.int64))
        count += 1
        if val > best_val + TIE_TOL:
            best_val, best_rgs = val, rgs
    return OracleResult(Decomposition(best_rgs), best_val, count, time.perf_counter() - t0, "exhaustive")


def hill_climb(
    g: CallGraph,
    objective: Objective,
    restarts: int = 20,
    seed: int = 0,
    fractional: bool = False,
) -> OracleResult:
    """Best-improvement single-method relocation from random starts.

    Targets range over all ceil(N/2) service columns, empty ones included.
    """
    if restarts < 1:
        raise InvalidConfig("restarts must be >= 1")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    evaluate = ObjectiveEvaluator(g, objective, fractional)
    s_max = service_cap(g.n)
    best_val, best_assign = -math.inf, None
    count = 0
    for _ in range(restarts):
        a = rng.integers(0, s_max, size=g.n)
        cur = evaluate(a)
        count += 1
        while True:
            move, gain = None, 0.0
            for i in range(g.n):
                orig = a[i]
                for t in range(s_max):
                    if t == orig:
                        continue
                    a[i] = t
                    delta = evaluate(a) - cur
                    count += 1
                    if delta > gain:
                        move, gain = (i, t), delta
                a[i] = orig
            if move is None:
                break
            a[move[0]] = move[1]
            cur = evaluate(a)
        if cur > best_val + TIE_TOL:
            best_val, best_assign = cur, a.copy()
    return OracleResult(Decomposition(best_assign).compacted(), best_val, count, time.perf_counter() - t0, "hill-climb")


# --- naive reference metrics -------------------------------------------------


def _groups(labels) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(labels):
        groups.setdefault(int(s), []).append(i)
    return groups


def reference_metrics(g: CallGraph, assignment, fractional: bool = False) -> dict[str, float]:
    """All metrics by direct double loops; slow, but shares no code with ``metrics``."""
    n = g.n
    inv = [[int(g.inv[a][b]) for b in range(n)] for a in range(n)]
    groups = _groups(assignment)
    services = [groups[s] for s in sorted(groups)]
    k = len(services)
    where = {}
    for s, members in enumerate(services):
        for m in members:
            where[m] = s

    ch_list = []
    for members in services:
        mu = sum(1 for a in members for b in members if inv[a][b] > 0)
        ch_list.append(mu / len(members) ** 2)
    ch = sum(ch_list) / k
    if k == 1:
        cp = 0.0
        mq = ch_list[0]
    else:
        total = 0.0
        for i in range(k):
            for j in range(i + 1, k):
                nu = 0
                for a in services[i]:
                    for b in services[j]:
                        nu += inv[a][b] > 0
                        nu += inv[b][a] > 0
                total += nu / (2 * len(services[i]) * len(services[j]))
        cp = total / (k * (k - 1) / 2)
        mq = ch - cp

    cap_names = sorted(g.caps.capabilities)
    n_caps = len(cap_names)

    def weight(method_idx, cap):
        caps = g.caps.caps_of(g.methods[method_idx])
        if cap not in caps:
            return 0.0
        return 1.0 / len(caps) if fractional else 1.0

    h_sum = 0.0
    for members in services:
        counts = [sum(weight(m, c) for m in members) for c in cap_names]
        tot = sum(counts)
        if tot == 0:
            h_sum += 1.0
            continue
        h = 0.0
        for c in counts:
            if c > 0:
                p = c / tot
                h -= p * math.log(p)
        h_sum += h / math.log(n_caps) if n_caps > 1 else 0.0
    bcp = (1 - h_sum / k) * 100

    hs = []
    for c in cap_names:
        per = [sum(weight(m, c) for m in members) for members in services]
        mass = sum(per)
        if mass == 0:
            continue
        if k == 1:
            hs.append(0.0)
            continue
        h = 0.0
        for v in per:
            if v > 0:
                q = v / mass
                h -= q * math.log(q)
        hs.append(h / math.log(k))
    di = (1 - sum(hs) / len(hs)) * 100 if hs else 0.0

    num = den = 0.0
    for a in range(n):
        for b in range(n):
            if inv[a][b] > 0:
                w = math.log(inv[a][b]) + 1
                den += w
                if where[a] != where[b]:
                    num += w
    icp = 0.0 if k == 1 or den == 0 else num / den

    exposed = 0
    for b in range(n):
        if any(inv[a][b] > 0 and where[a] != where[b] for a in range(n)):
            exposed += 1
    ifn = exposed / k

    return {
        "cohesion": ch,
        "coupling": cp,
        "mq": mq,
        "bcp": bcp,
        "di": di,
        "abcp": 0.5 * bcp + 0.5 * di,
        "icp": icp,
        "ifn": ifn,
        "k": k,
    }
