"""Synthetic call graphs and trace logs with known structure."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import CallGraph

ECOMMERCE_CAPABILITIES = ("Order", "Account", "Payment")


def random_graph(
    n: int,
    edge_prob: float = 0.3,
    n_caps: int = 2,
    shared_prob: float = 0.2,
    max_calls: int = 5,
    seed: int = 0,
    self_loops: bool = True,
) -> CallGraph:
    """Erdos-Renyi style digraph with random call counts and capability labels."""
    rng = np.random.default_rng(seed)
    methods = [f"C{i // 3}.m{i}()" for i in range(n)]
    mask = rng.random((n, n)) < edge_prob
    if not self_loops:
        np.fill_diagonal(mask, False)
    counts = rng.integers(1, max_calls + 1, size=(n, n)) * mask
    caps = [f"Cap{c}" for c in range(n_caps)]
    method_caps = {}
    for m in methods:
        chosen = {caps[int(rng.integers(n_caps))]}
        if n_caps > 1 and rng.random() < shared_prob:
            chosen.add(caps[int(rng.integers(n_caps))])
        method_caps[m] = chosen
    edges = [(methods[a], methods[b], int(counts[a, b])) for a, b in zip(*np.nonzero(counts))]
    return CallGraph.from_edges(methods, edges, method_caps, caps)


def planted_graph(
    sizes: Sequence[int] = (7, 7, 6),
    names: Sequence[str] = ECOMMERCE_CAPABILITIES,
    density: float = 1.0,
    max_calls: int = 3,
    seed: int = 0,
) -> tuple[CallGraph, np.ndarray]:
    """Capability-separable graph: edges only inside each capability's methods.

    Returns the graph and the planted assignment (service index per method).
    """
    rng = np.random.default_rng(seed)
    methods, truth, method_caps, edges = [], [], {}, []
    for c, (size, name) in enumerate(zip(sizes, names)):
        block = [f"{name}Service.op{j}()" for j in range(size)]
        for m in block:
            method_caps[m] = {name}
        for a in block:
            for b in block:
                if a != b and rng.random() < density:
                    edges.append((a, b, int(rng.integers(1, max_calls + 1))))
        methods += block
        truth += [c] * size
    order = sorted(range(len(methods)), key=lambda i: methods[i])
    methods_sorted = [methods[i] for i in order]
    g = CallGraph.from_edges(methods_sorted, edges, method_caps, names)
    return g, np.asarray([truth[i] for i in order])


def tangled_graph(
    n_modules: int = 4,
    module_size: int = 5,
    names: Sequence[str] = ECOMMERCE_CAPABILITIES,
    n_shared: int = 4,
    cross_edges: int = 3,
    seed: int = 0,
) -> tuple[CallGraph, np.ndarray]:
    """Dense structural modules whose capability labels cut across them.

    Method ``i`` carries capability ``i mod B``; the first method of each of
    the first ``n_shared`` modules also carries the next capability. Returns
    the graph and the structural module of each method.
    """
    rng = np.random.default_rng(seed)
    n = n_modules * module_size
    methods = [f"Module{i // module_size}.op{i:02d}()" for i in range(n)]
    module = np.arange(n) // module_size
    method_caps = {m: {names[i % len(names)]} for i, m in enumerate(methods)}
    for s in range(min(n_shared, n_modules)):
        i = s * module_size
        method_caps[methods[i]].add(names[(i + 1) % len(names)])
    edges = []
    for a in range(n):
        for b in range(n):
            if a != b and module[a] == module[b]:
                edges.append((methods[a], methods[b], int(rng.integers(1, 4))))
    for _ in range(cross_edges):
        a, b = rng.choice(n, size=2, replace=False)
        if module[a] != module[b]:
            edges.append((methods[a], methods[b], 1))
    return CallGraph.from_edges(methods, edges, method_caps, names), module


def two_clique_graph() -> CallGraph:
    """A<->B, C<->D, nothing between; one capability per clique."""
    return CallGraph.from_edges(
        ["A", "B", "C", "D"],
        [("A", "B"), ("B", "A"), ("C", "D"), ("D", "C")],
        {"A": {"X"}, "B": {"X"}, "C": {"Y"}, "D": {"Y"}},
    )


@dataclass
class Call:
    """Node of a call tree used to render trace records."""

    signature: str
    children: list["Call"] = field(default_factory=list)


def render_trace(test_case_id: str, roots: Sequence[Call], trace_id: int, t0: int, session: str = "<no-session-id>", host: str = "localhost") -> list[str]:
    lines = [f"$2;{t0};{test_case_id}"]
    clock = [t0 + 100]
    eoi = [0]

    def visit(node: Call, depth: int) -> None:
        tin = clock[0]
        clock[0] += 10
        my_eoi = eoi[0]
        eoi[0] += 1
        idx = len(lines)
        lines.append("")
        for child in node.children:
            visit(child, depth + 1)
        tout = clock[0]
        clock[0] += 10
        lines[idx] = ";".join(
            ["$1", str(tout + 1), node.signature, session, str(trace_id), str(tin), str(tout), host, str(my_eoi), str(depth)]
        )

    for root in roots:
        visit(root, 1)
    return lines


def ecommerce_trace_log() -> str:
    """Trace log for a small shop: Order, Account and Payment suites over 7, 7 and 6 methods."""
    C = Call
    order = {
        "Test_Order_AddItemsToCart": [
            C("OrderActionBean.addItemToCart(java.lang.String,int)", [
                C("OrderService.getCart(java.lang.String)", [C("CartRepository.find(java.lang.String)")]),
                C("OrderService.addItemToCart(model.Cart,java.lang.String,int)", [C("CartRepository.save(model.Cart)")]),
            ])
        ],
        "Test_Order_DeleteItemFromCart": [
            C("OrderActionBean.addItemToCart(java.lang.String,int)", [
                C("OrderService.getCart(java.lang.String)", [C("CartRepository.find(java.lang.String)")]),
                C("CartRepository.save(model.Cart)"),
            ])
        ],
        "Test_Order_PlaceOrder": [
            C("OrderActionBean.placeOrder()", [
                C("OrderService.placeOrder(model.Cart)", [
                    C("OrderService.getCart(java.lang.String)", [C("CartRepository.find(java.lang.String)")]),
                    C("CartRepository.save(model.Cart)"),
                ]),
            ])
        ],
    }
    account = {
        "Test_Account_Login": [
            C("AccountActionBean.signon(java.lang.String,java.lang.String)", [
                C("AccountService.getAccount(java.lang.String)", [C("AccountRepository.find(java.lang.String)")]),
                C("AccountService.checkPassword(model.Account,java.lang.String)"),
            ])
        ],
        "Test_Account_Logout": [
            C("AccountActionBean.signoff()", [C("SessionStore.clear()")]),
        ],
        "Test_Account_Signup": [
            C("AccountActionBean.newAccount(model.Account)", [
                C("AccountService.getAccount(java.lang.String)", [C("AccountRepository.find(java.lang.String)")]),
                C("AccountService.checkPassword(model.Account,java.lang.String)"),
                C("SessionStore.clear()"),
            ])
        ],
    }
    payment = {
        "Test_Payment_ChoosePayment": [
            C("PaymentActionBean.choose(java.lang.String)", [
                C("PaymentService.listMethods()", [C("PaymentRepository.findMethods()")]),
            ])
        ],
        "Test_Payment_MakePayment": [
            C("PaymentActionBean.pay(double)", [
                C("PaymentService.charge(double,java.lang.String)", [C("PaymentGateway.authorize(double)")]),
                C("PaymentService.listMethods()", [C("PaymentRepository.findMethods()")]),
            ])
        ],
    }
    lines: list[str] = []
    trace_id = 2499076000000000001
    t0 = 1753777000000000001
    for suite in (order, account, payment):
        for tcid, roots in suite.items():
            lines += render_trace(tcid, roots, trace_id, t0)
            trace_id += 1
            t0 += 1_000_000
    return "\n".join(lines) + "\n"
