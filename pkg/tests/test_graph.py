import itertools

import numpy as np
import pytest

from svcdecomp import synthetic
from svcdecomp.graph import (
    BrokenStack,
    CallGraph,
    GraphFormatError,
    NoTracesForCapability,
    Odg,
    build_odg,
    build_odgs,
    load_graph,
    merge_odgs,
    overlap_ratio,
    reconstruct_calls,
    save_graph,
)
from svcdecomp.trace_ingest import BadTestCaseId, CapabilityMap, OperationRecord, parse_log

from conftest import CART, ENTRY, QUANTITY, SAMPLE_TRACE, SERVICE_ADD


def rec(sig, eoi, ess, trace_id=1):
    return OperationRecord(0, sig, "<no-session-id>", trace_id, 0, 0, "h", eoi, ess)


def test_reconstruct_sample():
    log = parse_log(SAMPLE_TRACE)
    edges, entries = reconstruct_calls(log.blocks[0].records)
    assert edges == [(ENTRY, CART), (CART, SERVICE_ADD), (ENTRY, QUANTITY)]
    assert entries == {ENTRY}


def test_reconstruct_single_and_broken():
    assert reconstruct_calls([rec("a", 0, 1)]) == ([], {"a"})
    with pytest.raises(BrokenStack):
        reconstruct_calls([rec("a", 0, 1), rec("b", 1, 3)])


def test_deeper_frames_close():
    # a(1) -> b(2) -> c(3); d(2) under a; e(3) must attach to d, not b
    recs = [rec("a", 0, 1), rec("b", 1, 2), rec("c", 2, 3), rec("d", 3, 2), rec("e", 4, 3)]
    edges, _ = reconstruct_calls(recs)
    assert ("d", "e") in edges and ("b", "e") not in edges


def test_caller_precedes_callee():
    C = synthetic.Call
    tree = C("a", [C("b", [C("c"), C("d", [C("e")])]), C("f")])
    block = parse_log("\n".join(synthetic.render_trace("Test_X_Y", [tree], 1, 0))).blocks[0]
    eoi = {r.operation_signature: r.eoi for r in block.records}
    edges, entries = reconstruct_calls(block.records)
    assert sorted(edges) == [("a", "b"), ("a", "f"), ("b", "c"), ("b", "d"), ("d", "e")]
    assert entries == {"a"}
    assert all(eoi[x] < eoi[y] for x, y in edges)


def test_ecommerce_three_odgs():
    log = parse_log(synthetic.ecommerce_trace_log())
    odgs = build_odgs(log)
    assert [o.capability for o in odgs] == ["Account", "Order", "Payment"]
    g = merge_odgs(odgs)
    assert g.n == 20
    assert list(g.methods) == sorted(g.methods)
    assert overlap_ratio(g) == 0.0
    assert g.total_calls == sum(o.total_calls for o in odgs)


def test_repeated_block_doubles_counts():
    once = build_odg(parse_log(SAMPLE_TRACE), "Order")
    twice = build_odg(parse_log(SAMPLE_TRACE + SAMPLE_TRACE), "Order")
    assert twice.nodes == once.nodes
    assert all(twice.edges[e] == 2 * c for e, c in once.edges.items())


def test_no_traces_for_capability():
    with pytest.raises(NoTracesForCapability):
        build_odg(parse_log(SAMPLE_TRACE), "Payment")


def test_bad_header_needs_opt_in():
    text = SAMPLE_TRACE.replace("Test_Order_AddItemToCart", "Smoke")
    with pytest.raises(BadTestCaseId):
        build_odgs(parse_log(text))
    odgs = build_odgs(parse_log(text), allow_unlabeled=True)
    assert odgs[-1].capability is None
    g = merge_odgs(odgs)
    assert g.caps.caps_of(ENTRY) == frozenset()


def test_interleaved_trace_ids_split():
    lines = SAMPLE_TRACE.splitlines()
    other = lines[1].replace("2499076000000000001", "7").replace(";2;1", ";9;1")
    odgs = build_odgs(parse_log("\n".join(lines + [other])))
    assert odgs[0].split_blocks == 1


def test_shared_method_union():
    a = Odg("X", {"m", "p"}, __import__("collections").Counter({("p", "m"): 1}))
    b = Odg("Y", {"m", "q"}, __import__("collections").Counter({("q", "m"): 2}))
    g = merge_odgs([a, b])
    assert g.methods == ("m", "p", "q")
    assert g.caps.caps_of("m") == {"X", "Y"}
    assert overlap_ratio(g) == pytest.approx(1 / 3)


def test_disjoint_merge_block_diagonal():
    from collections import Counter

    a = Odg("X", {"a1", "a2"}, Counter({("a1", "a2"): 1}))
    b = Odg("Y", {"b1", "b2"}, Counter({("b2", "b1"): 3}))
    g = merge_odgs([a, b])
    assert g.inv[:2, 2:].sum() == 0 and g.inv[2:, :2].sum() == 0


def test_merge_order_independent():
    log = parse_log(synthetic.ecommerce_trace_log())
    odgs = build_odgs(log)
    ref = merge_odgs(odgs)
    for perm in itertools.permutations(odgs):
        g = merge_odgs(list(perm))
        assert g.methods == ref.methods
        assert np.array_equal(g.inv, ref.inv)


def test_capability_map_override():
    odgs = build_odgs(parse_log(SAMPLE_TRACE))
    cmap = CapabilityMap(frozenset({"Order", "Cart"}), {CART: frozenset({"Cart"}), "NotInGraph()": frozenset({"Cart"})})
    g = merge_odgs(odgs, cmap)
    assert g.caps.caps_of(CART) == {"Cart"}
    assert g.caps.caps_of(ENTRY) == {"Order"}
    assert "NotInGraph()" not in g.caps.method_caps


def test_overlap_ratio_counts():
    def graph(n, shared):
        methods = [f"m{i}" for i in range(n)]
        caps = {m: {"A", "B"} if i < shared else {"A"} for i, m in enumerate(methods)}
        return CallGraph.from_edges(methods, [], caps)

    assert overlap_ratio(graph(114, 21)) == pytest.approx(21 / 114)
    assert round(overlap_ratio(graph(114, 21)), 3) == 0.184
    assert round(overlap_ratio(graph(227, 9)), 4) == 0.0396
    assert round(overlap_ratio(graph(1308, 140)), 3) == 0.107


def test_graph_file_round_trip(tmp_path):
    g, _ = synthetic.planted_graph()
    p = tmp_path / "g.json"
    save_graph(g, p)
    h = load_graph(p)
    assert h.methods == g.methods and np.array_equal(h.inv, g.inv) and h.caps == g.caps
    assert "digraph" in g.to_dot()


def test_graph_file_errors(tmp_path):
    p = tmp_path / "g.json"
    p.write_text("{not json")
    with pytest.raises(GraphFormatError):
        load_graph(p)
    p.write_text('{"format": "svcdecomp-graph/1", "methods": ["a"], "edges": [[0, 5, 1]], "capabilities": {"names": [], "methods": {}}}')
    with pytest.raises(GraphFormatError):
        load_graph(p)


def test_self_loops_kept():
    recs = [rec("f", 0, 1), rec("f", 1, 2)]
    odg = Odg("X")
    odg.add_block(recs)
    g = merge_odgs([odg])
    assert g.inv[0, 0] == 1
