import pytest
from hypothesis import given, settings, strategies as st

from svcdecomp.trace_ingest import (
    BadTestCaseId,
    CapabilityMap,
    CapabilityMapError,
    MalformedRecord,
    OperationRecord,
    RecordBeforeHeader,
    TraceHeader,
    TraceParseError,
    UnknownRecordKind,
    extract_capability,
    parse_capability_map,
    parse_line,
    parse_log,
    read_capability_map,
    read_log,
    write_capability_map,
)

from conftest import ENTRY, SAMPLE_TRACE


def test_header_line():
    rec = parse_line("$2;1753777000000000001;Test_Order_AddItemToCart")
    assert rec == TraceHeader(1753777000000000001, "Test_Order_AddItemToCart")


def test_operation_line():
    line = SAMPLE_TRACE.splitlines()[1]
    rec = parse_line(line)
    assert isinstance(rec, OperationRecord)
    assert rec.operation_signature == ENTRY
    assert rec.trace_id == 2499076000000000001
    assert (rec.eoi, rec.ess) == (2, 1)
    assert rec.session_id == "<no-session-id>"
    assert rec.to_line() == line


def test_unknown_marker():
    with pytest.raises(UnknownRecordKind):
        parse_line("$3;1;2")


@pytest.mark.parametrize(
    "line",
    [
        "$1;1;sig;s;1;5;4;h;0;0",  # tin > tout
        "$1;1;sig;s;1;1;2;h;-1;0",
        "$1;1;;s;1;1;2;h;0;0",
        "$1;1;sig;s;1;1;2;h;0",
        "$1;x;sig;s;1;1;2;h;0;0",
        "$2;12",
        "$2;12;Test_A_B;extra",
    ],
)
def test_malformed(line):
    with pytest.raises(MalformedRecord):
        parse_line(line)


def test_sample_log_one_block(sample_trace):
    log = parse_log(sample_trace)
    assert len(log) == 1
    assert log.blocks[0].header.test_case_id == "Test_Order_AddItemToCart"
    assert log.n_records == 4


def test_empty_and_empty_blocks():
    assert len(parse_log("")) == 0
    log = parse_log("$2;1;Test_A_B\n$2;2;Test_A_C\n")
    assert [len(b.records) for b in log.blocks] == [0, 0]


def test_record_before_header_reports_line():
    with pytest.raises(RecordBeforeHeader) as exc:
        parse_log("\n" + SAMPLE_TRACE.splitlines()[1], source="x.log")
    assert exc.value.line_no == 2
    assert "x.log" in str(exc.value)


def test_eoi_must_increase():
    lines = SAMPLE_TRACE.splitlines()
    with pytest.raises(MalformedRecord):
        parse_log([lines[0], lines[2], lines[1]])


def test_extract_capability():
    assert extract_capability("Test_Order_AddItemsToCart") == ("Order", "AddItemsToCart")
    assert extract_capability("Test_Account_Login") == ("Account", "Login")
    for bad in ("Order_AddItems", "Test_Order", "Test__X", "Test_A_B_C"):
        with pytest.raises(BadTestCaseId):
            extract_capability(bad)


def test_read_log_from_file(tmp_path, sample_trace):
    p = tmp_path / "t.log"
    p.write_text(sample_trace.replace("\n", "\r\n"))
    assert read_log(p).n_records == 4


def test_capability_map_csv_and_json(tmp_path):
    cmap = parse_capability_map("# header\nA.f(int,int),Order\nA.f(int,int),Account\nB.g(),Payment\n")
    assert cmap.caps_of("A.f(int,int)") == {"Order", "Account"}
    assert cmap.capabilities == {"Order", "Account", "Payment"}
    js = parse_capability_map('{"capabilities": ["X", "Y"], "methods": {"m": ["X"]}}')
    assert js.capabilities == {"X", "Y"} and js.caps_of("m") == {"X"}
    assert parse_capability_map('{"m": ["X"]}').caps_of("m") == {"X"}
    p = tmp_path / "caps.csv"
    write_capability_map(cmap, p)
    assert read_capability_map(p) == cmap


def test_capability_map_errors():
    with pytest.raises(CapabilityMapError):
        parse_capability_map("no-comma-here\n")
    with pytest.raises(CapabilityMapError):
        parse_capability_map('{"capabilities": ["X"], "methods": {"m": ["Y"]}}')
    with pytest.raises(CapabilityMapError):
        CapabilityMap(frozenset({"X"}), {"m": frozenset()})


_ints = st.integers(min_value=0, max_value=2**62)
_text = st.text(alphabet=st.characters(blacklist_characters=";\r\n", blacklist_categories=("Cs",)), min_size=1, max_size=30)


@st.composite
def records(draw):
    tin = draw(_ints)
    tout = draw(st.integers(min_value=tin, max_value=2**63))
    return OperationRecord(
        logging_timestamp=draw(_ints),
        operation_signature=draw(_text),
        session_id=draw(_text),
        trace_id=draw(st.integers(min_value=-(2**63), max_value=2**63)),
        tin=tin,
        tout=tout,
        hostname=draw(_text),
        eoi=draw(st.integers(0, 10_000)),
        ess=draw(st.integers(0, 10_000)),
    )


@given(records())
def test_round_trip(rec):
    line = rec.to_line()
    assert parse_line(line) == rec
    assert parse_line(line).to_line() == line


@settings(max_examples=300)
@given(st.text(max_size=80))
def test_parse_line_is_total(line):
    try:
        parse_line(line)
    except TraceParseError:
        pass


@settings(max_examples=100)
@given(st.lists(st.sampled_from(SAMPLE_TRACE.splitlines() + ["$1;bad", "", "junk"]), max_size=8))
def test_parse_log_is_total(lines):
    try:
        parse_log(lines)
    except TraceParseError:
        pass
