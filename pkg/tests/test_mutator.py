import json
import re
import threading

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semfuzz.broker import C2P, LIBRARY_INFO, P2C, InProcessBroker
from semfuzz.clock import SimClock
from semfuzz.model import BackendDescriptor, BackendKind, QueryStatus, digest
from semfuzz.mutator import (
    Example,
    HexError,
    JsonlLogSink,
    MutationService,
    PromptTemplates,
    TemplateError,
    build_prompt,
    hex_decode_lenient,
    hex_encode,
    make_backend,
    parse_response,
    query_backend,
    recombine,
    split_buffer,
)
from semfuzz.mutator.backends import ChaosBackend, HttpChatBackend, extract_content
from semfuzz.mutator.prompts import STRICT_MARKER, default_templates

HEX_RE = re.compile(r"\b[0-9a-f]{16,}\b")


# --- split / hex / recombine ----------------------------------------------

def test_split_2500():
    p = bytes(range(256)) * 9 + bytes(196)
    assert len(p) == 2500
    s = split_buffer(p, 2000)
    assert (s.head, s.tail) == (p[:2000], p[2000:])
    assert len(s.tail) == 500


def test_split_boundaries():
    p = b"x" * 2000
    assert split_buffer(p).tail == b"" and split_buffer(p).head == p
    assert split_buffer(b"") == split_buffer(b"", 1)
    with pytest.raises(ValueError):
        split_buffer(b"a", 0)


@given(st.binary(max_size=5000), st.integers(1, 3000))
def test_split_invariants(p, threshold):
    s = split_buffer(p, threshold)
    assert s.head + s.tail == p
    assert len(s.head) == min(len(p), threshold)


def test_hex_examples():
    assert hex_encode(b"\xde\xad") == "dead"
    assert hex_decode_lenient("abc") == b"\xab\xc0"
    assert hex_decode_lenient(" DE ad\n") == b"\xde\xad"
    with pytest.raises(HexError):
        hex_decode_lenient("xyz")


@given(st.binary(max_size=512))
def test_hex_roundtrip(b):
    assert hex_decode_lenient(hex_encode(b)) == b


def test_recombine():
    s = split_buffer(b"ABZ", 2)
    assert recombine(s, b"XY") == b"XYZ"
    assert recombine(split_buffer(b"AB", 5), b"Q") == b"Q"


@given(st.binary(max_size=5000), st.integers(1, 3000))
def test_recombine_identity(p, threshold):
    s = split_buffer(p, threshold)
    assert recombine(s, s.head) == p


# --- prompts ----------------------------------------------------------------

POOL = [Example(f"reasoning {i}", f"{i:02x}" * 12) for i in range(1, 4)]


def test_system_prompt_marker():
    b = build_prompt("dead", "ctx", 0)
    assert STRICT_MARKER in b.system_text


def test_zero_shot_skeleton_only():
    b = build_prompt("cafe", "lib", 0, POOL)
    assert b.examples == ()
    assert "### Example" not in b.user_text
    for ex in POOL:
        assert ex.final_output_hex not in b.user_text
    assert HEX_RE.findall(b.user_text) == []
    assert default_templates().skeleton in b.user_text


@pytest.mark.parametrize("k", [1, 3])
def test_k_shot_blocks_then_reminder(k):
    b = build_prompt("cafe", "lib", k, POOL)
    text = b.user_text
    headers = [m.start() for m in re.finditer(r"^### Example \d+$", text, re.M)]
    assert len(headers) == k
    for ex in POOL[:k]:
        assert ex.final_output_hex in text
    for ex in POOL[k:]:
        assert ex.final_output_hex not in text
    reminder = text.index("## Output Format Reminder")
    assert reminder > max(text.index(ex.final_output_hex) for ex in POOL[:k])
    assert text.count("Final Output:") == k + 1  # k examples plus the reminder


def test_prompt_embeds_input_and_context():
    b = build_prompt("0badf00d", "library {examples} text", 1, POOL)
    assert "0badf00d" in b.user_text
    # substituted text is not re-expanded
    assert "library {examples} text" in b.user_text


@given(st.binary(max_size=64), st.text(max_size=40), st.sampled_from([0, 1, 3]))
def test_prompt_determinism(head, ctx, k):
    assert build_prompt(head.hex(), ctx, k, POOL) == build_prompt(head.hex(), ctx, k, POOL)


def test_shipped_pool_has_three_examples():
    exs = default_templates().examples
    assert len(exs) == 3
    for ex in exs:
        hex_decode_lenient(ex.final_output_hex)
        assert ex.analysis


def test_bad_shot_and_small_pool():
    with pytest.raises(ValueError):
        build_prompt("aa", "", 2)
    with pytest.raises(TemplateError):
        build_prompt("aa", "", 3, POOL[:2])


def test_template_errors(tmp_path):
    with pytest.raises(TemplateError):
        PromptTemplates.load(tmp_path)
    (tmp_path / "system.txt").write_text("no marker")
    (tmp_path / "user.txt").write_text("{input_buffer} {library_info} {examples}")
    with pytest.raises(TemplateError, match="Strict"):
        PromptTemplates.load(tmp_path)
    (tmp_path / "system.txt").write_text(STRICT_MARKER)
    (tmp_path / "user.txt").write_text("{input_buffer} {examples}")
    with pytest.raises(TemplateError, match="library_info"):
        PromptTemplates.load(tmp_path)
    (tmp_path / "user.txt").write_text("{input_buffer} {library_info} {examples}")
    t = PromptTemplates.load(tmp_path)
    assert build_prompt("ab", "c", 0, templates=t).user_text.startswith("ab c ")


# --- response parsing -----------------------------------------------------------

def test_parse_happy():
    r = parse_response("Analysis: changed a byte. Final Output: cafe")
    assert r.status is QueryStatus.OK
    assert r.final_output_hex == "cafe" and r.payload == b"\xca\xfe"


def test_parse_analysis_only():
    assert parse_response("Analysis:\nthinking hard").status is QueryStatus.FORMAT_MISMATCH


def test_parse_nonhex_residue():
    r = parse_response("Final Output: cafes")
    assert r.status is QueryStatus.HEX_ERROR


def test_parse_empty():
    assert parse_response("").status is QueryStatus.EMPTY
    assert parse_response("  \n").status is QueryStatus.EMPTY


def test_parse_empty_final_block():
    assert parse_response("Analysis: x\nFinal Output:\n").status is QueryStatus.FORMAT_MISMATCH


@pytest.mark.parametrize(
    "text",
    [
        "## Final Output:\n```hex\nde ad\nbe ef\n```",
        "**Final Output**\n`deadbeef`",
        "Analysis: the Final Output: heading is quoted here\n\nfinal output:\ndeadbeef",
        "Analysis:\nx\n\n### FINAL OUTPUT\n\n  DEADBEEF  \n",
    ],
)
def test_parse_markdown_tolerance(text):
    r = parse_response(text)
    assert r.status is QueryStatus.OK
    assert r.payload == b"\xde\xad\xbe\xef"


def test_parse_odd_length_fixup():
    assert parse_response("Final Output: abc").payload == b"\xab\xc0"


@given(st.text(max_size=200))
def test_parse_never_raises(text):
    r = parse_response(text)
    if r.status is QueryStatus.OK:
        assert r.final_output_hex and r.payload is not None


# --- backends ---------------------------------------------------------------------

def test_identity_backend():
    r = query_backend(BackendDescriptor(), build_prompt("dead", "", 0))
    assert r.status is QueryStatus.OK
    assert r.final_output_hex == "dead"
    assert "Final Output" in r.raw_text


def test_mutator_backend_seeded():
    d = BackendDescriptor(kind=BackendKind.MOCK_MUTATOR, rng_seed=4)
    p = build_prompt("00112233445566778899", "", 0)
    a = [make_backend(d).query(p).payload for _ in range(3)]
    b1, b2 = make_backend(d), make_backend(d)
    assert [b1.query(p).payload for _ in range(5)] == [b2.query(p).payload for _ in range(5)]
    assert a[0] != bytes.fromhex("00112233445566778899")


def test_chaos_full_timeout_latency():
    d = BackendDescriptor(kind=BackendKind.MOCK_CHAOS, timeout_rate=1.0, mismatch_rate=0, oddhex_rate=0,
                          request_timeout=0.05)
    clock = SimClock()
    r = make_backend(d, clock).query(build_prompt("aa", "", 0))
    assert r.status is QueryStatus.TIMEOUT
    assert r.latency == pytest.approx(0.05)


@pytest.mark.parametrize(
    "rates,status",
    [((0, 1, 0), QueryStatus.FORMAT_MISMATCH), ((0, 0, 1), QueryStatus.HEX_ERROR)],
)
def test_chaos_forced_faults(rates, status):
    d = BackendDescriptor(kind=BackendKind.MOCK_CHAOS, timeout_rate=rates[0], mismatch_rate=rates[1],
                          oddhex_rate=rates[2])
    be = make_backend(d, SimClock())
    assert {be.query(build_prompt("abcd", "", 0)).status for _ in range(20)} == {status}


def test_chaos_duplicates_replay_last_ok():
    d = BackendDescriptor(kind=BackendKind.MOCK_CHAOS, timeout_rate=0, mismatch_rate=0, oddhex_rate=0, dup_rate=1.0)
    be = ChaosBackend(d, SimClock())
    outs = [be.query(build_prompt(f"{i:04x}" * 4, "", 0)).final_output_hex for i in range(5)]
    assert len(set(outs)) == 1


def _chat_transport(handler):
    return httpx.MockTransport(handler)


def test_http_backend_request_shape():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"message": {"content": "Analysis: ok\nFinal Output:\nbeef"}})

    d = BackendDescriptor(kind=BackendKind.HTTP_CHAT, endpoint="http://llm.local/api/chat", model="m1", temperature=0.0)
    be = HttpChatBackend(d, transport=_chat_transport(handler))
    p = build_prompt("dead", "ctx", 1)
    r = be.query(p)
    assert r.status is QueryStatus.OK and r.payload == b"\xbe\xef"
    body = seen["body"]
    assert body["model"] == "m1" and body["stream"] is False and body["temperature"] == 0.0
    assert body["messages"] == [
        {"role": "system", "content": p.system_text},
        {"role": "user", "content": p.user_text},
    ]


@pytest.mark.parametrize(
    "response,status",
    [
        (httpx.Response(500, text="boom"), QueryStatus.EMPTY),
        (httpx.Response(200, text="not json"), QueryStatus.EMPTY),
        (httpx.Response(200, json={"choices": [{"message": {"content": "Final Output: 00"}}]}), QueryStatus.OK),
        (httpx.Response(200, json={"response": "nothing useful"}), QueryStatus.FORMAT_MISMATCH),
    ],
)
def test_http_backend_statuses(response, status):
    d = BackendDescriptor(kind=BackendKind.HTTP_CHAT, endpoint="http://x/", model="m")
    be = HttpChatBackend(d, transport=_chat_transport(lambda req: response))
    assert be.query(build_prompt("aa", "", 0)).status is status


def test_http_backend_timeout_and_transport_error():
    def slow(request):
        raise httpx.ReadTimeout("slow", request=request)

    def down(request):
        raise httpx.ConnectError("refused", request=request)

    d = BackendDescriptor(kind=BackendKind.HTTP_CHAT, endpoint="http://x/", model="m", request_timeout=0.01)
    assert HttpChatBackend(d, transport=_chat_transport(slow)).query(build_prompt("aa", "", 0)).status is QueryStatus.TIMEOUT
    assert HttpChatBackend(d, transport=_chat_transport(down)).query(build_prompt("aa", "", 0)).status is QueryStatus.EMPTY


def test_http_backend_real_timeout():
    import socket

    srv = socket.socket()
    srv.bind(("127.0.0.1", 0))
    srv.listen(1)  # accepts but never answers
    port = srv.getsockname()[1]
    d = BackendDescriptor(kind=BackendKind.HTTP_CHAT, endpoint=f"http://127.0.0.1:{port}/", model="m",
                          request_timeout=0.2)
    r = make_backend(d).query(build_prompt("aa", "", 0))
    srv.close()
    assert r.status is QueryStatus.TIMEOUT
    assert 0.15 <= r.latency < 2.0


def test_extract_content_shapes():
    assert extract_content({"message": {"content": "a"}}) == "a"
    assert extract_content({"choices": [{"message": {"content": "b"}}]}) == "b"
    assert extract_content({"response": "c"}) == "c"
    assert extract_content([]) == ""


# --- service ----------------------------------------------------------------------

def make_service(kind=BackendKind.MOCK_IDENTITY, shot=0, sink=None, **rates):
    broker = InProcessBroker()
    d = BackendDescriptor(kind=kind, **rates)
    svc = MutationService(broker, make_backend(d, SimClock()), shot, "toy", sink, clock=SimClock())
    return broker, svc


def drain(broker, queue):
    out = []
    while (m := broker.pop(queue)) is not None:
        out.append(m)
    return out


def test_service_identity_one_message():
    broker, svc = make_service()
    broker.set(LIBRARY_INFO, b"ctx")
    broker.push(C2P, b"hello world")
    rec = svc.step()
    assert drain(broker, P2C) == [b"hello world"]
    assert rec.status is QueryStatus.OK
    assert rec.input_digest == digest(b"hello world")
    assert rec.final_output_digest == digest(b"hello world".hex().encode())
    assert svc.step() is None


def test_service_missing_context_logged(caplog):
    broker, svc = make_service()
    broker.push(C2P, b"x")
    with caplog.at_level("WARNING"):
        svc.step()
    assert "library_info" in caplog.text


def test_service_mismatch_pushes_nothing():
    broker, svc = make_service(BackendKind.MOCK_CHAOS, timeout_rate=0, mismatch_rate=1.0, oddhex_rate=0)
    for i in range(100):
        broker.push(C2P, bytes([i]) * 10)
    while svc.step() is not None:
        pass
    assert drain(broker, P2C) == []
    assert [r.status for r in svc.sink.records] == [QueryStatus.FORMAT_MISMATCH] * 100


def test_service_chaos_counting_oracle():
    broker, svc = make_service(BackendKind.MOCK_CHAOS, rng_seed=5)
    for i in range(1000):
        broker.push(C2P, i.to_bytes(4, "little") * 8)
    while svc.step() is not None:
        pass
    recs = svc.sink.records
    assert len(recs) == 1000
    ok = sum(r.status is QueryStatus.OK for r in recs)
    assert len(drain(broker, P2C)) == ok
    assert sum(sum(r.status is s for r in recs) for s in QueryStatus) == 1000
    assert [r.seq for r in recs] == list(range(1000))


def test_service_tail_preserved():
    broker, svc = make_service()
    svc.split_threshold = 4
    broker.push(C2P, b"headTAIL")
    svc.step()
    assert drain(broker, P2C) == [b"headTAIL"]
    assert svc.sink.records[0].input_digest == digest(b"head")


def test_log_sink_file_and_seq_resume(tmp_path):
    path = tmp_path / "log.jsonl"
    sink = JsonlLogSink(path)
    broker, svc = make_service(sink=sink)
    broker.push(C2P, b"a")
    svc.step()
    sink.close()
    sink2 = JsonlLogSink(path)
    broker, svc = make_service(sink=sink2)
    broker.push(C2P, b"b")
    svc.step()
    sink2.close()
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert [d["seq"] for d in lines] == [0, 1]


def test_harvest_examples(tmp_path):
    broker, svc = make_service()
    svc.harvest_dir = tmp_path / "h"
    for i in range(5):
        broker.push(C2P, bytes([i, i + 1]))
        svc.step()
    files = sorted((tmp_path / "h").iterdir())
    assert len(files) == 3
    t = PromptTemplates.load  # harvested files parse as examples
    from semfuzz.mutator.prompts import parse_example

    assert parse_example(files[0].read_text()).final_output_hex == "0001"
    assert t


def test_service_run_reconnects(resp_server):
    from semfuzz.broker import RespBroker

    server, port = resp_server
    broker = RespBroker("127.0.0.1", port)
    svc = MutationService(broker, make_backend(BackendDescriptor()), 0, "toy")
    stop = threading.Event()
    t = threading.Thread(target=svc.run, args=(stop, 0.05))
    t.start()
    producer = RespBroker("127.0.0.1", port)
    producer.push(C2P, b"abc")
    got = producer.pop(P2C, 2.0)
    stop.set()
    t.join(5)
    assert got == b"abc"
    assert not t.is_alive()
