"""Toy length-prefixed chunk format.

Layout: ``CHNK`` magic, then chunks of ``[type:4][len:4 LE][payload:len]``.
Planted bugs: a ``BUG!`` chunk declaring more than 64 bytes overflows a
fixed buffer (crash); a ``HNG!`` chunk spins forever (hang).
"""

from __future__ import annotations

from semfuzz.targets.harness import Collector, ProbeTable, TargetCrash

P = ProbeTable()

F_PARSE = P.function("parse_file")
F_CHUNK = P.function("parse_chunk")
F_HEAD = P.function("on_head")
F_DATA = P.function("on_data")
F_TEXT = P.function("on_text")
F_BUG = P.function("on_bug")
F_HANG = P.function("on_hang")

B_SHORT = P.branch("input_shorter_than_magic")
B_MAGIC = [P.branch(f"magic_byte_{i}_ok") for i in range(4)]
B_MAGIC_BAD = P.branch("magic_mismatch")
B_EOF = P.branch("clean_eof")
B_TRUNC_HDR = P.branch("truncated_chunk_header")
B_TRUNC_BODY = P.branch("truncated_chunk_body")
B_UNKNOWN = P.branch("unknown_chunk_type")
B_HEAD_SHORT = P.branch("head_too_short")
B_HEAD_VERSION_OK = P.branch("head_version_ok")
B_HEAD_VERSION_BAD = P.branch("head_version_bad")
B_HEAD_DUP = P.branch("head_duplicate")
B_HEAD_ZERO_DIM = P.branch("head_zero_dimension")
B_HEAD_BIG = P.branch("head_large_dimensions")
B_HEAD_INTERLACED = P.branch("head_interlaced_flag")
B_DATA_BEFORE_HEAD = P.branch("data_before_head")
B_DATA_EMPTY = P.branch("data_empty")
B_DATA_CKSUM_ZERO = P.branch("data_checksum_zero")
B_DATA_CKSUM_ODD = P.branch("data_checksum_odd")
B_DATA_CKSUM_EVEN = P.branch("data_checksum_even")
B_DATA_RLE = P.branch("data_run_detected")
B_TEXT_PRINTABLE = P.branch("text_printable")
B_TEXT_BINARY = P.branch("text_binary")
B_TEXT_KEYWORD = P.branch("text_keyword")
B_END_TRAILING = P.branch("end_with_trailing_bytes")
B_BUG_SMALL = P.branch("bug_len_within_buffer")
B_MANY_CHUNKS = P.branch("more_than_eight_chunks")
B_NO_HEAD = P.branch("file_without_head")

L_MAGIC_OK = P.line("magic_ok")
L_CHUNK_HDR = P.line("read_chunk_header")
L_HEAD_FIELDS = P.line("read_head_fields")
L_DATA_SUM = P.line("sum_data")
L_TEXT_SCAN = P.line("scan_text")
L_END = P.line("end_chunk")
L_SKIP = P.line("skip_chunk")
L_BUG_COPY = P.line("bug_copy")
L_HANG_SPIN = P.line("hang_spin")
L_DONE = P.line("parse_done")

R_BODY = P.region("chunk_loop")
R_HEAD = P.region("head_block")
R_DATA = P.region("data_block")
R_TEXT = P.region("text_block")
R_END = P.region("end_block")
R_BUG = P.region("bug_block")
R_HANG = P.region("hang_block")

KNOWN_TYPES = (b"HEAD", b"DATA", b"TEXT", b"END!", b"BUG!", b"HNG!")


def _build_trie():
    # Each matched prefix of a chunk type gets its own branch probe so that
    # partial matches register as progress.
    trie: dict = {}
    for t in KNOWN_TYPES:
        node = trie
        for i in range(4):
            if t[i] not in node:
                node[t[i]] = (P.branch(f"type_prefix_{t[: i + 1].decode()}"), {})
            node = node[t[i]][1]
    return trie


TYPE_TRIE = _build_trie()


def _dispatch(ctype: bytes, cov: Collector):
    node = TYPE_TRIE
    for i in range(4):
        entry = node.get(ctype[i])
        if entry is None:
            cov.hit(B_UNKNOWN)
            return None
        cov.hit(entry[0])
        node = entry[1]
    return ctype


def parse(data: bytes, cov: Collector) -> None:
    cov.hit(F_PARSE)
    n = len(data)
    if n < 4:
        if n:
            cov.hit(B_SHORT)
        return
    for i, ch in enumerate(b"CHNK"):
        if data[i] != ch:
            cov.hit(B_MAGIC_BAD)
            return
        cov.hit(B_MAGIC[i])
    cov.hit(L_MAGIC_OK)
    cov.hit(R_BODY)

    off = 4
    chunks = 0
    have_head = False
    while True:
        if off == n:
            cov.hit(B_EOF)
            break
        if n - off < 8:
            cov.hit(B_TRUNC_HDR)
            break
        cov.hit(F_CHUNK)
        cov.hit(L_CHUNK_HDR)
        ctype = data[off : off + 4]
        clen = int.from_bytes(data[off + 4 : off + 8], "little")
        off += 8
        chunks += 1
        if chunks == 9:
            cov.hit(B_MANY_CHUNKS)
        kind = _dispatch(ctype, cov)

        if kind == b"BUG!":
            cov.hit(F_BUG)
            cov.hit(R_BUG)
            if clen > 64:
                raise TargetCrash("BUG! chunk overflows 64-byte buffer")
            cov.hit(B_BUG_SMALL)
            cov.hit(L_BUG_COPY)
        elif kind == b"HNG!":
            cov.hit(F_HANG)
            cov.hit(R_HANG)
            cov.hit(L_HANG_SPIN)
            while True:
                cov.tick()

        if clen > n - off:
            cov.hit(B_TRUNC_BODY)
            break
        body = data[off : off + clen]
        off += clen

        if kind == b"HEAD":
            cov.hit(F_HEAD)
            cov.hit(R_HEAD)
            if have_head:
                cov.hit(B_HEAD_DUP)
            have_head = True
            if clen < 8:
                cov.hit(B_HEAD_SHORT)
                continue
            cov.hit(L_HEAD_FIELDS)
            version = body[0]
            width = int.from_bytes(body[2:4], "little")
            height = int.from_bytes(body[4:6], "little")
            if version in (1, 2):
                cov.hit(B_HEAD_VERSION_OK)
            else:
                cov.hit(B_HEAD_VERSION_BAD)
            if width == 0 or height == 0:
                cov.hit(B_HEAD_ZERO_DIM)
            elif width * height > 4096:
                cov.hit(B_HEAD_BIG)
            if body[1] & 0x01:
                cov.hit(B_HEAD_INTERLACED)
        elif kind == b"DATA":
            cov.hit(F_DATA)
            cov.hit(R_DATA)
            if not have_head:
                cov.hit(B_DATA_BEFORE_HEAD)
            if not body:
                cov.hit(B_DATA_EMPTY)
                continue
            cov.hit(L_DATA_SUM)
            s = sum(body) & 0xFF
            if s == 0:
                cov.hit(B_DATA_CKSUM_ZERO)
            elif s & 1:
                cov.hit(B_DATA_CKSUM_ODD)
            else:
                cov.hit(B_DATA_CKSUM_EVEN)
            if len(body) >= 4 and body[0] == body[1] == body[2] == body[3]:
                cov.hit(B_DATA_RLE)
        elif kind == b"TEXT":
            cov.hit(F_TEXT)
            cov.hit(R_TEXT)
            cov.hit(L_TEXT_SCAN)
            if all(32 <= b < 127 for b in body):
                cov.hit(B_TEXT_PRINTABLE)
                if body.startswith(b"fuzz"):
                    cov.hit(B_TEXT_KEYWORD)
            else:
                cov.hit(B_TEXT_BINARY)
        elif kind == b"END!":
            cov.hit(R_END)
            cov.hit(L_END)
            if off != n:
                cov.hit(B_END_TRAILING)
            break
        else:
            cov.hit(L_SKIP)

    if not have_head:
        cov.hit(B_NO_HEAD)
    cov.hit(L_DONE)


LIBRARY_INFO = (
    "chunkfmt: a chunked binary container. A file starts with the 4-byte magic "
    "'CHNK' followed by chunks laid out as [type: 4 ASCII bytes][length: uint32 "
    "little-endian][payload: length bytes]. Known chunk types are HEAD (8+ bytes: "
    "version u8, flags u8, width u16le, height u16le, reserved u16), DATA (raw "
    "bytes, 8-bit additive checksum), TEXT (printable ASCII) and END! (terminator). "
    "Unknown chunk types are skipped using their length field."
)

# Every constant the parser compares input bytes against, the way a
# compiler-extracted auto-dictionary would list them.
DICTIONARY = (b"CHNK",) + KNOWN_TYPES + (b"fuzz",)


def make_seed() -> bytes:
    head = bytes([1, 0]) + (16).to_bytes(2, "little") + (16).to_bytes(2, "little") + b"\x00\x00"
    text = b"hello"
    data = bytes(range(16))
    return (
        b"CHNK"
        + b"HEAD" + len(head).to_bytes(4, "little") + head
        + b"TEXT" + len(text).to_bytes(4, "little") + text
        + b"DATA" + len(data).to_bytes(4, "little") + data
        + b"END!" + (0).to_bytes(4, "little")
    )
