"""Toy recursive-descent parser for a JSON subset.

Supports objects, arrays, strings with simple escapes, integers with an
optional fraction, and the literals true/false/null. Nesting deeper than
48 levels trips a planted crash.
"""

from __future__ import annotations

from semfuzz.targets.harness import Collector, ProbeTable, TargetCrash

MAX_DEPTH = 48

P = ProbeTable()

F_DOC = P.function("parse_document")
F_VALUE = P.function("parse_value")
F_OBJECT = P.function("parse_object")
F_ARRAY = P.function("parse_array")
F_STRING = P.function("parse_string")
F_NUMBER = P.function("parse_number")
F_LITERAL = P.function("parse_literal")

B_EMPTY_DOC = P.branch("empty_document")
B_TRAILING = P.branch("trailing_garbage")
B_DOC_OK = P.branch("document_ok")
B_BAD_VALUE = P.branch("unexpected_character")
B_EOF_IN_VALUE = P.branch("eof_in_value")
B_OBJ_EMPTY = P.branch("object_empty")
B_OBJ_KEY_NOT_STRING = P.branch("object_key_not_string")
B_OBJ_NO_COLON = P.branch("object_missing_colon")
B_OBJ_MORE = P.branch("object_more_members")
B_OBJ_BAD_SEP = P.branch("object_bad_separator")
B_ARR_EMPTY = P.branch("array_empty")
B_ARR_MORE = P.branch("array_more_elements")
B_ARR_BAD_SEP = P.branch("array_bad_separator")
B_STR_ESCAPE = P.branch("string_escape")
B_STR_BAD_ESCAPE = P.branch("string_bad_escape")
B_STR_UNTERMINATED = P.branch("string_unterminated")
B_STR_NON_ASCII = P.branch("string_non_ascii")
B_NUM_NEGATIVE = P.branch("number_negative")
B_NUM_FRACTION = P.branch("number_fraction")
B_NUM_BAD = P.branch("number_malformed")
B_LIT_TRUE = P.branch("literal_true")
B_LIT_FALSE = P.branch("literal_false")
B_LIT_NULL = P.branch("literal_null")
B_LIT_BAD = P.branch("literal_malformed")
B_DEEP = P.branch("nesting_deeper_than_8")

L_SKIP_WS = P.line("skip_whitespace")
L_OBJ_MEMBER = P.line("object_member")
L_ARR_ELEM = P.line("array_element")
L_STR_CHAR = P.line("string_char")
L_NUM_DIGITS = P.line("number_digits")
L_DEPTH_CHECK = P.line("depth_check")

R_OBJECT_LOOP = P.region("object_loop")
R_ARRAY_LOOP = P.region("array_loop")
R_STRING_LOOP = P.region("string_loop")
R_NUMBER = P.region("number_body")
R_DOC = P.region("document")

WS = b" \t\r\n"


class _Fail(Exception):
    pass


class _Parser:
    __slots__ = ("s", "i", "cov")

    def __init__(self, s: bytes, cov: Collector):
        self.s = s
        self.i = 0
        self.cov = cov

    def ws(self) -> None:
        s, i = self.s, self.i
        while i < len(s) and s[i] in WS:
            i += 1
        if i != self.i:
            self.cov.hit(L_SKIP_WS)
        self.i = i

    def peek(self) -> int:
        if self.i >= len(self.s):
            self.cov.hit(B_EOF_IN_VALUE)
            raise _Fail
        return self.s[self.i]

    def value(self, depth: int) -> None:
        cov = self.cov
        cov.hit(F_VALUE)
        cov.hit(L_DEPTH_CHECK)
        if depth > MAX_DEPTH:
            raise TargetCrash(f"nesting depth {depth} exceeds {MAX_DEPTH}")
        if depth == 9:
            cov.hit(B_DEEP)
        self.ws()
        c = self.peek()
        if c == 0x7B:  # {
            self.obj(depth)
        elif c == 0x5B:  # [
            self.arr(depth)
        elif c == 0x22:  # "
            self.string()
        elif c == 0x2D or 0x30 <= c <= 0x39:
            self.number()
        elif c in b"tfn":
            self.literal()
        else:
            cov.hit(B_BAD_VALUE)
            raise _Fail

    def obj(self, depth: int) -> None:
        cov = self.cov
        cov.hit(F_OBJECT)
        self.i += 1
        self.ws()
        if self.peek() == 0x7D:
            cov.hit(B_OBJ_EMPTY)
            self.i += 1
            return
        cov.hit(R_OBJECT_LOOP)
        while True:
            cov.hit(L_OBJ_MEMBER)
            self.ws()
            if self.peek() != 0x22:
                cov.hit(B_OBJ_KEY_NOT_STRING)
                raise _Fail
            self.string()
            self.ws()
            if self.peek() != 0x3A:
                cov.hit(B_OBJ_NO_COLON)
                raise _Fail
            self.i += 1
            self.value(depth + 1)
            self.ws()
            c = self.peek()
            self.i += 1
            if c == 0x2C:
                cov.hit(B_OBJ_MORE)
                continue
            if c == 0x7D:
                return
            cov.hit(B_OBJ_BAD_SEP)
            raise _Fail

    def arr(self, depth: int) -> None:
        cov = self.cov
        cov.hit(F_ARRAY)
        self.i += 1
        self.ws()
        if self.peek() == 0x5D:
            cov.hit(B_ARR_EMPTY)
            self.i += 1
            return
        cov.hit(R_ARRAY_LOOP)
        while True:
            cov.hit(L_ARR_ELEM)
            self.value(depth + 1)
            self.ws()
            c = self.peek()
            self.i += 1
            if c == 0x2C:
                cov.hit(B_ARR_MORE)
                continue
            if c == 0x5D:
                return
            cov.hit(B_ARR_BAD_SEP)
            raise _Fail

    def string(self) -> None:
        cov = self.cov
        cov.hit(F_STRING)
        cov.hit(R_STRING_LOOP)
        s = self.s
        i = self.i + 1
        while True:
            if i >= len(s):
                cov.hit(B_STR_UNTERMINATED)
                raise _Fail
            c = s[i]
            if c == 0x22:
                self.i = i + 1
                return
            cov.hit(L_STR_CHAR)
            if c == 0x5C:
                cov.hit(B_STR_ESCAPE)
                if i + 1 >= len(s) or s[i + 1] not in b'"\\/bfnrt':
                    cov.hit(B_STR_BAD_ESCAPE)
                    raise _Fail
                i += 2
                continue
            if c >= 0x80:
                cov.hit(B_STR_NON_ASCII)
            i += 1

    def number(self) -> None:
        cov = self.cov
        cov.hit(F_NUMBER)
        cov.hit(R_NUMBER)
        s, i = self.s, self.i
        if s[i] == 0x2D:
            cov.hit(B_NUM_NEGATIVE)
            i += 1
        start = i
        while i < len(s) and 0x30 <= s[i] <= 0x39:
            i += 1
        if i == start:
            cov.hit(B_NUM_BAD)
            raise _Fail
        cov.hit(L_NUM_DIGITS)
        if i < len(s) and s[i] == 0x2E:
            cov.hit(B_NUM_FRACTION)
            i += 1
            start = i
            while i < len(s) and 0x30 <= s[i] <= 0x39:
                i += 1
            if i == start:
                cov.hit(B_NUM_BAD)
                raise _Fail
        self.i = i

    def literal(self) -> None:
        cov = self.cov
        cov.hit(F_LITERAL)
        for word, probe in ((b"true", B_LIT_TRUE), (b"false", B_LIT_FALSE), (b"null", B_LIT_NULL)):
            if self.s.startswith(word, self.i):
                cov.hit(probe)
                self.i += len(word)
                return
        cov.hit(B_LIT_BAD)
        raise _Fail


def parse(data: bytes, cov: Collector) -> None:
    cov.hit(F_DOC)
    p = _Parser(data, cov)
    p.ws()
    if p.i >= len(data):
        cov.hit(B_EMPTY_DOC)
        return
    cov.hit(R_DOC)
    try:
        p.value(1)
        p.ws()
        if p.i != len(data):
            cov.hit(B_TRAILING)
            return
        cov.hit(B_DOC_OK)
    except _Fail:
        return


LIBRARY_INFO = (
    "minijson: a small recursive-descent JSON parser. It accepts objects, arrays, "
    "double-quoted strings with backslash escapes (\\\" \\\\ \\/ \\b \\f \\n \\r \\t), "
    "integers with an optional '.digits' fraction and optional leading '-', and the "
    "literals true, false and null. Whitespace is space, tab, CR and LF. Trailing "
    "bytes after the top-level value are rejected."
)

DICTIONARY = (b"{", b"}", b"[", b"]", b'"', b":", b",", b"true", b"false", b"null")

SEEDS = {
    "object.json": b'{"name": "semfuzz", "tags": ["a", "b"], "n": -12.5, "ok": true}',
    "array.json": b'[1, 2, [3, null], {"k": false}]',
}
