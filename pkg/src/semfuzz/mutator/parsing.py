from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from semfuzz.model import QueryStatus
from semfuzz.mutator.codec import HexError, hex_decode_lenient

# Heading may be wrapped in markdown: "## Final Output:", "**Final Output**", ...
_FINAL_HEADING = re.compile(r"[#*_>\s]*final[\s_-]*output[*_\s]*:?[*_]*", re.IGNORECASE)
_ANALYSIS_HEADING = re.compile(r"[#*_>\s]*analysis[*_\s]*:?[*_]*", re.IGNORECASE)
_FENCE = re.compile(r"```[a-zA-Z0-9_-]*")


@dataclass(frozen=True)
class LlmResponse:
    raw_text: str
    status: QueryStatus
    analysis: Optional[str] = None
    final_output_hex: Optional[str] = None
    payload: Optional[bytes] = None
    latency: float = 0.0  # seconds


def extract_final_block(raw_text: str) -> Optional[str]:
    matches = list(_FINAL_HEADING.finditer(raw_text))
    if not matches:
        return None
    block = raw_text[matches[-1].end() :]
    block = _FENCE.sub("", block)
    block = block.replace("`", "")
    return "".join(block.split())


def parse_response(raw_text: str, latency: float = 0.0) -> LlmResponse:
    if not raw_text or not raw_text.strip():
        return LlmResponse(raw_text or "", QueryStatus.EMPTY, latency=latency)
    analysis = None
    finals = list(_FINAL_HEADING.finditer(raw_text))
    a = _ANALYSIS_HEADING.search(raw_text, 0, finals[-1].start() if finals else len(raw_text))
    if a:
        end = finals[-1].start() if finals else len(raw_text)
        analysis = raw_text[a.end() : end].strip() or None
    block = extract_final_block(raw_text)
    if not block:
        return LlmResponse(raw_text, QueryStatus.FORMAT_MISMATCH, analysis=analysis, latency=latency)
    try:
        payload = hex_decode_lenient(block)
    except HexError:
        return LlmResponse(raw_text, QueryStatus.HEX_ERROR, analysis, block, latency=latency)
    return LlmResponse(raw_text, QueryStatus.OK, analysis, block, payload, latency)
