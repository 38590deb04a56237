"""Mutation service: prompt construction, LLM backends, response parsing."""

from semfuzz.mutator.backends import (
    Backend,
    ChaosBackend,
    HttpChatBackend,
    IdentityBackend,
    MutatorBackend,
    make_backend,
    query_backend,
)
from semfuzz.mutator.codec import HexError, SplitBuffer, hex_decode_lenient, hex_encode, recombine, split_buffer
from semfuzz.mutator.parsing import LlmResponse, parse_response
from semfuzz.mutator.prompts import Example, PromptBundle, PromptTemplates, TemplateError, build_prompt
from semfuzz.mutator.service import JsonlLogSink, MutationService, service_loop

__all__ = [
    "Backend",
    "ChaosBackend",
    "Example",
    "HexError",
    "HttpChatBackend",
    "IdentityBackend",
    "JsonlLogSink",
    "LlmResponse",
    "MutationService",
    "MutatorBackend",
    "PromptBundle",
    "PromptTemplates",
    "SplitBuffer",
    "TemplateError",
    "build_prompt",
    "hex_decode_lenient",
    "hex_encode",
    "make_backend",
    "parse_response",
    "query_backend",
    "recombine",
    "service_loop",
    "split_buffer",
]
