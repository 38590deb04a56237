"""LLM backends: an HTTP chat client and three mocks."""

from __future__ import annotations

import logging
import os
import random
from typing import Optional

import httpx

from semfuzz.clock import WallClock
from semfuzz.model import BackendDescriptor, BackendKind, QueryStatus
from semfuzz.mutator.codec import hex_decode_lenient, hex_encode
from semfuzz.mutator.parsing import LlmResponse, parse_response
from semfuzz.mutator.prompts import PromptBundle

log = logging.getLogger(__name__)

BACKEND_URL_ENV = "SEMFUZZ_BACKEND_URL"
MODEL_ENV = "SEMFUZZ_MODEL"


def wrap_response(analysis: str, hex_out: str) -> str:
    return f"Analysis:\n{analysis}\n\nFinal Output:\n{hex_out}\n"


class Backend:
    def __init__(self, descriptor: BackendDescriptor, clock=None):
        self.descriptor = descriptor
        self.clock = clock or WallClock()

    def query(self, prompt: PromptBundle) -> LlmResponse:
        start = self.clock.now()
        raw = self.complete(prompt)
        latency = (self.clock.now() - start) / 1e9
        if isinstance(raw, LlmResponse):
            return LlmResponse(raw.raw_text, raw.status, latency=latency)
        return parse_response(raw, latency)

    def complete(self, prompt: PromptBundle):
        """Return raw response text, or an LlmResponse carrying a failure status."""
        raise NotImplementedError

    def close(self) -> None:
        pass


class IdentityBackend(Backend):
    def complete(self, prompt: PromptBundle) -> str:
        return wrap_response("Identity backend: the input buffer is returned unchanged.", prompt.input_hex)


class MutatorBackend(Backend):
    """Seeded byte-level mutation of the decoded head."""

    def __init__(self, descriptor: BackendDescriptor, clock=None, seed: Optional[int] = None):
        super().__init__(descriptor, clock)
        self.rng = random.Random(descriptor.rng_seed if seed is None else seed)

    def mutate(self, data: bytes) -> tuple[bytes, list[str]]:
        rng = self.rng
        buf = bytearray(data)
        notes = []
        for _ in range(rng.randint(1, 4)):
            if not buf:
                buf.append(rng.randrange(256))
                notes.append("inserted a byte into the empty buffer")
                continue
            op = rng.randrange(6)
            pos = rng.randrange(len(buf))
            if op == 0:
                buf[pos] = rng.randrange(256)
                notes.append(f"replaced byte {pos}")
            elif op == 1:
                buf.insert(pos, rng.randrange(256))
                notes.append(f"inserted a byte at {pos}")
            elif op == 2 and len(buf) > 1:
                del buf[pos]
                notes.append(f"deleted byte {pos}")
            elif op == 3:
                buf[pos] ^= 1 << rng.randrange(8)
                notes.append(f"flipped a bit in byte {pos}")
            elif op == 4:
                n = rng.randint(1, 8)
                buf[pos:pos] = buf[pos : pos + n]
                notes.append(f"duplicated {n} bytes at {pos}")
            else:
                other = rng.randrange(len(buf))
                buf[pos], buf[other] = buf[other], buf[pos]
                notes.append(f"swapped bytes {pos} and {other}")
        return bytes(buf), notes

    def complete(self, prompt: PromptBundle) -> str:
        head = hex_decode_lenient(prompt.input_hex)
        out, notes = self.mutate(head)
        analysis = "Mock mutator: " + "; ".join(notes) + "."
        return wrap_response(analysis, hex_encode(out))


class ChaosBackend(Backend):
    """Draws timeouts, format mismatches, corrupt hex and duplicates by rate."""

    def __init__(self, descriptor: BackendDescriptor, clock=None):
        super().__init__(descriptor, clock)
        self.rng = random.Random(descriptor.rng_seed)
        self.inner = MutatorBackend(descriptor, self.clock, seed=descriptor.rng_seed + 1)
        self.last_ok: Optional[str] = None

    def complete(self, prompt: PromptBundle):
        d = self.descriptor
        u = self.rng.random()
        if u < d.timeout_rate:
            self.clock.sleep(d.request_timeout)
            return LlmResponse("", QueryStatus.TIMEOUT)
        u -= d.timeout_rate
        if u < d.mismatch_rate:
            return "Analysis:\nThe buffer looks like a chunked container; I changed a length field.\n"
        u -= d.mismatch_rate
        if u < d.oddhex_rate:
            return wrap_response("Corrupted output.", prompt.input_hex[:-1] + "zz")
        if self.last_ok is not None and self.rng.random() < d.dup_rate:
            return self.last_ok
        raw = self.inner.complete(prompt)
        self.last_ok = raw
        return raw


class HttpChatBackend(Backend):
    """POSTs a chat-completion request; understands Ollama and OpenAI reply shapes."""

    def __init__(self, descriptor: BackendDescriptor, clock=None, transport: Optional[httpx.BaseTransport] = None):
        super().__init__(descriptor, clock)
        self.client = httpx.Client(timeout=descriptor.request_timeout, transport=transport)

    def request_body(self, prompt: PromptBundle) -> dict:
        d = self.descriptor
        return {
            "model": d.model,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
            "temperature": d.temperature,
            "options": {"temperature": d.temperature},
            "stream": False,
        }

    def complete(self, prompt: PromptBundle):
        try:
            resp = self.client.post(self.descriptor.endpoint, json=self.request_body(prompt))
        except httpx.TimeoutException:
            return LlmResponse("", QueryStatus.TIMEOUT)
        except httpx.HTTPError as e:
            log.warning("backend transport error: %s", e)
            return LlmResponse("", QueryStatus.EMPTY)
        if resp.status_code != 200:
            log.warning("backend returned HTTP %d", resp.status_code)
            return LlmResponse("", QueryStatus.EMPTY)
        try:
            data = resp.json()
        except ValueError:
            return LlmResponse("", QueryStatus.EMPTY)
        return extract_content(data)

    def close(self) -> None:
        self.client.close()


def extract_content(data) -> str:
    if not isinstance(data, dict):
        return ""
    msg = data.get("message")
    if isinstance(msg, dict) and isinstance(msg.get("content"), str):
        return msg["content"]
    choices = data.get("choices")
    if isinstance(choices, list) and choices:
        msg = choices[0].get("message") if isinstance(choices[0], dict) else None
        if isinstance(msg, dict) and isinstance(msg.get("content"), str):
            return msg["content"]
    if isinstance(data.get("response"), str):
        return data["response"]
    return ""


def make_backend(descriptor: BackendDescriptor, clock=None) -> Backend:
    kind = descriptor.kind
    if kind is BackendKind.MOCK_IDENTITY:
        return IdentityBackend(descriptor, clock)
    if kind is BackendKind.MOCK_MUTATOR:
        return MutatorBackend(descriptor, clock)
    if kind is BackendKind.MOCK_CHAOS:
        return ChaosBackend(descriptor, clock)
    if kind is BackendKind.HTTP_CHAT:
        return HttpChatBackend(descriptor, clock)
    raise ValueError(f"unknown backend kind {kind}")


def query_backend(descriptor: BackendDescriptor, prompt: PromptBundle) -> LlmResponse:
    backend = make_backend(descriptor)
    try:
        return backend.query(prompt)
    finally:
        backend.close()


def http_descriptor_from_env(**overrides) -> BackendDescriptor:
    return BackendDescriptor(
        kind=BackendKind.HTTP_CHAT,
        endpoint=overrides.pop("endpoint", None) or os.environ.get(BACKEND_URL_ENV),
        model=overrides.pop("model", None) or os.environ.get(MODEL_ENV),
        **overrides,
    )

