from __future__ import annotations

import threading
import time
from collections import deque
from typing import Optional

from semfuzz.broker.base import Broker, Disconnected


class InProcessBroker(Broker):
    """Thread-safe named FIFO queues and a key/value store in one process."""

    endpoint = "inprocess"

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._queues: dict[str, deque] = {}
        self._kv: dict[str, bytes] = {}
        self.connected = True

    def _check(self) -> None:
        if not self.connected:
            raise Disconnected("in-process broker is closed")

    def push(self, queue: str, payload: bytes) -> None:
        with self._cond:
            self._check()
            self._queues.setdefault(queue, deque()).append(bytes(payload))
            self._cond.notify_all()

    def push_bounded(self, queue: str, payload: bytes, bound: int) -> bool:
        with self._cond:
            self._check()
            q = self._queues.setdefault(queue, deque())
            if len(q) >= bound:
                return False
            q.append(bytes(payload))
            self._cond.notify_all()
            return True

    def pop(self, queue: str, timeout: Optional[float] = 0.0) -> Optional[bytes]:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while True:
                self._check()
                q = self._queues.get(queue)
                if q:
                    return q.popleft()
                if deadline is None:
                    self._cond.wait()
                    continue
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self._cond.wait(remaining)

    def length(self, queue: str) -> int:
        with self._cond:
            self._check()
            q = self._queues.get(queue)
            return len(q) if q else 0

    def set(self, key: str, value: bytes) -> None:
        with self._cond:
            self._check()
            self._kv[key] = bytes(value)

    def get(self, key: str) -> Optional[bytes]:
        with self._cond:
            self._check()
            return self._kv.get(key)

    def close(self) -> None:
        with self._cond:
            self.connected = False
            self._cond.notify_all()
