from __future__ import annotations

from typing import Optional

C2P = "C2P"
P2C = "P2C"
LIBRARY_INFO = "library_info"


class BrokerError(RuntimeError):
    pass


class Disconnected(BrokerError):
    """The broker cannot be reached or the handle was closed."""


BrokerUnavailable = Disconnected


class Broker:
    """Named FIFO queues plus a last-writer-wins context store.

    ``pop`` waits up to ``timeout`` seconds; ``None`` waits forever, 0 polls once.
    """

    endpoint: str
    connected: bool

    def push(self, queue: str, payload: bytes) -> None:
        raise NotImplementedError

    def push_bounded(self, queue: str, payload: bytes, bound: int) -> bool:
        """Push unless the queue already holds ``bound`` items."""
        if self.length(queue) >= bound:
            return False
        self.push(queue, payload)
        return True

    def pop(self, queue: str, timeout: Optional[float] = 0.0) -> Optional[bytes]:
        raise NotImplementedError

    def length(self, queue: str) -> int:
        raise NotImplementedError

    def set(self, key: str, value: bytes) -> None:
        raise NotImplementedError

    def get(self, key: str) -> Optional[bytes]:
        raise NotImplementedError

    def reconnect(self) -> None:
        pass

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# Free-function spellings of the handle operations.
def queue_push(handle: Broker, queue: str, payload: bytes) -> None:
    handle.push(queue, payload)


def queue_pop(handle: Broker, queue: str, timeout: Optional[float] = 0.0) -> Optional[bytes]:
    return handle.pop(queue, timeout)


def context_set(handle: Broker, key: str, value: bytes) -> None:
    handle.set(key, value)


def context_get(handle: Broker, key: str) -> Optional[bytes]:
    return handle.get(key)
