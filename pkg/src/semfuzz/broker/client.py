from __future__ import annotations

import math
import socket
import threading
import time
from typing import Optional

from semfuzz.broker.base import Broker, BrokerError, Disconnected
from semfuzz.broker.resp import RespError, RespParser, encode_command

POLL_INTERVAL = 0.01


class _Conn:
    __slots__ = ("sock", "parser")

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.parser = RespParser()

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class RespBroker(Broker):
    """Broker handle speaking RESP to a key-value server over TCP.

    Queues map onto lists: LPUSH at the head, RPOP/BRPOP from the tail, which
    keeps them FIFO. Waits under one second are emulated by polling RPOP.
    The handle keeps a small pool of connections, so a thread blocked in BRPOP
    does not stall other threads sharing it.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 6379, connect_timeout: float = 2.0):
        self.host = host
        self.port = port
        self.endpoint = f"{host}:{port}"
        self.connect_timeout = connect_timeout
        self._lock = threading.Lock()
        self._idle: list[_Conn] = []
        self._closed = False
        self.connected = False
        self._idle.append(self._connect())

    def _connect(self) -> _Conn:
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.connect_timeout)
        except OSError as e:
            self.connected = False
            raise Disconnected(f"cannot reach broker at {self.endpoint}: {e}") from e
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.connected = True
        return _Conn(sock)

    def _drop_idle(self) -> None:
        with self._lock:
            idle, self._idle = self._idle, []
        for c in idle:
            c.close()

    def reconnect(self) -> None:
        self._drop_idle()
        self._closed = False
        conn = self._connect()
        with self._lock:
            self._idle.append(conn)

    def close(self) -> None:
        self._closed = True
        self.connected = False
        self._drop_idle()

    def call(self, *args, read_timeout: Optional[float] = 30.0):
        if self._closed:
            raise Disconnected(f"handle for {self.endpoint} is closed")
        with self._lock:
            conn = self._idle.pop() if self._idle else None
        if conn is None:
            conn = self._connect()
        try:
            conn.sock.settimeout(read_timeout)
            conn.sock.sendall(encode_command(args))
            while True:
                reply = conn.parser.get()
                if reply is not RespParser.INCOMPLETE:
                    break
                chunk = conn.sock.recv(1 << 16)
                if not chunk:
                    raise ConnectionError("connection closed by broker")
                conn.parser.feed(chunk)
        except (OSError, ConnectionError) as e:
            conn.close()
            # the server is likely gone; idle siblings are stale too
            self._drop_idle()
            self.connected = False
            raise Disconnected(f"broker {self.endpoint}: {e}") from e
        with self._lock:
            if self._closed:
                conn.close()
            else:
                self._idle.append(conn)
        if isinstance(reply, RespError):
            raise BrokerError(str(reply))
        return reply

    def ping(self) -> bool:
        return self.call("PING") == "PONG"

    def push(self, queue: str, payload: bytes) -> None:
        self.call("LPUSH", queue, payload)

    def pop(self, queue: str, timeout: Optional[float] = 0.0) -> Optional[bytes]:
        if timeout is None:
            reply = self.call("BRPOP", queue, 0, read_timeout=None)
            return reply[1] if reply else None
        if timeout >= 1.0:
            secs = math.ceil(timeout)
            reply = self.call("BRPOP", queue, secs, read_timeout=secs + 5.0)
            return reply[1] if reply else None
        deadline = time.monotonic() + timeout
        while True:
            value = self.call("RPOP", queue)
            if value is not None:
                return value
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            time.sleep(min(POLL_INTERVAL, remaining))

    def length(self, queue: str) -> int:
        return int(self.call("LLEN", queue))

    def set(self, key: str, value: bytes) -> None:
        self.call("SET", key, value)

    def get(self, key: str) -> Optional[bytes]:
        return self.call("GET", key)
