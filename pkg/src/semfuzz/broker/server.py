"""Minimal RESP list/string server for hermetic runs.

Supports PING, LPUSH, RPUSH, LPOP, RPOP, BRPOP (single key), LLEN, GET, SET.
All commands run on one asyncio event loop.
"""

from __future__ import annotations

import asyncio
import logging
import threading
from collections import deque
from typing import Optional

from semfuzz.broker.resp import (
    ProtocolError,
    RespParser,
    encode_array,
    encode_bulk,
    encode_error,
    encode_integer,
    encode_simple,
)

log = logging.getLogger(__name__)

READ_BUFFER_CAP = 4 * 1024 * 1024


class WrongType(Exception):
    pass


class _Store:
    def __init__(self) -> None:
        self.lists: dict[bytes, deque] = {}
        self.strings: dict[bytes, bytes] = {}
        self.waiters: dict[bytes, deque] = {}

    def _list(self, key: bytes, create: bool = False) -> Optional[deque]:
        if key in self.strings:
            raise WrongType
        lst = self.lists.get(key)
        if lst is None and create:
            lst = self.lists[key] = deque()
        return lst

    def _gc(self, key: bytes) -> None:
        if key in self.lists and not self.lists[key]:
            del self.lists[key]

    def push(self, key: bytes, values, left: bool) -> int:
        lst = self._list(key, create=True)
        for v in values:
            if left:
                lst.appendleft(v)
            else:
                lst.append(v)
        n = len(lst)
        self._wake(key)
        return n

    def _wake(self, key: bytes) -> None:
        waiters = self.waiters.get(key)
        lst = self.lists.get(key)
        while waiters and lst:
            fut = waiters.popleft()
            if not fut.done():
                fut.set_result(lst.pop())
        if waiters is not None and not waiters:
            del self.waiters[key]
        self._gc(key)

    def pop(self, key: bytes, right: bool) -> Optional[bytes]:
        lst = self._list(key)
        if not lst:
            return None
        v = lst.pop() if right else lst.popleft()
        self._gc(key)
        return v

    def length(self, key: bytes) -> int:
        lst = self._list(key)
        return len(lst) if lst else 0

    def set(self, key: bytes, value: bytes) -> None:
        self.lists.pop(key, None)
        self.strings[key] = value

    def get(self, key: bytes) -> Optional[bytes]:
        if key in self.lists:
            raise WrongType
        return self.strings.get(key)


WRONGTYPE = encode_error("WRONGTYPE Operation against a key holding the wrong kind of value")


class BrokerServer:
    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.host = host
        self.port = port
        self.store = _Store()
        self._server: Optional[asyncio.AbstractServer] = None
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._thread: Optional[threading.Thread] = None
        self._ready = threading.Event()
        self._connections: set = set()

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        parser = RespParser(max_buffer=READ_BUFFER_CAP)
        task = asyncio.current_task()
        self._connections.add(task)
        try:
            while True:
                data = await reader.read(1 << 16)
                if not data:
                    break
                try:
                    parser.feed(data)
                    while True:
                        cmd = parser.get()
                        if cmd is RespParser.INCOMPLETE:
                            break
                        if not isinstance(cmd, list) or not cmd or not all(isinstance(a, bytes) for a in cmd):
                            raise ProtocolError("expected an array of bulk strings")
                        writer.write(await self._dispatch(cmd))
                except ProtocolError as e:
                    writer.write(encode_error(f"ERR Protocol error: {e}"))
                    await writer.drain()
                    break
                await writer.drain()
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            self._connections.discard(task)
            writer.close()

    async def _dispatch(self, cmd: list) -> bytes:
        name = cmd[0].upper()
        args = cmd[1:]
        st = self.store
        try:
            if name == b"PING":
                if len(args) > 1:
                    return _arity(name)
                return encode_bulk(args[0]) if args else encode_simple("PONG")
            if name in (b"LPUSH", b"RPUSH"):
                if len(args) < 2:
                    return _arity(name)
                return encode_integer(st.push(args[0], args[1:], left=name == b"LPUSH"))
            if name in (b"LPOP", b"RPOP"):
                if len(args) != 1:
                    return _arity(name)
                return encode_bulk(st.pop(args[0], right=name == b"RPOP"))
            if name == b"BRPOP":
                if len(args) != 2:
                    return _arity(name)
                return await self._brpop(args[0], args[1])
            if name == b"LLEN":
                if len(args) != 1:
                    return _arity(name)
                return encode_integer(st.length(args[0]))
            if name == b"SET":
                if len(args) != 2:
                    return _arity(name)
                st.set(args[0], args[1])
                return encode_simple("OK")
            if name == b"GET":
                if len(args) != 1:
                    return _arity(name)
                return encode_bulk(st.get(args[0]))
        except WrongType:
            return WRONGTYPE
        return encode_error(f"ERR unknown command '{name.decode('utf-8', 'replace')}'")

    async def _brpop(self, key: bytes, raw_timeout: bytes) -> bytes:
        try:
            timeout = float(raw_timeout)
        except ValueError:
            return encode_error("ERR timeout is not a float or out of range")
        if timeout < 0:
            return encode_error("ERR timeout is negative")
        value = self.store.pop(key, right=True)
        if value is not None:
            return encode_array([key, value])
        fut = asyncio.get_running_loop().create_future()
        self.store.waiters.setdefault(key, deque()).append(fut)
        try:
            value = await asyncio.wait_for(asyncio.shield(fut), timeout or None)
        except asyncio.TimeoutError:
            if fut.done():  # value handed over while we were timing out
                return encode_array([key, fut.result()])
            return encode_array(None)
        finally:
            if not fut.done():
                fut.cancel()
                self._forget(key, fut)
        return encode_array([key, value])

    def _forget(self, key: bytes, fut) -> None:
        waiters = self.store.waiters.get(key)
        if waiters is None:
            return
        try:
            waiters.remove(fut)
        except ValueError:
            pass
        if not waiters:
            del self.store.waiters[key]

    async def _start(self) -> None:
        self._server = await asyncio.start_server(self._handle, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]

    def serve_forever(self) -> None:
        async def main() -> None:
            await self._start()
            log.info("broker listening on %s:%d", self.host, self.port)
            async with self._server:
                await self._server.serve_forever()

        asyncio.run(main())

    def start(self) -> int:
        """Run on a daemon thread; returns the bound port."""
        failure: list = []

        def run() -> None:
            loop = asyncio.new_event_loop()
            asyncio.set_event_loop(loop)
            try:
                loop.run_until_complete(self._start())
            except OSError as e:
                failure.append(e)
                self._ready.set()
                loop.close()
                return
            self._loop = loop
            self._ready.set()
            loop.run_forever()
            loop.run_until_complete(self._shutdown())
            loop.close()

        self._thread = threading.Thread(target=run, name="semfuzz-broker", daemon=True)
        self._thread.start()
        self._ready.wait(5)
        if failure:
            raise failure[0]
        return self.port

    async def _shutdown(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        # includes handlers accepted but not yet started
        pending = [t for t in asyncio.all_tasks() if t is not asyncio.current_task()]
        for task in pending:
            task.cancel()
        if pending:
            await asyncio.gather(*pending, return_exceptions=True)

    def stop(self) -> None:
        loop, self._loop = self._loop, None
        if loop is not None and not loop.is_closed():
            try:
                loop.call_soon_threadsafe(loop.stop)
            except RuntimeError:
                pass  # loop already closed
        if self._thread is not None:
            self._thread.join(5)
            self._thread = None

    def __enter__(self) -> "BrokerServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def _arity(name: bytes) -> bytes:
    return encode_error(f"ERR wrong number of arguments for '{name.decode().lower()}' command")
