"""Message fabric between the fuzz loop and the mutation service."""

from __future__ import annotations

import os
from typing import Optional

from semfuzz.broker.base import (
    C2P,
    LIBRARY_INFO,
    P2C,
    Broker,
    BrokerError,
    BrokerUnavailable,
    Disconnected,
    context_get,
    context_set,
    queue_pop,
    queue_push,
)
from semfuzz.broker.client import RespBroker
from semfuzz.broker.memory import InProcessBroker
from semfuzz.broker.server import BrokerServer
from semfuzz.model import parse_hostport

BROKER_ENV = "SEMFUZZ_BROKER_ADDR"

__all__ = [
    "BROKER_ENV",
    "C2P",
    "LIBRARY_INFO",
    "P2C",
    "Broker",
    "BrokerError",
    "BrokerServer",
    "BrokerUnavailable",
    "Disconnected",
    "InProcessBroker",
    "RespBroker",
    "connect",
    "context_get",
    "context_set",
    "queue_pop",
    "queue_push",
]


def connect(address: Optional[str]) -> Broker:
    """Open a handle for ``host:port``; falls back to ``$SEMFUZZ_BROKER_ADDR``."""
    address = address or os.environ.get(BROKER_ENV)
    if not address:
        raise ValueError(f"no broker address given and {BROKER_ENV} is unset")
    host, port = parse_hostport(address)
    return RespBroker(host, port)
