"""Bulk-synchronous master/worker runtime: frames, transports, accounting."""

from .comm import (
    CommStats,
    EpochComm,
    Master,
    ProtocolError,
    StopRun,
    WorkerEndpoint,
    expected_payload_entries,
)
from .transport import (
    QueueChannel,
    TcpChannel,
    TcpListener,
    ThreadWorkers,
    WorkerLostError,
    connect_worker,
    parse_address,
    queue_pipe,
)
from .wire import Kind, Message, decode, encode

__all__ = [
    "CommStats",
    "EpochComm",
    "Kind",
    "Master",
    "Message",
    "ProtocolError",
    "QueueChannel",
    "StopRun",
    "TcpChannel",
    "TcpListener",
    "ThreadWorkers",
    "WorkerEndpoint",
    "WorkerLostError",
    "connect_worker",
    "decode",
    "encode",
    "expected_payload_entries",
    "parse_address",
    "queue_pipe",
]
