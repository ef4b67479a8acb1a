"""Point-to-point channels between the master and each worker.

Two flavours carry the same encoded frames: in-process queues (workers run
as threads) and TCP sockets (workers run as separate processes).
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
import traceback

from . import wire

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 600.0


class WorkerLostError(RuntimeError):
    """A peer vanished or stopped answering; the run cannot continue."""


class QueueChannel:
    """One end of an in-process duplex pipe. Frames travel as encoded bytes."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout=DEFAULT_TIMEOUT):
        self._inbox = inbox
        self._outbox = outbox
        self.timeout = timeout

    def send(self, msg: wire.Message):
        self._outbox.put(wire.encode(msg))

    def send_raw(self, item):
        self._outbox.put(item)

    def recv(self) -> wire.Message:
        try:
            item = self._inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise WorkerLostError(f"no frame within {self.timeout}s") from None
        if isinstance(item, BaseException):
            raise WorkerLostError(f"peer failed: {item!r}") from item
        return wire.decode(item)

    def close(self):
        pass


def queue_pipe(timeout=DEFAULT_TIMEOUT):
    a, b = queue.Queue(), queue.Queue()
    return QueueChannel(a, b, timeout), QueueChannel(b, a, timeout)


class ThreadWorkers:
    """Run ``target(channel, worker_id)`` for every worker on its own thread."""

    def __init__(self, n_workers, target, timeout=DEFAULT_TIMEOUT):
        self.master_channels = []
        self.threads = []
        for j in range(n_workers):
            master_end, worker_end = queue_pipe(timeout)
            self.master_channels.append(master_end)
            th = threading.Thread(target=self._guard, args=(target, worker_end, j), name=f"worker-{j}", daemon=True)
            self.threads.append(th)

    @staticmethod
    def _guard(target, channel, j):
        try:
            target(channel, j)
        except BaseException as exc:  # surfaced on the master side
            log.error("worker %d failed:\n%s", j, traceback.format_exc())
            channel.send_raw(exc)

    def start(self):
        for th in self.threads:
            th.start()
        return self.master_channels

    def join(self, timeout=None):
        for th in self.threads:
            th.join(timeout)


class TcpChannel:
    def __init__(self, sock: socket.socket, timeout=DEFAULT_TIMEOUT):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(timeout)
        self.sock = sock

    def send(self, msg: wire.Message):
        try:
            self.sock.sendall(wire.encode(msg))
        except OSError as exc:
            raise WorkerLostError(f"send failed: {exc}") from exc

    def _recv_exact(self, size):
        chunks = []
        while size:
            try:
                chunk = self.sock.recv(min(size, 1 << 20))
            except OSError as exc:
                raise WorkerLostError(f"receive failed: {exc}") from exc
            if not chunk:
                raise WorkerLostError("connection closed by peer")
            chunks.append(chunk)
            size -= len(chunk)
        return b"".join(chunks)

    def recv(self) -> wire.Message:
        header = self._recv_exact(wire.HEADER_SIZE)
        _, _, _, count = wire.decode_header(header)
        return wire.decode(header + self._recv_exact(8 * count))

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


def parse_address(text):
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


class TcpListener:
    """Master-side socket. Bind first so that port 0 resolves before workers start."""

    def __init__(self, host="127.0.0.1", port=0, timeout=DEFAULT_TIMEOUT):
        self.timeout = timeout
        self.sock = socket.create_server((host, port))
        self.sock.settimeout(timeout)

    @property
    def address(self):
        host, port = self.sock.getsockname()[:2]
        return f"{host}:{port}"

    def accept_workers(self, n_workers):
        """Accept ``n_workers`` connections and return channels ordered by worker id."""
        channels = [None] * n_workers
        deadline = time.monotonic() + self.timeout
        while any(ch is None for ch in channels):
            self.sock.settimeout(max(deadline - time.monotonic(), 0.001))
            try:
                conn, _ = self.sock.accept()
            except OSError as exc:
                missing = [j for j, ch in enumerate(channels) if ch is None]
                raise WorkerLostError(f"workers {missing} never connected: {exc}") from exc
            ch = TcpChannel(conn, self.timeout)
            hello = ch.recv()
            j = hello.round
            if hello.kind is not wire.Kind.CONTROL or not 0 <= j < n_workers or channels[j] is not None:
                ch.close()
                raise WorkerLostError(f"bad handshake from worker claiming id {j}")
            channels[j] = ch
        for ch in channels:
            ch.send(wire.Message.control(round=n_workers))
        return channels

    def close(self):
        self.sock.close()


def connect_worker(address, worker_id, timeout=DEFAULT_TIMEOUT, connect_timeout=30.0):
    """Connect to the master, retrying until it listens; returns ``(channel, n_workers)``."""
    host, port = parse_address(address)
    deadline = time.monotonic() + connect_timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=connect_timeout)
            break
        except OSError:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.05)
    ch = TcpChannel(sock, timeout)
    ch.send(wire.Message.control(round=worker_id))
    reply = ch.recv()
    if reply.kind is not wire.Kind.CONTROL:
        raise WorkerLostError("master did not acknowledge the handshake")
    return ch, reply.round
