"""Bulk-synchronous master/worker rounds with exact traffic accounting.

A *round* is one gather (every worker sends to the master) closed by one
broadcast (the master sends the same frame to every worker). Both ends stamp
frames with ``(epoch, round)`` and reject anything out of step, which makes
the barrier explicit.

Accounting convention: a worker-to-master vector counts its length once, a
broadcast counts its length once per worker. Traffic the communication-cost
table does not model (line-search scalars, sign checks, atom broadcasts of
the baselines) is booked separately as *auxiliary*.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np

from .wire import HEADER_SIZE, Kind, Message, payload_length


class ProtocolError(RuntimeError):
    """A frame arrived with the wrong kind, stamp or length."""


class StopRun(Exception):
    """Raised on a worker when the master ends the run."""


@dataclass
class EpochComm:
    t: int
    rounds: int = 0
    payload_entries: int = 0
    aux_rounds: int = 0
    aux_entries: int = 0
    overhead_bytes: int = 0

    @property
    def payload_bytes(self):
        return 8 * self.payload_entries

    @property
    def aux_bytes(self):
        return 8 * self.aux_entries


@dataclass
class CommStats:
    epochs: List[EpochComm] = field(default_factory=list)
    # handshake and shutdown frames
    setup_overhead_bytes: int = 0

    def begin(self, t):
        rec = EpochComm(t)
        self.epochs.append(rec)
        return rec

    def for_epoch(self, t):
        for rec in self.epochs:
            if rec.t == t:
                return rec
        raise KeyError(t)

    @property
    def payload_entries(self):
        return sum(e.payload_entries for e in self.epochs)

    @property
    def payload_bytes(self):
        return 8 * self.payload_entries

    @property
    def aux_entries(self):
        return sum(e.aux_entries for e in self.epochs)

    @property
    def overhead_bytes(self):
        return self.setup_overhead_bytes + sum(e.overhead_bytes for e in self.epochs)

    def to_dict(self):
        return {
            "epochs": [dict(asdict(e), payload_bytes=e.payload_bytes) for e in self.epochs],
            "payload_entries": self.payload_entries,
            "payload_bytes": self.payload_bytes,
            "aux_entries": self.aux_entries,
            "overhead_bytes": self.overhead_bytes,
        }


def expected_payload_entries(algorithm, N, d, m, K=None):
    """Per-epoch payload of the communication-cost table for each algorithm."""
    if algorithm == "naive-dfw":
        return N * d * m
    if algorithm == "sva":
        return N * (d + m)
    if algorithm == "dfw-trace":
        if K is None:
            raise ValueError("dfw-trace needs the number of power iterations K")
        return 2 * N * K * (d + m)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def _check(msg, kind, epoch, rnd, d, m, who):
    if msg.kind is not kind:
        raise ProtocolError(f"{who}: expected {kind.name}, got {msg.kind.name}")
    if (msg.epoch, msg.round) != (epoch, rnd):
        raise ProtocolError(f"{who}: frame stamped ({msg.epoch}, {msg.round}), expected ({epoch}, {rnd})")
    if msg.payload.size != payload_length(kind, d, m):
        raise ProtocolError(f"{who}: {kind.name} payload has {msg.payload.size} values")


class Master:
    """Master side of the star topology; channels are indexed by worker id."""

    def __init__(self, channels, d, m):
        self.channels = list(channels)
        self.N = len(self.channels)
        self.d, self.m = d, m
        self.stats = CommStats()
        self.epoch = 0
        self.round = 0
        self._cur = None
        self._core_round = False

    def begin_epoch(self, t):
        self.epoch, self.round = t, 0
        self._cur = self.stats.begin(t)
        self._core_round = False

    def gather(self, kind, aux=False):
        """Receive one frame of ``kind`` from every worker, in worker order."""
        out = []
        for j, ch in enumerate(self.channels):
            msg = ch.recv()
            _check(msg, kind, self.epoch, self.round, self.d, self.m, f"worker {j}")
            out.append(msg.payload)
        entries = sum(p.size for p in out)
        if aux:
            self._cur.aux_entries += entries
        else:
            self._cur.payload_entries += entries
            self._core_round = True
        self._cur.overhead_bytes += self.N * HEADER_SIZE
        return out

    def aggregate_sum(self, kind, aux=False):
        """Sum of the workers' vectors, accumulated in fixed worker order."""
        parts = self.gather(kind, aux)
        total = parts[0].copy()
        for p in parts[1:]:
            total += p
        return total

    def broadcast(self, kind, payload, aux=False):
        """Send one frame to every worker and close the current round."""
        msg = Message(kind, self.epoch, self.round, payload)
        for ch in self.channels:
            ch.send(msg)
        entries = self.N * msg.payload.size
        if aux:
            self._cur.aux_entries += entries
        else:
            self._cur.payload_entries += entries
            self._core_round = True
        if self._core_round:
            self._cur.rounds += 1
        else:
            self._cur.aux_rounds += 1
        self._cur.overhead_bytes += self.N * HEADER_SIZE
        self._core_round = False
        self.round += 1

    def stop(self):
        """Tell every worker the run is over (early termination or normal end)."""
        msg = Message.control(self.epoch, self.round)
        for ch in self.channels:
            ch.send(msg)
        self.stats.setup_overhead_bytes += self.N * HEADER_SIZE


class WorkerEndpoint:
    """Worker side: stamps outgoing frames and checks incoming broadcasts."""

    def __init__(self, channel, worker_id, d, m):
        self.channel = channel
        self.worker_id = worker_id
        self.d, self.m = d, m
        self.epoch = 0
        self.round = 0

    def begin_epoch(self, t):
        self.epoch, self.round = t, 0

    def send(self, kind, payload):
        self.channel.send(Message(kind, self.epoch, self.round, payload))

    def recv(self, kind) -> np.ndarray:
        msg = self.channel.recv()
        if msg.kind is Kind.CONTROL:
            raise StopRun()
        _check(msg, kind, self.epoch, self.round, self.d, self.m, "master")
        self.round += 1
        return msg.payload

    def wait_stop(self):
        msg = self.channel.recv()
        if msg.kind is not Kind.CONTROL:
            raise ProtocolError(f"expected end of run, got {msg.kind.name}")
