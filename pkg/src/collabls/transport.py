"""In-process message transport with exact communication accounting.

Wire frame (all little-endian)::

    offset 0   uint8    kind (low 7 bits) | 0x80 if symmetric blocks are triangle-packed
    offset 1   uint32   agent id
    offset 5   uint64   number of reals in the payload
    offset 13  float64  payload reals, row-major

The ledger counts payload reals only, never header bytes.
"""

from __future__ import annotations

import enum
import os
import queue
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MessageKind",
    "Message",
    "encode_message",
    "decode_message",
    "summary_message",
    "unpack_summary",
    "raw_data_message",
    "unpack_raw_data",
    "vector_message",
    "covariance_message",
    "unpack_covariance",
    "CommLedger",
    "Transport",
    "HEADER_SIZE",
]

HEADER_SIZE = 13
_HEADER = struct.Struct("<BIQ")
_PACKED_BIT = 0x80


class MessageKind(enum.IntEnum):
    SUMMARY = 1
    RAW_DATA = 2
    LOCAL_MODEL = 3
    COVARIANCE_BLOCK = 4


@dataclass(eq=False)
class Message:
    kind: MessageKind
    agent_id: int
    payload: np.ndarray = field(default_factory=lambda: np.zeros(0))
    packed: bool = False

    def __post_init__(self):
        self.kind = MessageKind(self.kind)
        self.payload = np.ascontiguousarray(self.payload, dtype="<f8").reshape(-1)
        if not 0 <= self.agent_id < 2**32:
            raise ValueError("agent_id must fit in 32 bits")

    @property
    def real_count(self):
        return self.payload.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Message):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.agent_id == other.agent_id
            and self.packed == other.packed
            and self.payload.tobytes() == other.payload.tobytes()
        )


def encode_message(msg):
    kind = int(msg.kind) | (_PACKED_BIT if msg.packed else 0)
    return _HEADER.pack(kind, msg.agent_id, msg.real_count) + msg.payload.astype("<f8").tobytes()


def decode_message(frame):
    if len(frame) < HEADER_SIZE:
        raise ValueError(f"frame of {len(frame)} bytes is shorter than the {HEADER_SIZE}-byte header")
    kind, agent_id, count = _HEADER.unpack_from(frame, 0)
    body = frame[HEADER_SIZE:]
    if len(body) != 8 * count:
        raise ValueError(f"frame announces {count} reals but carries {len(body)} bytes")
    payload = np.frombuffer(body, dtype="<f8").copy()
    return Message(MessageKind(kind & ~_PACKED_BIT), agent_id, payload, bool(kind & _PACKED_BIT))


# --- typed payload helpers ---------------------------------------------------


def _pack_sym(a, packed):
    a = np.asarray(a, dtype=float)
    if packed:
        return a[np.triu_indices(a.shape[0])]
    return a.reshape(-1)


def _unpack_sym(flat, k, packed):
    if not packed:
        return flat.reshape(k, k)
    out = np.zeros((k, k))
    iu = np.triu_indices(k)
    out[iu] = flat
    out.T[iu] = flat
    return out


def _solve_dim(count, packed):
    # count = k^2 + k + 1 (full) or k(k+1)/2 + k + 1 (packed)
    for k in range(int(np.sqrt(count)) + 2):
        sym = k * (k + 1) // 2 if packed else k * k
        if sym + k + 1 == count:
            return k
    raise ValueError(f"payload of {count} reals is not a valid summary")


def summary_message(agent_id, summary, packed=False):
    body = np.concatenate(
        [summary.theta_hat, _pack_sym(summary.sigma_hat_plus, packed), [summary.residual_risk]]
    )
    return Message(MessageKind.SUMMARY, agent_id, body, packed)


def unpack_summary(msg):
    """Return ``(theta_hat, sigma_hat_plus, residual_risk)`` from a summary message."""
    k = _solve_dim(msg.real_count, msg.packed)
    p = msg.payload
    return p[:k].copy(), _unpack_sym(p[k:-1], k, msg.packed).copy(), float(p[-1])


def raw_data_message(agent_id, x_plus, y):
    x_plus = np.asarray(x_plus, dtype=float)
    body = np.column_stack([x_plus, y]).reshape(-1) if x_plus.size or len(y) else np.zeros(0)
    return Message(MessageKind.RAW_DATA, agent_id, body)


def unpack_raw_data(msg, d_i):
    rows = msg.payload.reshape(-1, d_i + 1)
    return rows[:, :d_i].copy(), rows[:, d_i].copy()


def vector_message(agent_id, v):
    return Message(MessageKind.LOCAL_MODEL, agent_id, np.asarray(v, dtype=float))


def covariance_message(agent_id, a, packed=False):
    return Message(MessageKind.COVARIANCE_BLOCK, agent_id, _pack_sym(a, packed), packed)


def unpack_covariance(msg):
    c = msg.real_count
    if msg.packed:
        k = int(round((np.sqrt(8 * c + 1) - 1) / 2))
    else:
        k = int(round(np.sqrt(c)))
    return _unpack_sym(msg.payload, k, msg.packed).copy()


# --- accounting --------------------------------------------------------------


class CommLedger:
    """Per-agent counts of reals sent and received, plus server-side totals.

    Updates are serialized with a lock so producers on several threads may
    record concurrently.
    """

    def __init__(self, method=""):
        self.method = method
        self.sent = {}
        self.received = {}
        self.server_sent = 0
        self.server_received = 0
        self._lock = threading.Lock()

    def record(self, agent_id, direction, msg):
        """Account for ``msg``; ``direction`` is ``"up"`` (agent to server) or ``"down"``."""
        count = msg.real_count
        with self._lock:
            self.sent.setdefault(agent_id, 0)
            self.received.setdefault(agent_id, 0)
            if direction == "up":
                self.sent[agent_id] += count
                self.server_received += count
            elif direction == "down":
                self.received[agent_id] += count
                self.server_sent += count
            else:
                raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
        return self

    def register(self, agent_ids):
        with self._lock:
            for a in agent_ids:
                self.sent.setdefault(a, 0)
                self.received.setdefault(a, 0)
        return self

    def reals_sent(self, agent_id):
        return self.sent.get(agent_id, 0)

    def reals_received(self, agent_id):
        return self.received.get(agent_id, 0)

    def snapshot(self):
        agents = sorted(set(self.sent) | set(self.received))
        return {
            "method": self.method,
            "sent": [self.sent.get(a, 0) for a in agents],
            "received": [self.received.get(a, 0) for a in agents],
        }


class Transport:
    """Queue pair per agent carrying encoded frames between agents and the server.

    Parameters
    ----------
    n_agents : int
    method : str
        Tag stored on the ledger.
    packed : bool
        Send symmetric blocks as upper triangles (``k(k+1)/2`` reals).
    dump_dir : str, optional
        Write every frame to ``dump_dir`` as ``<seq>_<up|down>_<agent>.bin``.
    """

    def __init__(self, n_agents, method="", packed=False, dump_dir=None):
        self.n_agents = n_agents
        self.packed = packed
        self.ledger = CommLedger(method).register(range(n_agents))
        self.dump_dir = dump_dir
        self._up = [queue.Queue() for _ in range(n_agents)]
        self._down = [queue.Queue() for _ in range(n_agents)]
        self._seq = 0
        self._seq_lock = threading.Lock()
        if dump_dir:
            os.makedirs(dump_dir, exist_ok=True)

    def _dump(self, direction, agent_id, frame):
        if not self.dump_dir:
            return
        with self._seq_lock:
            seq = self._seq
            self._seq += 1
        with open(os.path.join(self.dump_dir, f"{seq:06d}_{direction}_{agent_id}.bin"), "wb") as fh:
            fh.write(frame)

    def send_up(self, msg):
        frame = encode_message(msg)
        self.ledger.record(msg.agent_id, "up", msg)
        self._dump("up", msg.agent_id, frame)
        self._up[msg.agent_id].put(frame)

    def send_down(self, msg):
        frame = encode_message(msg)
        self.ledger.record(msg.agent_id, "down", msg)
        self._dump("down", msg.agent_id, frame)
        self._down[msg.agent_id].put(frame)

    def recv_up(self, agent_id):
        return decode_message(self._up[agent_id].get_nowait())

    def recv_down(self, agent_id):
        return decode_message(self._down[agent_id].get_nowait())

    def gather_up(self):
        """Server side: one pending uplink message per agent, in agent-id order."""
        return [self.recv_up(i) for i in range(self.n_agents)]
