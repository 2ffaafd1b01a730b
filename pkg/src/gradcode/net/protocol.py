"""Length-prefixed binary frames exchanged between master and workers.

Frame layout, all little-endian::

    u32 body_length | u8 kind | u64 round | payload

Payloads by kind:

    HELLO     u32 worker_id
    ASSIGN    u32 worker_id, u32 block_id, u32 count, count x u32 task index
    MODEL     u32 dim, dim x f64
    GRADIENT  u32 worker_id, u32 block_id, u32 dim, dim x f64
    STOP      (empty)

Vectors travel as raw IEEE-754 doubles, so values survive bit-exactly.
"""

from __future__ import annotations

import enum
import socket
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ProtocolError

HEADER = struct.Struct("<IBQ")
LENGTH = struct.Struct("<I")
U32 = struct.Struct("<I")
MAX_BODY = 2**31 - 1


class Kind(enum.IntEnum):
    HELLO = 0
    ASSIGN = 1
    MODEL = 2
    GRADIENT = 3
    STOP = 4


@dataclass(eq=False)
class Message:
    kind: Kind
    round: int = 0
    worker_id: int = 0
    block_id: int = 0
    tasks: tuple = ()
    vector: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __eq__(self, other):
        if not isinstance(other, Message):
            return NotImplemented
        return (self.kind == other.kind and self.round == other.round
                and self.worker_id == other.worker_id and self.block_id == other.block_id
                and tuple(self.tasks) == tuple(other.tasks)
                and _vec(self.vector).tobytes() == _vec(other.vector).tobytes())


def _vec(v):
    return np.ascontiguousarray(v, dtype="<f8")


def hello(worker_id):
    return Message(Kind.HELLO, 0, worker_id=worker_id)


def assign(worker_id, block_id, tasks):
    return Message(Kind.ASSIGN, 0, worker_id=worker_id, block_id=block_id, tasks=tuple(tasks))


def model(round_, x):
    return Message(Kind.MODEL, round_, vector=_vec(x))


def gradient(round_, worker_id, block_id, g):
    return Message(Kind.GRADIENT, round_, worker_id=worker_id, block_id=block_id, vector=_vec(g))


def stop(round_=0):
    return Message(Kind.STOP, round_)


def encode(msg: Message) -> bytes:
    kind = Kind(msg.kind)
    if kind == Kind.HELLO:
        payload = U32.pack(msg.worker_id)
    elif kind == Kind.ASSIGN:
        payload = struct.pack(f"<III{len(msg.tasks)}I", msg.worker_id, msg.block_id,
                              len(msg.tasks), *msg.tasks)
    elif kind == Kind.MODEL:
        v = _vec(msg.vector)
        payload = U32.pack(len(v)) + v.tobytes()
    elif kind == Kind.GRADIENT:
        v = _vec(msg.vector)
        payload = struct.pack("<III", msg.worker_id, msg.block_id, len(v)) + v.tobytes()
    else:
        payload = b""
    body_len = HEADER.size - LENGTH.size + len(payload)
    if body_len > MAX_BODY:
        raise ProtocolError(f"frame body of {body_len} bytes exceeds 2**31 - 1")
    return HEADER.pack(body_len, kind, msg.round) + payload


def decode(frame: bytes) -> Message:
    """Decode exactly one complete frame."""
    if len(frame) < HEADER.size:
        raise ProtocolError(f"truncated frame: {len(frame)} bytes < header {HEADER.size}")
    body_len, kind_byte, round_ = HEADER.unpack_from(frame)
    if len(frame) - LENGTH.size != body_len:
        raise ProtocolError(f"length mismatch: header says {body_len}, got {len(frame) - LENGTH.size}")
    try:
        kind = Kind(kind_byte)
    except ValueError:
        raise ProtocolError(f"unknown message kind {kind_byte}") from None
    payload = memoryview(frame)[HEADER.size:]
    try:
        return _decode_payload(kind, round_, payload)
    except struct.error as exc:
        raise ProtocolError(f"malformed {kind.name} payload: {exc}") from None


def _decode_payload(kind, round_, payload):
    if kind == Kind.HELLO:
        _expect(payload, 4, kind)
        return Message(kind, round_, worker_id=U32.unpack(payload)[0])
    if kind == Kind.ASSIGN:
        wid, bid, count = struct.unpack_from("<III", payload)
        _expect(payload, 12 + 4 * count, kind)
        tasks = struct.unpack_from(f"<{count}I", payload, 12)
        return Message(kind, round_, worker_id=wid, block_id=bid, tasks=tuple(tasks))
    if kind == Kind.MODEL:
        (dim,) = U32.unpack_from(payload)
        _expect(payload, 4 + 8 * dim, kind)
        return Message(kind, round_, vector=np.frombuffer(payload, "<f8", dim, 4).copy())
    if kind == Kind.GRADIENT:
        wid, bid, dim = struct.unpack_from("<III", payload)
        _expect(payload, 12 + 8 * dim, kind)
        vec = np.frombuffer(payload, "<f8", dim, 12).copy()
        return Message(kind, round_, worker_id=wid, block_id=bid, vector=vec)
    _expect(payload, 0, kind)
    return Message(kind, round_)


def _expect(payload, size, kind):
    if len(payload) != size:
        raise ProtocolError(f"{kind.name} payload is {len(payload)} bytes, expected {size}")


def _recv_exact(sock: socket.socket, size: int) -> bytes:
    chunks = bytearray()
    while len(chunks) < size:
        chunk = sock.recv(size - len(chunks))
        if not chunk:
            if chunks:
                raise ProtocolError(f"connection closed mid-frame ({len(chunks)}/{size} bytes)")
            raise ConnectionError("connection closed")
        chunks += chunk
    return bytes(chunks)


def read_message(sock: socket.socket) -> Message:
    head = _recv_exact(sock, LENGTH.size)
    (body_len,) = LENGTH.unpack(head)
    if body_len > MAX_BODY or body_len < HEADER.size - LENGTH.size:
        raise ProtocolError(f"bad frame length {body_len}")
    return decode(head + _recv_exact(sock, body_len))


def send_message(sock: socket.socket, msg: Message) -> None:
    sock.sendall(encode(msg))
