"""Worker side: receive the assignment, then answer every model broadcast
with the sum of its assigned component gradients until told to stop."""

from __future__ import annotations

import csv
import logging
import select
import socket
import time
from pathlib import Path

import numpy as np

from ..errors import ProtocolError
from ..optim import Objective, block_sum
from ..rng import DELAYS, stream
from . import protocol
from .protocol import Kind

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONNECTION = 1
EXIT_PROTOCOL = 3


def table_delays(table, scale: float = 1.0):
    """Injected delay from a (rounds x workers) table, in seconds * scale."""
    table = np.asarray(table, dtype=np.float64)

    def delay(t, wid):
        return scale * float(table[t % len(table), wid])

    return delay


def seeded_delays(seed: int, lam: float = 0.5, scale: float = 1.0):
    """Exp(lam) seconds per round; worker j takes entry j of round t's vector."""

    def delay(t, wid):
        return scale * float(stream(seed, DELAYS, t).exponential(1.0 / lam, size=wid + 1)[wid])

    return delay


def read_delay_table(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row and not row[0].startswith("#")]
    return np.array(rows)


def _connect(address, retries, retry_wait):
    for attempt in range(retries + 1):
        try:
            sock = socket.create_connection(address)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError as exc:
            log.info("connect attempt %d to %s failed: %s", attempt + 1, address, exc)
            if attempt < retries:
                time.sleep(retry_wait)
    return None


def _wait(sock, deadline):
    """Sleep until ``deadline`` unless the master speaks first; return its message."""
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            return None
        readable, _, _ = select.select([sock], [], [], remaining)
        if readable:
            return protocol.read_message(sock)


def _resolve_objective(source, tasks) -> Objective:
    if isinstance(source, Objective):
        return source
    path = Path(source)
    if path.is_dir():
        from ..data import load_shards

        return load_shards(path, tasks)
    from ..config import load
    from ..data import build_objective

    return build_objective(load(path))


def run_worker(master_address, objective_source, worker_id: int, *, delay=None,
               retries: int = 5, retry_wait: float = 0.2, fail_after: int | None = None) -> int:
    """Serve one worker until STOP; returns a process exit code.

    ``fail_after`` drops the connection without a word after that many
    rounds, to exercise the master's handling of lost workers.
    """
    if isinstance(master_address, str):
        from .master import parse_address

        master_address = parse_address(master_address)
    sock = _connect(master_address, retries, retry_wait)
    if sock is None:
        log.error("worker %d could not reach master at %s", worker_id, master_address)
        return EXIT_CONNECTION
    try:
        protocol.send_message(sock, protocol.hello(worker_id))
        msg = protocol.read_message(sock)
        if msg.kind != Kind.ASSIGN or msg.worker_id != worker_id:
            raise ProtocolError(f"expected ASSIGN for worker {worker_id}, got {msg.kind.name}")
        block, tasks = msg.block_id, msg.tasks
        c = len(tasks)
        objective = _resolve_objective(objective_source, tasks)
        rounds = 0
        pending = None
        while True:
            msg = protocol.read_message(sock) if pending is None else pending
            pending = None
            received = time.monotonic()
            if msg.kind == Kind.STOP:
                log.info("worker %d stopping after %d rounds", worker_id, rounds)
                return EXIT_OK
            if msg.kind != Kind.MODEL:
                raise ProtocolError(f"unexpected {msg.kind.name} from master")
            if fail_after is not None and rounds >= fail_after:
                log.info("worker %d dropping its connection on purpose", worker_id)
                sock.shutdown(socket.SHUT_RDWR)
                return EXIT_CONNECTION
            y = block_sum(objective, block, msg.vector, c)
            if delay is not None:
                pending = _wait(sock, received + delay(msg.round, worker_id))
            rounds += 1
            if pending is not None:
                # the master moved on while we were straggling; this answer is stale
                log.debug("worker %d dropping its round %d gradient", worker_id, msg.round)
                continue
            protocol.send_message(sock, protocol.gradient(msg.round, worker_id, block, y))
    except ProtocolError as exc:
        log.error("worker %d protocol error: %s", worker_id, exc)
        return EXIT_PROTOCOL
    except (ConnectionError, OSError) as exc:
        log.error("worker %d lost its connection: %s", worker_id, exc)
        return EXIT_CONNECTION
    finally:
        sock.close()
