"""Parameter-server side of the synchronous coded protocol.

One reader thread per worker connection feeds a single queue; the round
loop in :meth:`Master.run` is the only owner of round state. Outputs are
stored per block as they arrive and summed in ascending block order once
the round closes, which is what makes results independent of arrival
order and identical to the simulator's.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time

import numpy as np

from ..config import ExperimentConfig
from ..errors import GradCodeError, ProtocolError
from ..optim import Objective
from ..simulator import IterationRecord, RunResult, make_trainer, start_point
from . import protocol
from .protocol import Kind

log = logging.getLogger(__name__)


class MasterAbort(GradCodeError):
    """The run cannot continue (lost block, timeout, bad handshake)."""


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))


class Master:
    def __init__(self, config: ExperimentConfig, objective: Objective, x0=None,
                 record_iterates: bool = False):
        self.config = config
        self.objective = objective
        self.trainer = make_trainer(config, objective)
        self.matrix = self.trainer.matrix
        self.x0 = start_point(objective, config) if x0 is None else np.asarray(x0, dtype=np.float64)
        self.record_iterates = record_iterates
        self._listener = None
        self._conns: dict[int, socket.socket] = {}
        self._alive: set[int] = set()
        self._inbox: queue.Queue = queue.Queue()
        self._readers: list[threading.Thread] = []

    def bind(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        self._listener = socket.create_server((host, port))
        return self._listener.getsockname()[:2]

    # -- connection handling -------------------------------------------------

    def _accept_workers(self):
        k = self.config.k
        deadline = time.monotonic() + self.config.timeout
        while len(self._conns) < k:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise MasterAbort(f"only {len(self._conns)} of {k} workers connected before timeout")
            self._listener.settimeout(remaining)
            try:
                conn, addr = self._listener.accept()
            except socket.timeout:
                continue
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn.settimeout(remaining)
            try:
                msg = protocol.read_message(conn)
            except (ProtocolError, ConnectionError, OSError) as exc:
                log.warning("dropping connection from %s during handshake: %s", addr, exc)
                conn.close()
                continue
            wid = msg.worker_id
            if msg.kind != Kind.HELLO or not 0 <= wid < k or wid in self._conns:
                log.warning("rejecting handshake %s/%s from %s", msg.kind.name, wid, addr)
                conn.close()
                continue
            conn.settimeout(None)
            self._conns[wid] = conn
            log.info("worker %d connected from %s", wid, addr)
        self._alive = set(self._conns)

    def _reader(self, wid, conn):
        try:
            while True:
                self._inbox.put((wid, protocol.read_message(conn)))
        except (ProtocolError, ConnectionError, OSError) as exc:
            self._inbox.put((wid, exc))

    def _send(self, wid, msg):
        try:
            protocol.send_message(self._conns[wid], msg)
        except OSError as exc:
            self._mark_dead(wid, exc)

    def _mark_dead(self, wid, reason):
        if wid in self._alive:
            self._alive.discard(wid)
            log.warning("worker %d lost (%s); treating it as a permanent straggler", wid, reason)

    # -- protocol ------------------------------------------------------------

    def run(self) -> RunResult:
        if self._listener is None:
            self.bind()
        try:
            self._accept_workers()
            for wid, conn in self._conns.items():
                t = threading.Thread(target=self._reader, args=(wid, conn), daemon=True)
                t.start()
                self._readers.append(t)
            for wid in sorted(self._conns):
                block = self.matrix.block_of(wid)
                self._send(wid, protocol.assign(wid, block, self.matrix.tasks_of(block)))
            return self._train()
        finally:
            self.close()

    def _train(self) -> RunResult:
        cfg, obj = self.config, self.objective
        x = self.x0.copy()
        gap0 = obj.gap(x) if obj.optimum_value is not None else None
        result = RunResult([], cfg.to_dict(), cfg.seed, obj.value(x), gap0, x)
        for t in range(cfg.T):
            x, record = self._round(t, x)
            result.records.append(record)
            if self.record_iterates:
                result.iterates.append(x.copy())
        for wid in sorted(self._alive):
            self._send(wid, protocol.stop(cfg.T))
        result.final_x = x
        return result

    def _round(self, t, x):
        m, cfg = self.matrix, self.config
        threshold = self.trainer.policy.threshold(m.k)
        start = time.monotonic()
        for wid in sorted(self._alive):
            self._send(wid, protocol.model(t, x))
        outputs = [None] * m.blocks
        y = np.zeros(m.blocks, dtype=np.int8)
        finished = []
        deadline = start + cfg.timeout
        while True:
            covered = int(y.sum())
            if len(finished) >= threshold or covered == m.blocks:
                break
            pending = self._alive.difference(finished)
            if not pending:
                break
            if threshold >= m.k:
                lost = [b for b in range(m.blocks)
                        if not y[b] and not pending.intersection(m.workers_of(b))]
                if lost:
                    raise MasterAbort(f"round {t + 1}: every worker of block {lost[0]} is gone")
            try:
                wid, msg = self._inbox.get(timeout=max(deadline - time.monotonic(), 0))
            except queue.Empty:
                raise MasterAbort(f"round {t + 1} timed out after {cfg.timeout}s") from None
            if isinstance(msg, Exception):
                self._mark_dead(wid, msg)
                continue
            if msg.kind != Kind.GRADIENT or msg.round != t:
                log.debug("discarding %s for round %d from worker %d in round %d",
                          msg.kind.name, msg.round, wid, t)
                continue
            if msg.worker_id != wid or msg.block_id != m.block_of(wid) or msg.vector.shape != x.shape:
                log.warning("worker %d sent an inconsistent gradient; ignoring it", wid)
                continue
            if wid in finished:
                continue
            finished.append(wid)
            if outputs[msg.block_id] is None:
                outputs[msg.block_id] = msg.vector
                y[msg.block_id] = 1
        wall = time.monotonic() - start
        x_new, g, gamma = self.trainer.update(x, outputs, y, t)
        obj = self.objective
        record = IterationRecord(
            t=t + 1,
            finished_workers=tuple(finished),
            covered_blocks=int(y.sum()),
            wall_time=wall,
            loss=obj.value(x_new),
            grad_error=float(np.linalg.norm(g - obj.full_grad(x))),
            gap=obj.gap(x_new) if obj.optimum_value is not None else None,
            gamma=gamma,
        )
        log.info("round %d: %d finished, %d/%d blocks, %.4fs", t + 1, len(finished),
                 record.covered_blocks, m.blocks, wall)
        return x_new, record

    def close(self):
        for conn in self._conns.values():
            # shutdown first: a plain close does not wake our blocked reader threads
            # and leaves the peer waiting for a FIN
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        if self._listener is not None:
            self._listener.close()
            self._listener = None


def serve_master(config: ExperimentConfig, listen, objective: Objective | None = None,
                 x0=None, record_iterates: bool = False, ready=None) -> RunResult:
    """Bind ``listen`` ("host:port" or tuple), run the protocol, return the trace.

    ``ready`` is called with the bound address before workers are awaited.
    """
    if objective is None:
        from ..data import build_objective

        objective = build_objective(config)
    master = Master(config, objective, x0, record_iterates)
    host, port = parse_address(listen) if isinstance(listen, str) else listen
    address = master.bind(host, port)
    if ready is not None:
        ready(address)
    return master.run()
