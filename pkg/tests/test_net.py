import socket
import struct
import threading

import numpy as np
import pytest
from hypothesis import given, settings

from gradcode.config import ExperimentConfig
from gradcode.data import build_objective
from gradcode.errors import ProtocolError
from gradcode.net import protocol
from gradcode.net.master import Master, MasterAbort, parse_address
from gradcode.net.protocol import Kind
from gradcode.net.worker import (EXIT_CONNECTION, EXIT_OK, EXIT_PROTOCOL, read_delay_table, run_worker,
                                 seeded_delays)
from gradcode.simulator import run_experiment

from loopback import run_loopback
from strategies import messages


def test_stop_round_trips():
    msg = protocol.stop(7)
    assert protocol.decode(protocol.encode(msg)) == msg


def test_gradient_round_trips_bit_exactly():
    msg = protocol.gradient(3, 1, 0, np.array([0.5, -1.25]))
    frame = protocol.encode(msg)
    assert frame[:4] == struct.pack("<I", len(frame) - 4)
    assert frame[4] == Kind.GRADIENT
    out = protocol.decode(frame)
    assert out == msg and out.vector.tobytes() == np.array([0.5, -1.25]).tobytes()


@settings(max_examples=500)
@given(messages())
def test_round_trip_property(msg):
    assert protocol.decode(protocol.encode(msg)) == msg


@pytest.mark.parametrize("frame,match", [
    (b"\x01\x00", "truncated"),
    (struct.pack("<IBQ", 20, 4, 0), "length mismatch"),
    (struct.pack("<IBQ", 9, 9, 0), "unknown message kind"),
    (struct.pack("<IBQ", 9 + 4, 2, 0) + struct.pack("<I", 3), "MODEL payload"),
    (struct.pack("<IBQ", 9 + 2, 0, 0) + b"\x00\x00", "malformed|HELLO"),
])
def test_decode_errors(frame, match):
    with pytest.raises(ProtocolError, match=match):
        protocol.decode(frame)


def test_parse_address():
    assert parse_address("10.0.0.1:5000") == ("10.0.0.1", 5000)
    assert parse_address(":7000") == ("127.0.0.1", 7000)


def _setup(**kw):
    base = dict(method="agc", n=4, k=4, c=2, T=3, seed=2, delta=0.5, timeout=20.0)
    base.update(kw)
    cfg = ExperimentConfig(**base)
    obj = build_objective(cfg)
    x0 = run_experiment(cfg.replace(T=0), obj).final_x
    return cfg, obj, x0


def test_two_instant_workers_match_simulator():
    cfg, obj, x0 = _setup(method="egc", n=2, k=2, c=1, T=1)
    result, codes = run_loopback(cfg, obj, x0)
    assert codes == [EXIT_OK, EXIT_OK]
    expected = x0 - obj.full_grad(x0) / obj.beta
    np.testing.assert_allclose(result.final_x, expected, rtol=1e-14)
    sim = run_experiment(cfg, obj, x0=x0, delay_table=np.zeros((1, 2)))
    assert result.final_x.tobytes() == sim.final_x.tobytes()


def test_master_proceeds_after_threshold_with_injected_sleeps():
    cfg, obj, x0 = _setup(T=2)
    table = np.array([[1.0, 2.0, 3.0, 4.0]] * cfg.T)
    result, codes = run_loopback(cfg, obj, x0, table, scale=0.05)
    for rec in result.records:
        # workers 0 and 1 share block 0, so only one block is covered
        assert rec.finished_workers == (0, 1)
        assert rec.covered_blocks == 1
        assert 0.1 <= rec.wall_time < 0.15 + 0.1
    assert codes == [EXIT_OK] * 4


def test_full_coverage_closes_round_early():
    cfg, obj, x0 = _setup(T=2, delta=1.0, method="agc")
    table = np.array([[1.0, 3.0, 2.0, 4.0]] * cfg.T)
    result, _ = run_loopback(cfg, obj, x0, table, scale=0.05)
    assert [r.finished_workers for r in result.records] == [(0, 2)] * 2


def test_exact_gradient_with_all_workers():
    cfg, obj, x0 = _setup(method="egc", T=4)
    result, _ = run_loopback(cfg, obj, x0)
    sim = run_experiment(cfg, obj, x0=x0, record_iterates=True)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(result.iterates, sim.iterates))
    assert max(r.grad_error for r in result.records) <= 1e-12


def test_egc_aborts_when_a_block_is_lost():
    cfg, obj, x0 = _setup(method="egc", T=5)
    with pytest.raises(MasterAbort, match="block 0"):
        run_loopback(cfg, obj, x0, fail={0: 1, 1: 1})


def test_master_times_out_without_workers():
    cfg, obj, _ = _setup(timeout=0.3)
    master = Master(cfg, obj)
    master.bind()
    with pytest.raises(MasterAbort, match="connected"):
        master.run()


def test_worker_gives_up_without_master():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    _, obj, _ = _setup()
    assert run_worker(("127.0.0.1", port), obj, 0, retries=1, retry_wait=0.01) == EXIT_CONNECTION


def test_worker_rejects_malformed_frames():
    _, obj, _ = _setup()
    server = socket.create_server(("127.0.0.1", 0))
    addr = server.getsockname()

    def fake_master():
        conn, _ = server.accept()
        protocol.read_message(conn)
        conn.sendall(struct.pack("<IBQ", 9, 42, 0))
        conn.close()

    t = threading.Thread(target=fake_master)
    t.start()
    assert run_worker(addr, obj, 0) == EXIT_PROTOCOL
    t.join()
    server.close()


def test_seeded_delays_are_reproducible():
    a, b = seeded_delays(5, 0.5), seeded_delays(5, 0.5)
    assert a(3, 2) == b(3, 2) > 0
    assert a(3, 2) != a(4, 2)
    assert seeded_delays(5, 0.5, scale=0.0)(1, 1) == 0.0


def test_read_delay_table(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("# rounds x workers\n1,2\n3,4\n")
    np.testing.assert_array_equal(read_delay_table(path), [[1, 2], [3, 4]])
