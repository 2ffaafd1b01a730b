import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcode import straggler
from gradcode.codes import build_frc
from gradcode.config import ExperimentConfig
from gradcode.errors import ConfigError, InputError, ParameterError
from gradcode.optim import make_quadratic
from gradcode.simulator import (CSV_COLUMNS, WaitPolicy, apply_wait_rule, iteration_times, make_trainer,
                                run_experiment, run_iteration, speedups, start_point, summarize,
                                time_to_threshold)

OBJ = make_quadratic(4, 3, 4.0, seed=0, heterogeneity=0.5)


def cfg(**kw):
    base = dict(method="agc", n=4, k=4, c=2, T=5, seed=1, delta=0.5)
    base.update(kw)
    return ExperimentConfig(**base)


def test_no_stragglers_egc_fires_at_shift_with_exact_gradient():
    c = cfg(method="egc", lam=math.inf, T=3)
    result = run_experiment(c, OBJ)
    for rec in result.records:
        assert rec.wall_time == 2 / 4
        assert rec.grad_error <= 1e-12
        assert rec.covered_blocks == 2


def test_single_finisher_expectation_by_enumeration():
    c = cfg(delta=0.25, T=1)
    trainer = make_trainer(c, OBJ)
    assert trainer.p == 0.5
    x = start_point(OBJ, c)
    grads = []
    for first in range(4):
        times = np.full(4, 2.0)
        times[first] = 1.0
        _, rec = run_iteration(trainer, x, times)
        assert rec.finished_count == 1 and rec.covered_blocks == 1
        matrix = trainer.matrix
        block = matrix.block_of(first)
        grads.append(sum(OBJ.grad_i(i, x) for i in matrix.tasks_of(block)) / 4)
    np.testing.assert_allclose(np.mean(grads, axis=0), 0.5 * OBJ.full_grad(x), atol=1e-14)


def test_fixed_seed_is_deterministic():
    a = run_experiment(cfg(T=8), OBJ, record_iterates=True)
    b = run_experiment(cfg(T=8), OBJ, record_iterates=True)
    assert [r.finished_workers for r in a.records] == [r.finished_workers for r in b.records]
    assert all(u.tobytes() == v.tobytes() for u, v in zip(a.iterates, b.iterates))
    assert a.to_json() == b.to_json()


def test_zero_iterations():
    result = run_experiment(cfg(T=0), OBJ)
    assert result.records == [] and result.total_time == 0
    assert result.final_loss == result.initial_loss


def test_egc_recovers_exact_gradient_and_loss_decreases():
    result = run_experiment(cfg(method="egc", T=30, lam=0.3), OBJ)
    assert max(r.grad_error for r in result.records) <= 1e-12
    losses = np.concatenate([[result.initial_loss], result.losses()])
    assert (np.diff(losses) <= 1e-15).all()


def test_uncoded_needs_single_copies():
    with pytest.raises(ParameterError):
        WaitPolicy("uncoded_all").check(build_frc(4, 4, 2))
    with pytest.raises(ConfigError):
        cfg(method="uncoded", c=2)


def test_component_count_mismatch():
    with pytest.raises(InputError):
        make_trainer(cfg(n=6, k=6), OBJ)


def test_update_without_coverage_keeps_x():
    trainer = make_trainer(cfg(), OBJ)
    x = np.ones(3)
    x_new, g, _ = trainer.update(x, [np.ones(3), None], np.zeros(2, dtype=np.int8), 0)
    np.testing.assert_array_equal(x_new, x)
    np.testing.assert_array_equal(g, np.zeros(3))


@settings(max_examples=200)
@given(st.sampled_from([(6, 6, 2), (12, 12, 3), (8, 8, 1), (4, 8, 2)]), st.floats(0.05, 1.0),
       st.integers(0, 10_000))
def test_agc_rule_invariants(params, delta, seed):
    n, k, c = params
    m = build_frc(n, k, c)
    policy = WaitPolicy("agc_fraction", delta)
    times = straggler.sample_times(straggler.DelayModel(1.0, 2), k, seed).times
    finished, first, wall = apply_wait_rule(m, policy, times)
    r = policy.threshold(k)
    assert len(finished) <= r
    assert wall <= np.sort(times)[r - 1]
    assert wall == iteration_times(m, policy, times[None])[0]
    assert all(m.block_of(w) == b for b, w in first.items())
    # first_per_block really is the earliest finisher in each covered block
    for b, w in first.items():
        assert times[w] == min(times[j] for j in finished if m.block_of(j) == b)


def test_ties_broken_by_worker_id():
    m = build_frc(4, 4, 1)
    finished, _, _ = apply_wait_rule(m, WaitPolicy("agc_fraction", 0.5), np.ones(4))
    assert finished == [0, 1]


def test_delay_table_shape_checked():
    with pytest.raises(InputError):
        run_experiment(cfg(T=2), OBJ, delay_table=np.ones((3, 4)))


def test_summarize_single_and_identical_runs():
    run = run_experiment(cfg(T=6), OBJ)
    one = summarize([run])
    np.testing.assert_array_equal(one.loss_mean, run.losses())
    np.testing.assert_array_equal(one.wall_mean, run.wall_times())
    two = summarize([run, run_experiment(cfg(T=6), OBJ)])
    np.testing.assert_array_equal(two.loss_hi - two.loss_lo, 0)
    np.testing.assert_array_equal(two.wall_hi - two.wall_lo, 0)
    with pytest.raises(InputError):
        summarize([])


def test_time_to_threshold_and_speedups():
    run = run_experiment(cfg(method="egc", T=40), OBJ)
    level = run.gaps()[9]
    assert time_to_threshold(run, level) == pytest.approx(run.wall_times()[:10].sum())
    assert time_to_threshold(run, run.initial_gap) == 0.0
    assert time_to_threshold(run, -1.0) == math.inf
    assert speedups({"uncoded": 3.0, "agc": 1.0}) == {"uncoded": 1.0, "agc": 3.0}


@pytest.mark.slow
def test_mean_wall_time_matches_runtime_formulas():
    n, T = 6, 100_000
    obj = make_quadratic(n, 2, 2.0, seed=0)
    for method, c, pred in (("uncoded", 1, straggler.expected_runtime_uncoded(n, 1.0)),
                            ("egc", 2, straggler.expected_block_max_runtime(n, 2, 0.5))):
        run = run_experiment(ExperimentConfig(method=method, n=n, k=n, c=c, T=T, seed=3, lam=1 / c),
                             obj, diagnostics=False)
        assert abs(run.wall_times().mean() - pred) <= 0.02 * pred
    run = run_experiment(ExperimentConfig(method="agc", n=n, k=n, c=2, T=T, seed=3, lam=0.5, delta=0.5),
                         obj, diagnostics=False)
    assert run.wall_times().mean() <= straggler.expected_runtime_agc(n, 2, 3, 0.5)


def test_outputs(tmp_path):
    run = run_experiment(cfg(T=3), OBJ)
    run.write_csv(tmp_path / "r.csv", "abc")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# config_sha256=abc"
    rows = list(csv.reader(lines[1:]))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 4
    assert float(rows[-1][4]) == run.final_loss
    run.write_json(tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["total_time"] == pytest.approx(run.total_time) and len(data["records"]) == 3
