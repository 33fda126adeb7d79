from __future__ import annotations

import numpy as np
import pytest

from dsaawet import baseline as B
from dsaawet import engine as E
from dsaawet import problems as P
from dsaawet import streams
from dsaawet import topology as T
from dsaawet.metrics import disagreement_norm
from dsaawet.schedules import GeometricBounds, NoBounds, PowerSchedule


def test_pure_averaging_contracts_disagreement():
    prob = P.LinearProblem(np.zeros((6, 2, 2)), [0.0, 0.0], noise_std=0.0)
    sched = T.example1_blocks(6, seed=2)
    x0 = np.random.default_rng(0).normal(size=(6, 2))
    c = E.AlgorithmConfig(np.zeros(2), PowerSchedule(1.0), GeometricBounds(1.0), 60, full_trace=True)
    res = B.run_baseline(prob, sched, c, x0)
    d = [disagreement_norm(x) for x in res.trace.x]
    assert all(b <= a + 1e-12 for a, b in zip(d, d[1:]))
    np.testing.assert_allclose(res.trace.x[-1].mean(axis=0), x0.mean(axis=0), atol=1e-12)


def test_single_agent_rm_converges():
    prob = P.LinearProblem(np.ones((1, 1, 1)), [0.0], noise_std=0.0)
    c = E.AlgorithmConfig(np.zeros(1), PowerSchedule(1.0, c=2.0), GeometricBounds(1.0), 500)
    res = B.run_baseline(prob, T.complete_uniform(1), c, [[4.0]])
    assert abs(res.final.x[0, 0]) < 1e-2


def test_baseline_step_matches_run():
    prob = P.synthetic_linear_problem(3, 2, seed=1, noise_std=1.0)
    sched = T.directed_ring(3)
    c = E.AlgorithmConfig(np.zeros(2), PowerSchedule(1.0), GeometricBounds(1.0), 5, seed=4, full_trace=True)
    x0 = np.ones((3, 2))
    res = B.run_baseline(prob, sched, c, x0)
    st = B.BaselineState(x0.copy())
    rngs = streams.agent_streams(4, 3)
    for k in range(5):
        st = B.baseline_step(st, sched.matrix(k), prob, c.gamma(k), rngs)
    np.testing.assert_allclose(st.x, res.final.x, rtol=1e-13, atol=1e-15)


def test_overflow_freezes_state():
    prob = P.LinearProblem(-np.ones((1, 1, 1)) * 1e200, [0.0], noise_std=0.0)
    c = E.AlgorithmConfig(np.zeros(1), PowerSchedule(1.0), GeometricBounds(1.0), 10)
    res = B.run_baseline(prob, T.complete_uniform(1), c, [[1e200]])
    assert res.overflow_step == 1
    assert res.final.k == 0 and res.final.x[0, 0] == 1e200
    st = B.BaselineState(np.array([[1.0]]), overflowed=True, first_overflow_step=1)
    with pytest.raises(E.ConfigError):
        B.baseline_step(st, np.eye(1), prob, 1.0, streams.agent_streams(0, 1))


def test_infinite_bounds_make_algorithms_identical():
    prob = P.example1_pca(6, 3, matrix_seed=1, mode="heterogeneous", scale=0.5)
    sched = T.example1_blocks(6, seed=0)
    x_star = np.ones(3) / 3
    c = E.AlgorithmConfig(x_star, PowerSchedule(1.0, c=5.0), NoBounds(), 200, seed=7, full_trace=True)
    a, b = B.compare(prob, sched, c, np.tile(x_star, (6, 1)))
    assert a.overflow_step is None and b.overflow_step is None
    np.testing.assert_array_equal(a.trace.x, b.trace.x)
    np.testing.assert_array_equal(a.trace.obs, b.trace.obs)


def test_zero_noise_linear_both_converge():
    prob = P.synthetic_linear_problem(4, 2, seed=3, noise_std=0.0)
    c = E.AlgorithmConfig(np.zeros(2), PowerSchedule(0.5), GeometricBounds(4.0), 2000, record_every=2000)
    a, b = B.compare(prob, T.directed_ring(4), c, np.zeros((4, 2)))
    ra, rb = a.records[-1].root_distance, b.records[-1].root_distance
    assert ra < 0.05 and rb < 0.05
    assert max(ra, rb) <= 10 * min(ra, rb)


def test_pca_baseline_blows_up_while_truncated_run_stays_bounded():
    prob = P.example1_pca(20, 9, matrix_seed=0)
    sched = T.example1_blocks(20, seed=0)
    x_star = np.ones(9) / 3
    c = E.AlgorithmConfig(x_star, PowerSchedule(1.0), GeometricBounds(1.0), 400, seed=0, full_trace=True)
    a, b = B.compare(prob, sched, c, np.tile(x_star, (20, 1)))
    assert b.overflow_step is not None
    assert a.overflow_step is None
    assert a.records[-1].root_distance < 0.2


def test_horizon_zero_identical_records():
    prob = P.synthetic_linear_problem(2, 2, seed=0)
    c = E.AlgorithmConfig(np.zeros(2), PowerSchedule(1.0), GeometricBounds(1.0), 0)
    a, b = B.compare(prob, T.complete_uniform(2), c, np.ones((2, 2)) * 0.1)
    ra, rb = a.records[0], b.records[0]
    assert len(a.records) == len(b.records) == 1
    assert ra.disagreement == rb.disagreement and np.array_equal(ra.avg_estimate, rb.avg_estimate)
