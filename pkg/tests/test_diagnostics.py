from __future__ import annotations

import numpy as np
import pytest

from _support import corrupt_sigma, lemma_checks, scenario_run
from dsaawet import diagnostics as D
from dsaawet import engine as E
from dsaawet import problems as P
from dsaawet import topology as T
from dsaawet.engine import TruncationEvent
from dsaawet.metrics import disagreement_norm
from dsaawet.schedules import NoBounds, PowerSchedule
from dsaawet.scenario import parse_scenario


# -- disagreement ---------------------------------------------------------------------

def test_disagreement_of_consensus_is_zero():
    assert disagreement_norm(np.tile([1.0, -2.0, 3.0], (5, 1))) == 0.0


def test_disagreement_two_agents():
    assert disagreement_norm(np.array([1.0, -1.0]), l=1) == pytest.approx(np.sqrt(2), rel=1e-15)


def test_disagreement_matches_projector():
    rng = np.random.default_rng(0)
    n, l = 5, 3
    x = rng.normal(size=(n, l))
    d_perp = np.kron(np.eye(n) - np.full((n, n), 1 / n), np.eye(l))
    assert disagreement_norm(x.reshape(-1), l=l) == pytest.approx(np.linalg.norm(d_perp @ x.reshape(-1)), rel=1e-12)


def test_disagreement_rejects_bad_length():
    with pytest.raises(ValueError):
        disagreement_norm(np.zeros(7), l=2)


# -- truncation bookkeeping -------------------------------------------------------------

def test_tau_definitions():
    sigma = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [2, 1, 1], [2, 2, 2]])
    tr = D.TruncationTrace.from_sigma(sigma)
    assert tr.tau_of(1) == 1 and tr.tau_of(2) == 3 and tr.tau_of(3) == np.inf
    assert tr.tau_i(2, 1) == 3
    assert tr.tau_i(2, 2) == 4
    # agent 2 never holds count 1 before count 2 appears elsewhere
    assert tr.tau_tilde(2, 1) == min(3, 3)
    assert tr.tau_tilde(0, 2) == 3
    assert all(tr.tau_of(m) <= tr.tau_of(m + 1) for m in range(3))


def test_cessation_examples():
    c = D.detect_truncation_cessation([], 10_000)
    assert (c.sigma_final, c.last_event_step, c.still_truncating) == (0, None, False)
    evs = [TruncationEvent(3, 0, "own_overflow", 0, 0, 1), TruncationEvent(17, 1, "peer_lag", 0, 1, 1)]
    c = D.detect_truncation_cessation(evs, 10_000)
    assert (c.sigma_final, c.last_event_step, c.still_truncating) == (1, 17, False)
    late = evs + [TruncationEvent(9_500, 0, "own_overflow", 1, 1, 2)]
    assert D.detect_truncation_cessation(late, 10_000).still_truncating


# -- auxiliary sequences and the global recursion -------------------------------------

def linear_run(horizon=300, seed=0, noise=0.1, bounds=None):
    prob = P.synthetic_linear_problem(4, 2, seed=2, noise_std=noise)
    c = E.AlgorithmConfig(np.zeros(2), PowerSchedule(1.0), bounds or NoBounds(), horizon, seed=seed,
                          full_trace=True)
    return prob, c, E.run(prob, T.directed_ring(4), c, np.full((4, 2), 0.5))


def test_aux_equals_real_without_truncation():
    prob, c, res = linear_run()
    tr = res.trace
    trace = D.TruncationTrace.from_sigma(tr.sigma, res.events)
    aux = D.build_auxiliary_sequences(tr, trace, prob)
    np.testing.assert_array_equal(aux.x, tr.x)
    h = np.stack([prob.true_local_all(x) for x in tr.x[:-1]])
    np.testing.assert_allclose(aux.eps, tr.obs - h, atol=1e-12)
    assert not aux.pinned.any()
    v = D.check_lemma41(aux, T.directed_ring(4), tr.gammas, NoBounds(), prob, c.x_star)
    assert v == []


def test_aux_pins_after_global_increment_and_for_laggards():
    sc, res = scenario_run("lemma_pca", seed=1, horizon=300)
    tr = res.trace
    trace = D.TruncationTrace.from_sigma(tr.sigma, res.events)
    aux = D.build_auxiliary_sequences(tr, trace, sc.problem)
    g = tr.sigma.max(axis=1)
    ups = np.flatnonzero(np.diff(g) > 0) + 1
    assert ups.size >= 3
    for k in ups:
        np.testing.assert_array_equal(aux.x[k], np.tile(sc.x_star, (sc.n, 1)))
    lag = tr.sigma < g[:, None]
    assert lag.any()
    np.testing.assert_array_equal(aux.x[lag], np.tile(sc.x_star, (int(lag.sum()), 1)))
    again = D.build_auxiliary_sequences(tr, trace, sc.problem)
    np.testing.assert_array_equal(again.x, aux.x)
    np.testing.assert_array_equal(again.eps, aux.eps)


def test_aux_requires_observations():
    prob, _, res = linear_run(horizon=10)
    tr = res.trace
    short = E.Trajectory(tr.x, tr.sigma, tr.obs[:5], tr.gammas, tr.x_star)
    with pytest.raises(ValueError):
        D.build_auxiliary_sequences(short, D.TruncationTrace.from_sigma(tr.sigma), prob)


def test_lemma41_holds_on_static_topology():
    sc, res = scenario_run("lemma_pca", seed=2, horizon=2000)
    assert res.events
    v41, v42 = lemma_checks(sc, res.trace, res.events)
    assert v41 == [] and v42 == []


def test_lemma41_negative_control():
    sc, res = scenario_run("lemma_pca", seed=2, horizon=2000)
    bad = corrupt_sigma(res.trace)
    v41, _ = lemma_checks(sc, bad)
    assert len(v41) >= 1
    assert any(v.detail == "global truncation count mismatch" for v in v41)


def test_switching_gap_violations_are_all_explained():
    # on a switching topology, a lagging agent can gain an in-neighbour that
    # already holds the new count; the pinned sequence then differs from the
    # real one. Every mismatch must be of exactly that kind.
    sc = parse_scenario("lemma_pca")
    sched = T.example1_blocks(sc.n, seed=1)
    c = sc.config(seed=0, full_trace=True)
    c = E.AlgorithmConfig(c.x_star, c.gamma, c.bounds, 3000, seed=0, full_trace=True)
    res = E.run(sc.problem, sched, c, sc.initial_state(0))
    trace = D.TruncationTrace.from_sigma(res.trace.sigma, res.events)
    aux = D.build_auxiliary_sequences(res.trace, trace, sc.problem)
    v41 = D.check_lemma41(aux, sched, res.trace.gammas, sc.bounds, sc.problem, sc.x_star)
    assert v41, "expected the switching-topology gap to show up on this seed"
    assert all(D.explain_lemma41_violation(v, res.trace, sched) for v in v41)
    v42 = D.check_lemma42(trace, T.union_edge_set(sched, 0, 2), sched.b_window)
    assert v42 == []


def test_explanation_rejects_unrelated_mismatch():
    sc, res = scenario_run("lemma_pca", seed=2, horizon=500)
    v = D.Violation("lemma41", 100, 0, "auxiliary state mismatch")
    assert not D.explain_lemma41_violation(v, res.trace, sc.schedule)
    assert not D.explain_lemma41_violation(D.Violation("lemma41", 5, None, "x"), res.trace, sc.schedule)


# -- lemma42 check ------------------------------------------------------------------------------

def test_lemma42_vacuous_without_truncation():
    _, _, res = linear_run()
    trace = D.TruncationTrace.from_sigma(res.trace.sigma)
    assert D.check_lemma42(trace, T.union_edge_set(T.directed_ring(4), 0, 0), 1) == []


def test_lemma42_flags_slow_propagation():
    # agent 0 truncates at step 1 but agent 1 (one hop away) never catches up
    sigma = np.array([[0, 0, 0], [1, 0, 0], [1, 0, 1], [1, 1, 1]])
    trace = D.TruncationTrace.from_sigma(sigma)
    v = D.check_lemma42(trace, T.union_edge_set(T.directed_ring(3), 0, 0), 1)
    assert v and {x.check for x in v} >= {"lemma42_propagation"}


def test_lemma42_needs_strong_connectivity():
    trace = D.TruncationTrace.from_sigma(np.zeros((3, 2), dtype=int))
    with pytest.raises(T.TopologyError):
        D.check_lemma42(trace, T.EdgeSet.from_matrix(np.eye(2)), 1)


# -- noise partial sums -------------------------------------------------------------------

def pure_noise_run(gamma, noise=1.0, horizon=8000):
    prob = P.LinearProblem(np.zeros((2, 1, 1)), [0.0], noise_std=noise)
    c = E.AlgorithmConfig(np.zeros(1), gamma, NoBounds(), horizon, seed=3, full_trace=True)
    res = E.run(prob, T.complete_uniform(2), c, np.zeros((2, 1)))
    return D.noise_partial_sum_diag(res.trace, prob, np.inf)


def test_noise_sums_vanish_without_noise():
    ps = pure_noise_run(PowerSchedule(1.0), noise=0.0, horizon=200)
    assert np.all(ps.norms == 0)


def test_noise_sums_settle_with_square_summable_steps():
    ps = pure_noise_run(PowerSchedule(1.0))
    assert ps.tail_fluctuation().max() < 0.1


def test_noise_sums_wander_with_constant_steps():
    ps = pure_noise_run(lambda k: 1.0)
    assert ps.tail_fluctuation().max() > 0.1


def test_noise_diag_skipped_without_true_local():
    class Opaque(P.LinearProblem):
        def true_local_rows(self, idx, X):
            raise NotImplementedError

    prob = Opaque(np.zeros((1, 1, 1)), [0.0])
    c = E.AlgorithmConfig(np.zeros(1), PowerSchedule(1.0), NoBounds(), 5, full_trace=True)
    res = E.run(prob, T.complete_uniform(1), c, np.zeros((1, 1)))
    assert D.noise_partial_sum_diag(res.trace, prob, 1.0) is None


# -- invariants after cessation ---------------------------------------------------------

def test_counts_agree_after_cessation_and_mean_update_is_exact():
    sc, res = scenario_run("desk_pca", seed=0, horizon=3000)
    cess = D.detect_truncation_cessation(res.events, 3000)
    assert not cess.still_truncating
    tr = res.trace
    after = tr.sigma[cess.last_event_step:]
    assert np.all(after == cess.sigma_final)
    for k in range(cess.last_event_step, tr.steps, 97):
        assert D.mean_update_residual(tr, k) <= 1e-10
