import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctclab.ctc import (
    CtcInfeasibleError,
    augment,
    brute_force_loss,
    collapse,
    ctc_forward_backward,
    ctc_loss,
    label_prior,
    min_input_frames,
)
from ctclab.numerics import ParamStore, Tape, grad_check, logsumexp


def test_augment_interleaves_blanks():
    assert augment([3, 1, 1]).tolist() == [0, 3, 0, 1, 0, 1, 0]
    assert augment([]).tolist() == [0]


def test_collapse_drops_repeats_then_blanks():
    assert collapse([0, 2, 2, 0, 2, 1, 0, 0]) == [2, 2, 1]
    assert collapse([0, 0, 0]) == []
    assert collapse([]) == []


def test_min_input_frames_counts_forced_blanks():
    assert min_input_frames([]) == 0
    assert min_input_frames([1, 2, 3]) == 3
    assert min_input_frames([1, 1, 2, 2, 2]) == 5 + 3


@given(st.lists(st.integers(min_value=0, max_value=3), min_size=0, max_size=12))
@settings(max_examples=200, deadline=None)
def test_collapse_matches_groupby_oracle(path):
    # independent restatement: merge runs, then drop blanks
    assert collapse(path) == [k for k, _ in itertools.groupby(path) if k != 0]
    assert 0 not in collapse(path)


@given(st.lists(st.integers(min_value=1, max_value=3), min_size=0, max_size=8))
@settings(max_examples=200, deadline=None)
def test_augmented_sequence_collapses_back_when_spread(labels):
    # emitting each augmented state once is itself a valid path
    assert collapse(augment(labels)) == labels


def _random_instance(rng, max_T=6, max_K=4):
    """Random (logits, labels) pair guaranteed feasible."""
    while True:
        N = int(rng.integers(2, max_K + 2))  # blank + 1..max_K real symbols
        T = int(rng.integers(1, max_T + 1))
        L = int(rng.integers(0, min(T, 4) + 1))
        labels = rng.integers(1, N, size=L).tolist()
        if min_input_frames(labels) <= T:
            logits = rng.normal(size=(T, N)) * 2.0
            return logits, labels


def test_loss_matches_brute_force_enumeration():
    rng = np.random.default_rng(42)
    for _ in range(60):
        logits, labels = _random_instance(rng)
        got = ctc_forward_backward(logits, labels).loss
        want = brute_force_loss(logits, labels)
        assert abs(got - want) / max(1.0, abs(want)) < 1e-12


def test_empty_label_sequence_is_all_blank_probability():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(4, 3))
    res = ctc_forward_backward(logits, [])
    lp = logits - logsumexp_rows(logits)
    assert res.loss == pytest.approx(-lp[:, 0].sum(), abs=1e-12)


def logsumexp_rows(a):
    return np.array([[logsumexp(row)] for row in a])


def test_repeated_labels_block_the_skip_transition():
    # [1, 1] in 3 frames has exactly one path: 1, blank, 1
    logits = np.log(np.full((3, 2), 0.5))
    res = ctc_forward_backward(logits, [1, 1])
    assert res.loss == pytest.approx(-3 * np.log(0.5), abs=1e-12)


def test_infeasible_raises():
    with pytest.raises(CtcInfeasibleError):
        ctc_forward_backward(np.zeros((2, 4)), [1, 2, 3])
    with pytest.raises(CtcInfeasibleError):
        ctc_forward_backward(np.zeros((2, 4)), [1, 1])  # repeat needs 3 frames


def test_blank_label_rejected():
    with pytest.raises(ValueError):
        ctc_forward_backward(np.zeros((3, 4)), [0, 1])


def test_alpha_beta_tile_the_total_probability_at_every_frame():
    rng = np.random.default_rng(9)
    for _ in range(20):
        logits, labels = _random_instance(rng)
        res = ctc_forward_backward(logits, labels)
        ab = res.log_alpha + res.log_beta
        for t in range(ab.shape[0]):
            assert logsumexp(ab[t]) == pytest.approx(res.logp, abs=1e-10)


def test_gradient_rows_sum_to_zero():
    rng = np.random.default_rng(17)
    for _ in range(20):
        logits, labels = _random_instance(rng)
        res = ctc_forward_backward(logits, labels)
        assert np.max(np.abs(res.grad_logits.sum(axis=1))) < 1e-12


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(23)
    for _ in range(5):
        logits, labels = _random_instance(rng, max_T=5, max_K=3)
        ps = ParamStore()
        ps.add("logits", logits)

        def build(tape, params):
            return ctc_loss(tape, params["logits"], labels)

        assert grad_check(build, ps, eps=1e-5) < 1e-8


def test_loss_decreases_along_negative_gradient():
    rng = np.random.default_rng(31)
    logits, labels = _random_instance(rng)
    res = ctc_forward_backward(logits, labels)
    stepped = ctc_forward_backward(logits - 0.1 * res.grad_logits, labels)
    assert stepped.loss < res.loss


def test_brute_force_guards_explosion():
    with pytest.raises(ValueError):
        brute_force_loss(np.zeros((30, 10)), [1])


def test_label_prior_blank_mass():
    # one utterance of length L: blanks are (L+1) of (2L+1) augmented symbols
    prior = label_prior([[1, 2, 3, 1]], num_symbols=5)
    assert prior[0] == pytest.approx(5 / 9)
    assert prior[1] == pytest.approx(2 / 9)
    assert prior[4] == pytest.approx(1e-8, rel=1e-3)  # floored, not zero
    assert prior.sum() == pytest.approx(1.0, abs=1e-15)


def test_label_prior_pools_over_utterances():
    prior = label_prior([[1], [2, 2]], num_symbols=3)
    # augmented: (b 1 b) and (b 2 b 2 b) -> blanks 5/8, ones 1/8, twos 2/8
    assert prior[0] == pytest.approx(5 / 8)
    assert prior[1] == pytest.approx(1 / 8)
    assert prior[2] == pytest.approx(2 / 8)
