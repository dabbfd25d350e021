"""Connectionist temporal classification: loss, gradient, and oracles.

The loss marginalizes over all frame-level paths that collapse (drop repeats,
then blanks) to the target label sequence. The forward-backward recursions run
entirely in log space over the blank-augmented state lattice
``blank, y1, blank, y2, ..., yL, blank`` (2L+1 states).

``brute_force_loss`` enumerates every path explicitly and exists purely to
cross-check the dynamic program at toy sizes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import Tape, Tensor, log_softmax_rows, logsumexp, softmax_rows

BLANK = 0

_NEG_INF = -np.inf


class CtcInfeasibleError(Exception):
    """Too few input frames to emit the label sequence at all."""


def augment(labels: Sequence[int], blank: int = BLANK) -> np.ndarray:
    """Interleave blanks around labels: (y1..yL) -> (b, y1, b, ..., yL, b)."""
    labels = list(labels)
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext

def collapse(path: Sequence[int], blank: int = BLANK) -> list[int]:
    """Many-to-one path map: drop consecutive repeats, then drop blanks."""
    out: list[int] = []
    prev = None
    for p in path:
        if p != prev and p != blank:
            out.append(int(p))
        prev = p
    return out


def min_input_frames(labels: Sequence[int]) -> int:
    """Shortest path length that can emit ``labels``: L plus one forced blank
    per adjacent repeated pair."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


@dataclass
class CtcResult:
    """Loss with everything the backward pass and diagnostics need."""

    loss: float                 # -log p(labels | logits)
    logp: float
    grad_logits: np.ndarray     # d loss / d logits, shape (T, N)
    log_alpha: np.ndarray       # (T, S) forward scores, emission at t included
    log_beta: np.ndarray        # (T, S) suffix scores, emission at t excluded


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise logsumexp tolerating all-(-inf) rows."""
    m = a.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(a - safe[:, None]).sum(axis=1)
    with np.errstate(divide="ignore"):
        return np.where(np.isfinite(m), np.log(s) + safe, _NEG_INF)


def ctc_forward_backward(
    logits: np.ndarray, labels: Sequence[int], blank: int = BLANK
) -> CtcResult:
    """Exact CTC loss and gradient for one utterance.

    ``logits`` is (T, N) unnormalized; ``labels`` must avoid the blank id and
    fit in T frames, else CtcInfeasibleError. Gradient rows of a valid result
    sum to zero (shifting a frame's logits cannot change the loss).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValueError(f"logits must be (T, N), got {logits.shape}")
    T, N = logits.shape
    labels = [int(y) for y in labels]
    if any(y == blank or not (0 <= y < N) for y in labels):
        raise ValueError(f"labels must be in [0,{N}) and never the blank id {blank}")
    if T < min_input_frames(labels):
        raise CtcInfeasibleError(
            f"{T} frames cannot emit {len(labels)} labels "
            f"(needs >= {min_input_frames(labels)})"
        )

    ext = augment(labels, blank)
    S = ext.size
    lp = log_softmax_rows(logits)
    emit = lp[:, ext]  # (T, S): log-prob of each lattice state's symbol per frame

    # s-2 -> s hop is legal only when s emits a non-blank different from s-2
    can_skip = np.zeros(S, dtype=bool)
    if S > 2:
        can_skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    log_alpha = np.full((T, S), _NEG_INF)
    log_alpha[0, 0] = emit[0, 0]
    if S > 1:
        log_alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = log_alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        if S > 2:
            skip_in = np.where(can_skip[2:], prev[:-2], _NEG_INF)
            acc[2:] = np.logaddexp(acc[2:], skip_in)
        log_alpha[t] = acc + emit[t]

    # suffix scores leave out the emission at t so alpha_t * beta_t tiles p
    # without double counting: sum_s exp(alpha + beta) == p at every t
    log_beta = np.full((T, S), _NEG_INF)
    log_beta[T - 1, S - 1] = 0.0
    if S > 1:
        log_beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = log_beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        if S > 2:
            skip_out = np.where(can_skip[2:], nxt[2:], _NEG_INF)
            acc[:-2] = np.logaddexp(acc[:-2], skip_out)
        log_beta[t] = acc

    tail = log_alpha[T - 1, S - 1]
    if S > 1:
        tail = np.logaddexp(tail, log_alpha[T - 1, S - 2])
    logp = float(tail)
    if not np.isfinite(logp):
        raise CtcInfeasibleError("no feasible path survived the lattice")

    # occupancy per symbol: G[t, k] = logsumexp over states carrying symbol k
    ab = log_alpha + log_beta
    log_occ = np.full((T, N), _NEG_INF)
    for k in np.unique(ext):
        log_occ[:, k] = _logsumexp_rows(ab[:, ext == k])
    grad = softmax_rows(logits) - np.exp(log_occ - logp)

    return CtcResult(
        loss=-logp, logp=logp, grad_logits=grad, log_alpha=log_alpha, log_beta=log_beta
    )


def ctc_loss(tape: Tape, logits: Tensor, labels: Sequence[int], blank: int = BLANK) -> Tensor:
    """Scalar CTC loss as a tape primitive with its analytic adjoint."""
    res = ctc_forward_backward(logits.data, labels, blank)
    out = Tensor(res.loss)
    g = res.grad_logits
    return tape.record_node(out, (logits,), lambda gout: (gout * g,))


def brute_force_loss(
    logits: np.ndarray, labels: Sequence[int], blank: int = BLANK
) -> float:
    """-log p(labels) by summing every collapsing path explicitly.

    Independent of the lattice code on purpose: naive per-frame softmax,
    itertools path enumeration, compensated summation. Only usable when
    N**T is small; guarded to keep runtimes honest.
    """
    logits = np.asarray(logits, dtype=np.float64)
    T, N = logits.shape
    if N**T > 2_000_000:
        raise ValueError(f"{N}**{T} paths is too many to enumerate")
    labels = [int(y) for y in labels]

    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)

    terms = []
    for path in itertools.product(range(N), repeat=T):
        if collapse(path, blank) == labels:
            p = 1.0
            for t, k in enumerate(path):
                p *= probs[t, k]
            terms.append(p)
    total = math.fsum(terms)
    if total <= 0.0:
        raise CtcInfeasibleError("no path collapses to the target labels")
    return -math.log(total)


def label_prior(
    label_seqs: Sequence[Sequence[int]], num_symbols: int, blank: int = BLANK
) -> np.ndarray:
    """Symbol distribution of the blank-augmented training transcripts.

    Counts each utterance's augmented sequence (L labels + L+1 blanks), pools
    over utterances, and normalizes. Unseen symbols get a 1e-8 floor so the
    log prior stays finite; the floor is renormalized away.
    """
    counts = np.zeros(num_symbols, dtype=np.float64)
    for labels in label_seqs:
        labels = list(labels)
        counts[blank] += len(labels) + 1
        for y in labels:
            if y == blank or not (0 <= y < num_symbols):
                raise ValueError(f"label {y} out of range or blank")
            counts[y] += 1
    if counts.sum() == 0:
        raise ValueError("no transcripts to count")
    prior = counts / counts.sum()
    floored = np.maximum(prior, 1e-8)
    if np.any(floored != prior):  # renormalize only when the floor actually bit
        floored /= floored.sum()
    return floored
