"""Decoding the frame-level output distributions into label sequences.

``greedy_decode`` takes the per-frame argmax and collapses it; fast, and
exact only when one path dominates. ``prefix_beam_decode`` sums path
probabilities per label prefix as it sweeps the frames, so with a beam wider
than the number of reachable prefixes it returns the exact most-probable
*label sequence* (the marginal argmax), not just the best single path.

Scores may be prior-normalized first: dividing frame posteriors by the
training-label prior turns them into (scaled) likelihoods, which undoes the
model's bias toward frequent symbols, the blank above all.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ctc import BLANK, collapse

_NEG_INF = -np.inf


@dataclass(frozen=True)
class Hypothesis:
    labels: tuple[int, ...]
    log_score: float


def prior_normalize(log_probs: np.ndarray, prior: np.ndarray, weight: float = 1.0) -> np.ndarray:
    """log p(k|x) - weight * log prior(k); output is unnormalized by design."""
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape != (log_probs.shape[1],):
        raise ValueError(f"prior shape {prior.shape} vs {log_probs.shape[1]} symbols")
    if np.any(prior <= 0):
        raise ValueError("prior must be strictly positive; floor it first")
    return log_probs - weight * np.log(prior)[None, :]


def greedy_decode(scores: np.ndarray, blank: int = BLANK) -> list[int]:
    """Best path decode: per-frame argmax, then collapse repeats and blanks."""
    return collapse(np.argmax(scores, axis=1), blank)


def prefix_beam_decode(
    log_probs: np.ndarray, beam_size: int = 16, blank: int = BLANK
) -> list[Hypothesis]:
    """Beam search over label prefixes, summing all paths per prefix.

    Each live prefix carries two log masses: paths ending in blank and paths
    ending in the prefix's last symbol. A repeated symbol can only extend a
    prefix out of the blank mass; out of the non-blank mass it merges into
    the existing last symbol. Ties at the beam edge break deterministically
    (higher mass first, then lexicographic prefix).
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    T, N = log_probs.shape
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")

    beam: dict[tuple[int, ...], tuple[float, float]] = {(): (0.0, _NEG_INF)}
    for t in range(T):
        frame = log_probs[t]
        new: dict[tuple[int, ...], list[float]] = {}

        def mass(prefix) -> list[float]:
            return new.setdefault(prefix, [_NEG_INF, _NEG_INF])

        for prefix, (end_b, end_nb) in beam.items():
            total = np.logaddexp(end_b, end_nb)
            slot = mass(prefix)
            slot[0] = np.logaddexp(slot[0], total + frame[blank])
            last = prefix[-1] if prefix else None
            for k in range(N):
                if k == blank:
                    continue
                p = frame[k]
                if k == last:
                    # repeat merges into the same prefix; only a blank gap
                    # lets the symbol occur twice in a row
                    slot[1] = np.logaddexp(slot[1], end_nb + p)
                    ext = mass(prefix + (k,))
                    ext[1] = np.logaddexp(ext[1], end_b + p)
                else:
                    ext = mass(prefix + (k,))
                    ext[1] = np.logaddexp(ext[1], total + p)

        ranked = sorted(
            (kv for kv in new.items() if np.logaddexp(kv[1][0], kv[1][1]) > _NEG_INF),
            key=lambda kv: (-np.logaddexp(kv[1][0], kv[1][1]), kv[0]),
        )
        beam = {prefix: (b, nb) for prefix, (b, nb) in ranked[:beam_size]}

    hyps = [
        Hypothesis(prefix, float(np.logaddexp(b, nb))) for prefix, (b, nb) in beam.items()
    ]
    hyps.sort(key=lambda h: (-h.log_score, h.labels))
    return hyps


@dataclass
class EditCounts:
    substitutions: int
    deletions: int
    insertions: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def edit_counts(ref: Sequence[int], hyp: Sequence[int]) -> EditCounts:
    """Minimum-edit alignment counts; ties resolve sub > del > ins."""
    R, H = len(ref), len(hyp)
    # cost[i][j] = (errors, subs, dels, ins) for ref[:i] vs hyp[:j]
    cost = [[None] * (H + 1) for _ in range(R + 1)]
    cost[0][0] = (0, 0, 0, 0)
    for i in range(1, R + 1):
        e, s, d, n = cost[i - 1][0]
        cost[i][0] = (e + 1, s, d + 1, n)
    for j in range(1, H + 1):
        e, s, d, n = cost[0][j - 1]
        cost[0][j] = (e + 1, s, d, n + 1)
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            e, s, d, n = cost[i - 1][j - 1]
            if ref[i - 1] == hyp[j - 1]:
                best = (e, s, d, n)
            else:
                best = (e + 1, s + 1, d, n)
            e, s, d, n = cost[i - 1][j]
            if e + 1 < best[0]:
                best = (e + 1, s, d + 1, n)
            e, s, d, n = cost[i][j - 1]
            if e + 1 < best[0]:
                best = (e + 1, s, d, n + 1)
            cost[i][j] = best
    e, s, d, n = cost[R][H]
    return EditCounts(s, d, n)


def token_error_rate(
    refs: Sequence[Sequence[int]], hyps: Sequence[Sequence[int]]
) -> float:
    """Corpus-level TER: total edit errors over total reference tokens."""
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    total_err = sum(edit_counts(r, h).errors for r, h in zip(refs, hyps))
    total_ref = sum(len(r) for r in refs)
    if total_ref == 0:
        raise ValueError("empty reference corpus")
    return total_err / total_ref
