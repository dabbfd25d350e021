"""Self-checks runnable from the CLI and service.

Two families: oracle comparisons (the lattice loss against explicit path
enumeration, the beam decoder against explicit marginal enumeration) and an
end-to-end gradient check that pushes finite differences through the whole
frontend -> encoder -> head -> loss pipeline.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .ctc import brute_force_loss, collapse, ctc_forward_backward, min_input_frames
from .decode import prefix_beam_decode
from .frontend import synth_corpus
from .model import Model, ModelConfig
from .numerics import ParamStore, Tape, Tensor, grad_check, log_softmax_rows
from .training import TrainConfig, prepare_dataset


def random_ctc_instance(rng: np.random.Generator, max_frames: int, max_labels: int):
    """Feasible (logits, labels) with alphabet size drawn up to max_labels+1."""
    while True:
        num_symbols = int(rng.integers(2, max_labels + 2))
        frames = int(rng.integers(1, max_frames + 1))
        length = int(rng.integers(0, min(frames, max_labels) + 1))
        labels = rng.integers(1, num_symbols, size=length).tolist()
        if min_input_frames(labels) <= frames:
            return rng.normal(size=(frames, num_symbols)) * 2.0, labels


@dataclass
class OracleReport:
    instances: int
    max_rel_err: float
    seconds: float


def ctc_oracle_check(
    instances: int = 200, max_frames: int = 6, max_labels: int = 4, seed: int = 0
) -> OracleReport:
    """Lattice loss vs. explicit path enumeration on random feasible cases."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(instances):
        logits, labels = random_ctc_instance(rng, max_frames, max_labels)
        fast = ctc_forward_backward(logits, labels).loss
        slow = brute_force_loss(logits, labels)
        worst = max(worst, abs(fast - slow) / max(1.0, abs(fast), abs(slow)))
    return OracleReport(instances, worst, time.perf_counter() - start)


def exact_label_marginals(log_probs: np.ndarray, blank: int = 0) -> dict[tuple, float]:
    """Total probability of every label sequence, by explicit enumeration."""
    T, N = log_probs.shape
    if N**T > 2_000_000:
        raise ValueError(f"{N}**{T} paths is too many to enumerate")
    probs = np.exp(log_probs)
    out: dict[tuple, float] = {}
    for path in itertools.product(range(N), repeat=T):
        p = math.prod(probs[t, k] for t, k in enumerate(path))
        key = tuple(collapse(path, blank))
        out[key] = out.get(key, 0.0) + p
    return out


@dataclass
class BeamReport:
    cases: int
    mismatches: int
    seconds: float


def beam_oracle_check(
    cases: int = 50, max_frames: int = 6, max_symbols: int = 3, seed: int = 0
) -> BeamReport:
    """Exhaustive-beam argmax vs. enumerated exact marginal argmax."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(cases):
        T = int(rng.integers(1, max_frames + 1))
        N = int(rng.integers(2, max_symbols + 2))
        lp = log_softmax_rows(rng.normal(size=(T, N)) * 2.0)
        marginals = exact_label_marginals(lp)
        want = max(marginals.items(), key=lambda kv: (kv[1], kv[0]))[0]
        got = prefix_beam_decode(lp, beam_size=1_000_000)[0].labels
        if got != want:
            mismatches += 1
    return BeamReport(cases, mismatches, time.perf_counter() - start)


@dataclass
class GradCheckReport:
    head: str
    seed: int
    parameters: int
    max_rel_err: float
    seconds: float


def pipeline_grad_check(
    head: str = "single",
    seed: int = 0,
    hidden: int = 6,
    layers: int = 2,
    num_tokens: int = 3,
    num_utts: int = 2,
    skip: int = 2,
    eps: float = 1e-5,
) -> GradCheckReport:
    """Finite-difference check through the entire pipeline.

    A tiny skip-framed synthetic batch runs through a stacked BiLSTM and the
    chosen head into the CTC loss; every parameter slot is probed centrally.
    """
    config = TrainConfig(head=head, hidden=hidden, layers=layers, skip=skip, seed=seed)
    seqs, labels = synth_corpus(
        num_utts, num_tokens=num_tokens, min_len=2, max_len=3,
        min_dwell=2, max_dwell=3, seed=seed,
    )
    ds = prepare_dataset(seqs, labels, config)
    model = Model(
        ModelConfig(
            input_dim=ds.feats[0].shape[1],
            num_symbols=num_tokens + 1,
            hidden=hidden,
            layers=layers,
            head=head,
        )
    )
    params = model.init_params(seed)
    # nudge mixing weights off zero so their gradients are non-degenerate
    if "head.w" in params:
        rng = np.random.default_rng(seed + 1)
        params.assign("head.w", rng.normal(size=params["head.w"].shape) * 0.1)

    def build(tape: Tape, ps: ParamStore) -> Tensor:
        return model.batch_loss(tape, ps, ds.feats, ds.labels)

    start = time.perf_counter()
    err = grad_check(build, params, eps=eps)
    return GradCheckReport(head, seed, params.num_scalars(), err, time.perf_counter() - start)
