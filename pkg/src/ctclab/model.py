"""The recognizer: stacked BiLSTM encoder plus an exchangeable logit head.

Batches are padded to the longest member. The encoder masks padded steps to
zero, every step's states are then flattened time-major into one matrix so
the head runs exactly once per batch, and each utterance's logit rows are
gathered back out for its own loss. Padding therefore changes no utterance's
loss: the batch loss is exactly the mean of the standalone per-utterance
losses.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ctc import ctc_loss
from .encoder import init_encoder, run_encoder
from .heads import make_head
from .numerics import ParamStore, Tape, Tensor, log_softmax_rows


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_symbols: int          # includes the blank at id 0
    hidden: int = 320
    layers: int = 4
    head: str = "single"
    components: int = 0       # 0 -> one mixture component per output symbol
    sharpness: float = 15.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class Model:
    def __init__(self, config: ModelConfig):
        self.config = config
        self.head = make_head(
            config.head,
            in_dim=2 * config.hidden,
            num_symbols=config.num_symbols,
            components=config.components or None,
            sharpness=config.sharpness,
        )

    def init_params(self, seed: int) -> ParamStore:
        rng = np.random.default_rng(seed)
        params = ParamStore()
        init_encoder(params, rng, self.config.input_dim, self.config.hidden, self.config.layers)
        self.head.init_params(params, rng)
        return params

    def batch_logits(
        self, tape: Tape, params: ParamStore, feats: Sequence[np.ndarray]
    ) -> tuple[list[Tensor], list[int]]:
        """Per-utterance (T_b, N) logits for a list of (T_b, D) inputs."""
        xs, masks, lengths = pad_batch(feats)
        states = run_encoder(tape, params, xs, masks, self.config.hidden, self.config.layers)
        flat = tape.vstack(states)  # (T_max * B, 2H), time-major
        logits = self.head.apply(tape, params, flat)
        batch = len(feats)
        per_utt = []
        for b, T in enumerate(lengths):
            idx = np.arange(T) * batch + b
            per_utt.append(tape.take_rows(logits, idx))
        return per_utt, lengths

    def batch_loss(
        self,
        tape: Tape,
        params: ParamStore,
        feats: Sequence[np.ndarray],
        labels: Sequence[Sequence[int]],
    ) -> Tensor:
        """Mean per-utterance CTC loss over the batch."""
        if len(feats) != len(labels):
            raise ValueError(f"{len(feats)} utterances vs {len(labels)} label sequences")
        per_utt, _ = self.batch_logits(tape, params, feats)
        total = None
        for utt_logits, utt_labels in zip(per_utt, labels):
            term = ctc_loss(tape, utt_logits, utt_labels)
            total = term if total is None else tape.add(total, term)
        return tape.scale(total, 1.0 / len(feats))

    def log_probs(
        self, params: ParamStore, feats: Sequence[np.ndarray]
    ) -> list[np.ndarray]:
        """Per-utterance (T_b, N) frame log-posteriors, no tape recorded."""
        tape = Tape(record=False)
        per_utt, _ = self.batch_logits(tape, params, feats)
        return [log_softmax_rows(u.data) for u in per_utt]


def pad_batch(
    feats: Sequence[np.ndarray],
) -> tuple[list[Tensor], list[np.ndarray], list[int]]:
    """Left-aligned padding: per-step (B, D) frames plus 0/1 row masks."""
    if not feats:
        raise ValueError("empty batch")
    dims = {m.shape[1] for m in feats}
    if len(dims) != 1:
        raise ValueError(f"inconsistent feature dims in batch: {sorted(dims)}")
    lengths = [m.shape[0] for m in feats]
    if min(lengths) < 1:
        raise ValueError("zero-length utterance in batch")
    batch, width = len(feats), dims.pop()
    t_max = max(lengths)
    xs, masks = [], []
    for t in range(t_max):
        rows = np.zeros((batch, width))
        for b, m in enumerate(feats):
            if t < lengths[b]:
                rows[b] = m[t]
        xs.append(Tensor(rows))
        masks.append((t < np.array(lengths)).astype(np.float64))
    return xs, masks, lengths
