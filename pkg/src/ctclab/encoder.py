"""Bidirectional peephole-LSTM encoder over padded frame batches.

State is carried as per-step (B, H) tensors. Padding is handled by forcing
h and c to zero on masked steps: the forward scan never reads past an
utterance's last frame, and the backward scan therefore starts from a fresh
zero state exactly at each utterance's true final frame. Padded-batch outputs
match unbatched runs frame for frame.

Gate layout in the fused weight matrices is [input, forget, cell, output].
Peepholes are diagonal (one weight per cell), taken from the previous cell
state for the input/forget gates and the current one for the output gate.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .numerics import ParamStore, Tape, Tensor

INIT_SCALE = 0.05
FORGET_BIAS = 5.0


def layer_param_names(layer: int, direction: str) -> list[str]:
    prefix = f"enc.l{layer}.{direction}"
    return [f"{prefix}.{p}" for p in ("b", "pf", "pi", "po", "wh", "wx")]


def init_encoder(
    params: ParamStore,
    rng: np.random.Generator,
    input_dim: int,
    hidden: int,
    layers: int,
) -> None:
    """Uniform(+/-0.05) weights, zero biases except forget-gate bias of 5,
    zero peepholes. The high forget bias keeps early memory writable."""
    for layer in range(layers):
        d = input_dim if layer == 0 else 2 * hidden
        for direction in ("fw", "bw"):
            prefix = f"enc.l{layer}.{direction}"
            params.add(f"{prefix}.wx", rng.uniform(-INIT_SCALE, INIT_SCALE, (d, 4 * hidden)))
            params.add(f"{prefix}.wh", rng.uniform(-INIT_SCALE, INIT_SCALE, (hidden, 4 * hidden)))
            bias = np.zeros(4 * hidden)
            bias[hidden : 2 * hidden] = FORGET_BIAS
            params.add(f"{prefix}.b", bias)
            for peep in ("pi", "pf", "po"):
                params.add(f"{prefix}.{peep}", np.zeros(hidden))


def lstm_step(
    tape: Tape,
    params: ParamStore,
    prefix: str,
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    hidden: int,
) -> tuple[Tensor, Tensor]:
    """One recurrence step on a (B, D) frame; returns (h, c), each (B, H)."""
    z = tape.add_rowvec(
        tape.add(
            tape.matmul(x, params[f"{prefix}.wx"]),
            tape.matmul(h_prev, params[f"{prefix}.wh"]),
        ),
        params[f"{prefix}.b"],
    )
    zi = tape.slice_cols(z, 0, hidden)
    zf = tape.slice_cols(z, hidden, 2 * hidden)
    zg = tape.slice_cols(z, 2 * hidden, 3 * hidden)
    zo = tape.slice_cols(z, 3 * hidden, 4 * hidden)

    i_gate = tape.sigmoid(tape.add(zi, tape.mul_rowvec(c_prev, params[f"{prefix}.pi"])))
    f_gate = tape.sigmoid(tape.add(zf, tape.mul_rowvec(c_prev, params[f"{prefix}.pf"])))
    g_cell = tape.tanh(zg)
    c = tape.add(tape.mul(f_gate, c_prev), tape.mul(i_gate, g_cell))
    o_gate = tape.sigmoid(tape.add(zo, tape.mul_rowvec(c, params[f"{prefix}.po"])))
    h = tape.mul(o_gate, tape.tanh(c))
    return h, c


def run_lstm(
    tape: Tape,
    params: ParamStore,
    prefix: str,
    xs: Sequence[Tensor],
    masks: Sequence[np.ndarray],
    hidden: int,
    reverse: bool = False,
) -> list[Tensor]:
    """Scan a layer over per-step (B, D) frames; returns per-step (B, H).

    Masked steps clamp h and c to zero so the opposite-direction scan of a
    padded batch starts cleanly at each utterance's true boundary.
    """
    batch = xs[0].shape[0]
    h = Tensor(np.zeros((batch, hidden)))
    c = Tensor(np.zeros((batch, hidden)))
    order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    out: dict[int, Tensor] = {}
    for t in order:
        h_new, c_new = lstm_step(tape, params, prefix, xs[t], h, c, hidden)
        h = tape.mask_rows(h_new, masks[t])
        c = tape.mask_rows(c_new, masks[t])
        out[t] = h
    return [out[t] for t in range(len(xs))]


def run_encoder(
    tape: Tape,
    params: ParamStore,
    xs: Sequence[Tensor],
    masks: Sequence[np.ndarray],
    hidden: int,
    layers: int,
) -> list[Tensor]:
    """Stacked BiLSTM: per-step (B, D) in, per-step (B, 2H) out."""
    feats = list(xs)
    for layer in range(layers):
        fw = run_lstm(tape, params, f"enc.l{layer}.fw", feats, masks, hidden)
        bw = run_lstm(tape, params, f"enc.l{layer}.bw", feats, masks, hidden, reverse=True)
        feats = [tape.hconcat(f, b) for f, b in zip(fw, bw)]
    return feats
