"""Projection heads: encoder states (B, D) -> output logits (B, N).

Three interchangeable designs:

* ``single``   one weight matrix, logits = h M.
* ``highrank`` a bank of n matrices squashed through tanh and mixed by
  frame-dependent softmax weights, then scaled by a sharpness factor. The
  tanh happens *before* mixing, so the map cannot be collapsed into one
  frame-dependent matrix -- this is what buys logit ranks above D.
* ``mom``      the same bank and weights but mixed linearly (no tanh, no
  sharpness). Per frame this is exactly one averaged matrix applied to h,
  which makes it the control arm for the nonlinearity.

The bank size n defaults to the number of output symbols. The mixing matrix
has no bias and starts at zero, so every frame begins with uniform weights.
"""

from __future__ import annotations

import numpy as np

from .numerics import ParamStore, Tape, Tensor

INIT_SCALE = 0.05
DEFAULT_SHARPNESS = 15.0


class SingleHead:
    kind = "single"

    def __init__(self, in_dim: int, num_symbols: int):
        self.in_dim = in_dim
        self.num_symbols = num_symbols

    def init_params(self, params: ParamStore, rng: np.random.Generator) -> None:
        params.add("head.m", rng.uniform(-INIT_SCALE, INIT_SCALE, (self.in_dim, self.num_symbols)))

    def apply(self, tape: Tape, params: ParamStore, h: Tensor) -> Tensor:
        return tape.matmul(h, params["head.m"])


class MixtureHead:
    """Bank of matrices with per-frame softmax mixing; tanh optional."""

    def __init__(
        self,
        in_dim: int,
        num_symbols: int,
        components: int | None = None,
        sharpness: float = DEFAULT_SHARPNESS,
        nonlinear: bool = True,
    ):
        self.in_dim = in_dim
        self.num_symbols = num_symbols
        self.components = components if components is not None else num_symbols
        if self.components < 1:
            raise ValueError("need at least one mixture component")
        self.sharpness = float(sharpness)
        self.nonlinear = nonlinear

    @property
    def kind(self) -> str:
        return "highrank" if self.nonlinear else "mom"

    def matrix_names(self) -> list[str]:
        return [f"head.m{j:02d}" for j in range(self.components)]

    def init_params(self, params: ParamStore, rng: np.random.Generator) -> None:
        for name in self.matrix_names():
            params.add(name, rng.uniform(-INIT_SCALE, INIT_SCALE, (self.in_dim, self.num_symbols)))
        params.add("head.w", np.zeros((self.in_dim, self.components)))

    def mixture_weights(self, tape: Tape, params: ParamStore, h: Tensor) -> Tensor:
        return tape.softmax_rows(tape.matmul(h, params["head.w"]))

    def apply(self, tape: Tape, params: ParamStore, h: Tensor) -> Tensor:
        weights = self.mixture_weights(tape, params, h)
        mixed = None
        for j, name in enumerate(self.matrix_names()):
            proj = tape.matmul(h, params[name])
            if self.nonlinear:
                proj = tape.tanh(proj)
            term = tape.mul_colvec(proj, tape.slice_cols(weights, j, j + 1))
            mixed = term if mixed is None else tape.add(mixed, term)
        if self.nonlinear:
            mixed = tape.scale(mixed, self.sharpness)
        return mixed


HEAD_KINDS = ("single", "highrank", "mom")


def make_head(
    kind: str,
    in_dim: int,
    num_symbols: int,
    components: int | None = None,
    sharpness: float = DEFAULT_SHARPNESS,
):
    if kind == "single":
        return SingleHead(in_dim, num_symbols)
    if kind == "highrank":
        return MixtureHead(in_dim, num_symbols, components, sharpness, nonlinear=True)
    if kind == "mom":
        return MixtureHead(in_dim, num_symbols, components, sharpness, nonlinear=False)
    raise ValueError(f"unknown head kind {kind!r}; expected one of {HEAD_KINDS}")
