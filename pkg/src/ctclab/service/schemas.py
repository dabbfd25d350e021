"""Request/response bodies for the service.

Paths in requests are interpreted on the machine running the service; the
client never uploads feature data, it just points the server at files.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class SynthRequest(BaseModel):
    kind: Literal["separable", "contextual"] = "separable"
    num_utts: int = Field(gt=0)
    num_tokens: int = Field(default=20, gt=0)
    features: str
    labels: str
    token_table: str
    seed: int = 0
    noise: float = Field(default=0.3, ge=0.0)
    # None means "use the generator's default", which differs per kind
    min_len: int | None = Field(default=None, ge=1)
    max_len: int | None = Field(default=None, ge=1)
    min_dwell: int | None = Field(default=None, ge=1)
    max_dwell: int | None = Field(default=None, ge=1)
    num_speakers: int = Field(default=4, ge=1)
    prefix: str = "u"


class SynthResponse(BaseModel):
    utterances: int
    label_tokens: int
    frames: int
    features: str
    labels: str
    token_table: str


class TrainRequest(BaseModel):
    features: str
    labels: str
    token_table: str
    out_dir: str
    config_file: str | None = None
    overrides: dict[str, bool | int | float | str] = Field(default_factory=dict)
    resume: str | None = None
    seeds: list[int] | None = None  # sweep: one run per seed under out_dir/seed<n>


class EpochRow(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    val_ter: float
    lr: float


class TrainRunResponse(BaseModel):
    seed: int
    stop_reason: str
    epochs: int
    final: EpochRow | None
    checkpoint: str
    metrics_log: str


class TrainResponse(BaseModel):
    runs: list[TrainRunResponse]


class EvalRequest(BaseModel):
    features: str
    labels: str
    token_table: str
    checkpoint: str
    batch_size: int = Field(default=32, gt=0)
    beam_size: int = Field(default=0, ge=0)
    prior_weight: float = Field(default=0.0, ge=0.0)
    decoded_out: str | None = None


class EvalResponse(BaseModel):
    loss: float
    ter: float
    utterances: int
    decoded_out: str | None


class DecodeRequest(BaseModel):
    features: str
    token_table: str
    checkpoint: str
    out: str | None = None
    batch_size: int = Field(default=32, gt=0)
    beam_size: int = Field(default=0, ge=0)
    prior_weight: float = Field(default=0.0, ge=0.0)


class DecodeResponse(BaseModel):
    utterances: int
    out: str | None
    transcripts: dict[str, str]


class GradCheckRequest(BaseModel):
    heads: list[str] = Field(default_factory=lambda: ["single", "highrank", "mom"])
    seeds: list[int] = Field(default_factory=lambda: [0])
    hidden: int = Field(default=6, gt=0)
    layers: int = Field(default=2, gt=0)
    eps: float = Field(default=1e-5, gt=0.0)
    tolerance: float = Field(default=1e-6, gt=0.0)


class GradCheckRow(BaseModel):
    head: str
    seed: int
    parameters: int
    max_rel_err: float
    seconds: float


class GradCheckResponse(BaseModel):
    rows: list[GradCheckRow]
    max_rel_err: float
    tolerance: float
    passed: bool


class OracleRequest(BaseModel):
    loss_instances: int = Field(default=200, gt=0)
    loss_max_frames: int = Field(default=6, gt=0)
    loss_max_labels: int = Field(default=4, gt=0)
    loss_tolerance: float = Field(default=1e-10, gt=0.0)
    beam_cases: int = Field(default=50, gt=0)
    beam_max_symbols: int = Field(default=3, gt=1)
    seed: int = 0


class OracleResponse(BaseModel):
    loss_instances: int
    loss_max_rel_err: float
    loss_seconds: float
    loss_passed: bool
    beam_cases: int
    beam_mismatches: int
    beam_seconds: float
    beam_passed: bool


class HealthResponse(BaseModel):
    status: str
    version: str
