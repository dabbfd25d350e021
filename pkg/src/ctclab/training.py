"""Deterministic training: Adam, step-down LR schedule, lossless checkpoints.

Same corpus, same config, same machine => byte-identical metrics logs. The
per-epoch batch order is drawn from a generator seeded with (seed, epoch), so
a run resumed from any checkpoint walks the same trajectory as one that never
stopped. Checkpoints are JSON with sorted keys; floats survive the round trip
exactly, and re-saving a loaded checkpoint reproduces the file byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ctc import label_prior, min_input_frames
from .decode import greedy_decode, prefix_beam_decode, prior_normalize, token_error_rate
from .frontend import FeatureSequence, apply_frontend
from .model import Model, ModelConfig
from .numerics import NonFiniteError, ParamStore, Tape, backward

CHECKPOINT_VERSION = 1


class TrainingDiverged(Exception):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss or gradient at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    # model
    head: str = "single"
    hidden: int = 320
    layers: int = 4
    components: int = 0        # 0 -> one mixture component per output symbol
    sharpness: float = 15.0
    # optimizer and schedule
    seed: int = 0
    lr: float = 0.001
    lr_decay: float = 0.7
    min_lr: float = 1e-6
    patience: int = 1          # epochs without val improvement before a decay
    batch_size: int = 32
    max_epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # frontend
    deltas: bool = False
    cmvn: bool = False
    splice_context: int = 0
    skip: int = 1
    # data and decoding
    val_fraction: float = 0.05
    beam_size: int = 0         # 0 = greedy decoding
    prior_weight: float = 0.0  # >0 divides posteriors by prior**weight

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(kind, raw: str):
    if kind is bool:
        low = raw.strip().lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return kind(raw)


def parse_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment; blanks ignored."""
    values: dict[str, str] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip()] = raw.strip()
    return values


def build_train_config(
    file_values: dict[str, str] | None = None, overrides: dict | None = None
) -> TrainConfig:
    """Defaults, then config file entries, then explicit overrides (flags win)."""
    # postponed annotations leave field types as their names
    kinds = {
        f.name: {"str": str, "int": int, "float": float, "bool": bool}[f.type]
        for f in dataclasses.fields(TrainConfig)
    }
    merged: dict = {}
    for key, raw in (file_values or {}).items():
        if key not in kinds:
            raise ValueError(f"unknown config key {key!r}")
        merged[key] = _coerce(kinds[key], raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in kinds:
            raise ValueError(f"unknown config key {key!r}")
        merged[key] = value
    return TrainConfig(**merged)


# -- data plumbing ---------------------------------------------------------------


@dataclass
class Dataset:
    utt_ids: list[str]
    feats: list[np.ndarray]
    labels: list[list[int]]

    def subset(self, keep: Sequence[int]) -> "Dataset":
        return Dataset(
            [self.utt_ids[i] for i in keep],
            [self.feats[i] for i in keep],
            [self.labels[i] for i in keep],
        )

    def __len__(self) -> int:
        return len(self.utt_ids)


def prepare_dataset(
    seqs: Sequence[FeatureSequence],
    labels: dict[str, Sequence[int]],
    config: TrainConfig,
) -> Dataset:
    """Frontend transforms, label alignment, and feasibility filtering.

    Utterances whose (possibly skip-shortened) frame count cannot emit their
    transcript are dropped with a warning instead of poisoning the loss.
    """
    processed = apply_frontend(
        seqs,
        deltas=config.deltas,
        speaker_cmvn=config.cmvn,
        splice_context=config.splice_context,
        skip=config.skip,
    )
    processed = sorted(processed, key=lambda s: s.utt_id)
    ids, feats, labs = [], [], []
    for seq in processed:
        if seq.utt_id not in labels:
            raise ValueError(f"no transcript for utterance {seq.utt_id}")
        utt_labels = [int(y) for y in labels[seq.utt_id]]
        if seq.feats.shape[0] < min_input_frames(utt_labels):
            warnings.warn(
                f"skipping {seq.utt_id}: {seq.feats.shape[0]} frames cannot emit "
                f"{len(utt_labels)} labels",
                stacklevel=2,
            )
            continue
        ids.append(seq.utt_id)
        feats.append(seq.feats)
        labs.append(utt_labels)
    if not ids:
        raise ValueError("every utterance was infeasible or missing a transcript")
    return Dataset(ids, feats, labs)


def is_validation_utt(utt_id: str, fraction: float) -> bool:
    """Stable hash split: membership depends only on the utterance id."""
    digest = hashlib.sha256(utt_id.encode()).hexdigest()
    return int(digest[:8], 16) % 10_000 < int(round(fraction * 10_000))


def split_dataset(ds: Dataset, fraction: float) -> tuple[Dataset, Dataset]:
    val_idx = [i for i, u in enumerate(ds.utt_ids) if is_validation_utt(u, fraction)]
    train_idx = [i for i in range(len(ds)) if i not in set(val_idx)]
    if not val_idx:  # tiny corpora: hold out the first utterance
        val_idx, train_idx = train_idx[:1], train_idx[1:]
    if not train_idx:
        raise ValueError("validation split swallowed the whole corpus")
    return ds.subset(train_idx), ds.subset(val_idx)


# -- optimizer --------------------------------------------------------------------


class Adam:
    """Bias-corrected Adam; update order is the store's name order."""

    def __init__(self, params: ParamStore, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros(p.shape) for name, p in params.items()}
        self.v = {name: np.zeros(p.shape) for name, p in params.items()}

    def step(self, params: ParamStore, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name in params.names():
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1**self.t)
            v_hat = self.v[name] / (1 - b2**self.t)
            params.assign(name, params[name].data - lr * m_hat / (np.sqrt(v_hat) + self.eps))


# -- checkpoints ------------------------------------------------------------------


def _arrays_to_lists(d: dict[str, np.ndarray]) -> dict:
    return {k: v.tolist() for k, v in d.items()}


def save_checkpoint(
    path,
    model_config: ModelConfig,
    train_config: TrainConfig,
    params: ParamStore,
    adam: Adam,
    epoch: int,
    lr: float,
    best_val: float,
    stale: int,
    prior: np.ndarray,
) -> None:
    blob = {
        "version": CHECKPOINT_VERSION,
        "model": model_config.to_dict(),
        "train": train_config.to_dict(),
        "epoch": epoch,
        "lr": lr,
        "best_val": best_val,
        "stale": stale,
        "prior": prior.tolist(),
        "adam": {
            "t": adam.t,
            "m": _arrays_to_lists(adam.m),
            "v": _arrays_to_lists(adam.v),
        },
        "params": {name: p.data.tolist() for name, p in params.items()},
    }
    Path(path).write_text(json.dumps(blob, sort_keys=True, separators=(",", ":")) + "\n")


def load_checkpoint(path) -> dict:
    blob = json.loads(Path(path).read_text())
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {blob.get('version')!r} not supported")
    return blob


def restore_params(blob: dict) -> ParamStore:
    params = ParamStore()
    for name in sorted(blob["params"]):
        params.add(name, np.array(blob["params"][name], dtype=np.float64))
    return params


def restore_adam(blob: dict, params: ParamStore, config: TrainConfig) -> Adam:
    adam = Adam(params, config.beta1, config.beta2, config.adam_eps)
    adam.t = blob["adam"]["t"]
    for name in params.names():
        adam.m[name] = np.array(blob["adam"]["m"][name], dtype=np.float64)
        adam.v[name] = np.array(blob["adam"]["v"][name], dtype=np.float64)
    return adam


def load_model(path) -> tuple[Model, ParamStore, np.ndarray, TrainConfig]:
    """Rebuild a trained recognizer from a checkpoint, ready to decode."""
    blob = load_checkpoint(path)
    model = Model(ModelConfig.from_dict(blob["model"]))
    params = restore_params(blob)
    prior = np.array(blob["prior"], dtype=np.float64)
    return model, params, prior, TrainConfig(**blob["train"])


# -- evaluation -------------------------------------------------------------------


@dataclass
class EvalResult:
    loss: float
    ter: float
    decoded: dict[str, list[int]]


def evaluate(
    model: Model,
    params: ParamStore,
    ds: Dataset,
    batch_size: int = 32,
    beam_size: int = 0,
    prior: np.ndarray | None = None,
    prior_weight: float = 0.0,
) -> EvalResult:
    """Mean loss plus decoded transcripts and corpus TER (no tape recorded)."""
    total_loss = 0.0
    decoded: dict[str, list[int]] = {}
    for lo in range(0, len(ds), batch_size):
        chunk = ds.subset(range(lo, min(lo + batch_size, len(ds))))
        tape = Tape(record=False)
        loss = model.batch_loss(tape, params, chunk.feats, chunk.labels)
        total_loss += loss.item() * len(chunk)
        for utt_id, lp in zip(chunk.utt_ids, model.log_probs(params, chunk.feats)):
            scores = lp
            if prior_weight > 0.0:
                if prior is None:
                    raise ValueError("prior_weight set but no prior given")
                scores = prior_normalize(lp, prior, prior_weight)
            if beam_size > 0:
                decoded[utt_id] = list(prefix_beam_decode(scores, beam_size)[0].labels)
            else:
                decoded[utt_id] = greedy_decode(scores)
    ter = token_error_rate(ds.labels, [decoded[u] for u in ds.utt_ids])
    return EvalResult(total_loss / len(ds), ter, decoded)


def decode_corpus(
    model: Model,
    params: ParamStore,
    seqs: Sequence[FeatureSequence],
    config: TrainConfig,
    batch_size: int = 32,
    beam_size: int = 0,
    prior: np.ndarray | None = None,
    prior_weight: float = 0.0,
) -> dict[str, list[int]]:
    """Decode raw utterances with no reference transcripts in sight.

    Applies the same frontend the checkpoint was trained with, so callers
    should pass the TrainConfig recovered by load_model.
    """
    processed = apply_frontend(
        seqs,
        deltas=config.deltas,
        speaker_cmvn=config.cmvn,
        splice_context=config.splice_context,
        skip=config.skip,
    )
    decoded: dict[str, list[int]] = {}
    for lo in range(0, len(processed), batch_size):
        chunk = processed[lo : lo + batch_size]
        feats = [s.feats for s in chunk]
        for seq, lp in zip(chunk, model.log_probs(params, feats)):
            scores = lp
            if prior_weight > 0.0:
                if prior is None:
                    raise ValueError("prior_weight set but no prior given")
                scores = prior_normalize(lp, prior, prior_weight)
            if beam_size > 0:
                decoded[seq.utt_id] = list(prefix_beam_decode(scores, beam_size)[0].labels)
            else:
                decoded[seq.utt_id] = greedy_decode(scores)
    return decoded


def schedule_step(
    val_loss: float, best_val: float, stale: int, lr: float, decay: float, patience: int
) -> tuple[float, int, float]:
    """Step-down schedule: decay lr after ``patience`` evals without a new best."""
    if val_loss < best_val:
        return val_loss, 0, lr
    stale += 1
    if stale >= patience:
        return best_val, 0, lr * decay
    return best_val, stale, lr


# -- training loop ----------------------------------------------------------------


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_ter: float
    lr: float

    def line(self) -> str:
        return (
            f"{self.epoch} {self.train_loss:.10f} {self.val_loss:.10f} "
            f"{self.val_ter:.6f} {self.lr:.10g}"
        )


@dataclass
class TrainResult:
    model: Model
    params: ParamStore
    metrics: list[EpochMetrics]
    prior: np.ndarray
    stop_reason: str
    checkpoint_path: Path | None = None
    metrics_path: Path | None = None


def train(
    seqs: Sequence[FeatureSequence],
    labels: dict[str, Sequence[int]],
    num_symbols: int,
    config: TrainConfig,
    out_dir=None,
    resume=None,
) -> TrainResult:
    """Fit a recognizer; write ``metrics.log`` and ``checkpoint.json`` if
    ``out_dir`` is given. ``resume`` continues a checkpointed run and
    reproduces the uninterrupted trajectory exactly."""
    ds = prepare_dataset(seqs, labels, config)
    train_ds, val_ds = split_dataset(ds, config.val_fraction)
    prior = label_prior(train_ds.labels, num_symbols)

    model_config = ModelConfig(
        input_dim=train_ds.feats[0].shape[1],
        num_symbols=num_symbols,
        hidden=config.hidden,
        layers=config.layers,
        head=config.head,
        components=config.components,
        sharpness=config.sharpness,
    )
    model = Model(model_config)

    if resume is not None:
        blob = load_checkpoint(resume)
        if blob["model"] != model_config.to_dict():
            raise ValueError("checkpoint was trained with a different model config")
        params = restore_params(blob)
        adam = restore_adam(blob, params, config)
        lr = blob["lr"]
        best_val = blob["best_val"]
        stale = blob["stale"]
        start_epoch = blob["epoch"] + 1
    else:
        params = model.init_params(config.seed)
        adam = Adam(params, config.beta1, config.beta2, config.adam_eps)
        lr = config.lr
        best_val = np.inf
        stale = 0
        start_epoch = 1

    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_path = checkpoint_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.log"
        checkpoint_path = out_dir / "checkpoint.json"
        metrics_path.write_text("")

    metrics: list[EpochMetrics] = []
    stop_reason = "max_epochs"
    epoch = start_epoch - 1
    while True:
        if lr < config.min_lr:
            stop_reason = "min_lr"
            break
        if epoch >= config.max_epochs:
            break
        epoch += 1

        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_ds))
        loss_sum = 0.0
        for batch_no, lo in enumerate(range(0, len(order), config.batch_size)):
            chunk = train_ds.subset(order[lo : lo + config.batch_size].tolist())
            try:
                tape = Tape()
                loss = model.batch_loss(tape, params, chunk.feats, chunk.labels)
                grads = backward_all(tape, loss, params)
                adam.step(params, grads, lr)
            except NonFiniteError as err:
                raise TrainingDiverged(epoch, batch_no) from err
            loss_sum += loss.item() * len(chunk)

        val = evaluate(model, params, val_ds, batch_size=config.batch_size)
        m = EpochMetrics(epoch, loss_sum / len(train_ds), val.loss, val.ter, lr)
        metrics.append(m)
        if metrics_path is not None:
            with open(metrics_path, "a") as f:
                f.write(m.line() + "\n")

        best_val, stale, lr = schedule_step(
            val.loss, best_val, stale, lr, config.lr_decay, config.patience
        )

        if checkpoint_path is not None:
            save_checkpoint(
                checkpoint_path, model_config, config, params, adam,
                epoch, lr, best_val, stale, prior,
            )

    return TrainResult(model, params, metrics, prior, stop_reason, checkpoint_path, metrics_path)


def backward_all(tape: Tape, loss, params: ParamStore) -> dict[str, np.ndarray]:
    """backward() plus a finiteness sweep so divergence is caught at the step."""
    grads = backward(tape, loss, params)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
    return grads


# -- multi-run drivers --------------------------------------------------------------


def train_sweep(
    seqs, labels, num_symbols, config: TrainConfig, seeds: Sequence[int], out_dir=None
) -> dict[int, TrainResult]:
    """One independent run per seed, each in its own subdirectory."""
    results = {}
    for seed in seeds:
        cfg = dataclasses.replace(config, seed=seed)
        sub = None if out_dir is None else Path(out_dir) / f"seed{seed}"
        results[seed] = train(seqs, labels, num_symbols, cfg, out_dir=sub)
    return results


def compare_heads(
    train_seqs,
    train_labels,
    test_seqs,
    test_labels,
    num_symbols: int,
    config: TrainConfig,
    heads: Sequence[str] = ("single", "highrank", "mom"),
    seeds: Sequence[int] = (0, 1, 2),
) -> tuple[str, dict[str, list[float]]]:
    """Train each head at each seed, report test TER per head (mean and runs).

    Returns a fixed-width text table plus the raw per-seed numbers.
    """
    results: dict[str, list[float]] = {}
    for head in heads:
        ters = []
        for seed in seeds:
            cfg = dataclasses.replace(config, head=head, seed=seed)
            run = train(train_seqs, train_labels, num_symbols, cfg)
            test_ds = prepare_dataset(test_seqs, test_labels, cfg)
            ev = evaluate(
                run.model, run.params, test_ds,
                batch_size=cfg.batch_size, beam_size=cfg.beam_size,
                prior=run.prior, prior_weight=cfg.prior_weight,
            )
            ters.append(ev.ter)
        results[head] = ters

    lines = [f"{'head':<10} {'mean_ter%':>9}  per_seed_ter%"]
    for head, ters in results.items():
        per_seed = " ".join(f"{t * 100:.2f}" for t in ters)
        lines.append(f"{head:<10} {np.mean(ters) * 100:>9.2f}  {per_seed}")
    return "\n".join(lines), results
