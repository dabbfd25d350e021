"""Feature/label I/O and the acoustic frontend transforms.

On-disk formats are plain text so corpora can be diffed and hand-edited:

* features: per utterance a header ``<utt_id> <speaker_id> <T> <D>`` followed
  by T whitespace-separated rows of D floats, utterances separated by one
  blank line. Floats are written with repr precision, so a read/write round
  trip is lossless.
* labels: one line per utterance, ``<utt_id> <tok> <tok> ...``.
* token table: one line per symbol, ``<symbol> <id>``; id 0 must be ``<blk>``.

Transform order is fixed: deltas -> per-speaker CMVN -> splicing -> frame
skipping. Each stage is a standalone function on one (T, D) array except
CMVN, which pools statistics across a speaker's utterances.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

BLANK_SYMBOL = "<blk>"


@dataclass
class FeatureSequence:
    utt_id: str
    speaker_id: str
    feats: np.ndarray  # (T, D) float64


class TokenTable:
    """Bidirectional symbol <-> id map; id 0 is the blank."""

    def __init__(self, symbols: Sequence[str]):
        symbols = list(symbols)
        if not symbols or symbols[0] != BLANK_SYMBOL:
            raise ValueError(f"token id 0 must be {BLANK_SYMBOL}, got {symbols[:1]}")
        if len(set(symbols)) != len(symbols):
            raise ValueError("duplicate symbols in token table")
        self.symbols = symbols
        self._ids = {s: i for i, s in enumerate(symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self._ids[t] for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.symbols[i] for i in ids]


# -- text I/O -------------------------------------------------------------------


def write_features(path, seqs: Sequence[FeatureSequence]) -> None:
    with open(path, "w") as f:
        for n, seq in enumerate(seqs):
            if n:
                f.write("\n")
            T, D = seq.feats.shape
            f.write(f"{seq.utt_id} {seq.speaker_id} {T} {D}\n")
            for row in seq.feats:
                f.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_features(path) -> list[FeatureSequence]:
    seqs = []
    lines = Path(path).read_text().splitlines()
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if len(head) != 4:
            raise ValueError(f"{path}:{i + 1}: bad utterance header {lines[i]!r}")
        utt_id, speaker_id, T, D = head[0], head[1], int(head[2]), int(head[3])
        rows = lines[i + 1 : i + 1 + T]
        if len(rows) != T:
            raise ValueError(f"{path}: utterance {utt_id} truncated")
        feats = np.array([[float(v) for v in r.split()] for r in rows])
        if feats.shape != (T, D):
            raise ValueError(f"{path}: utterance {utt_id} is {feats.shape}, header says {(T, D)}")
        seqs.append(FeatureSequence(utt_id, speaker_id, feats))
        i += 1 + T
    return seqs


def write_labels(path, labels: dict[str, list[str]]) -> None:
    with open(path, "w") as f:
        for utt_id, toks in labels.items():
            f.write(" ".join([utt_id, *toks]) + "\n")


def read_labels(path) -> dict[str, list[str]]:
    labels: dict[str, list[str]] = {}
    for n, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        utt_id, *toks = line.split()
        if utt_id in labels:
            raise ValueError(f"{path}:{n + 1}: duplicate utterance {utt_id}")
        labels[utt_id] = toks
    return labels


def write_tokens(path, table: TokenTable) -> None:
    with open(path, "w") as f:
        for i, s in enumerate(table.symbols):
            f.write(f"{s} {i}\n")


def read_tokens(path) -> TokenTable:
    entries = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        sym, idx = line.split()
        entries.append((int(idx), sym))
    entries.sort()
    if [i for i, _ in entries] != list(range(len(entries))):
        raise ValueError(f"{path}: token ids must be exactly 0..{len(entries) - 1}")
    return TokenTable([s for _, s in entries])


# -- transforms -----------------------------------------------------------------


def delta(feats: np.ndarray) -> np.ndarray:
    """Regression slope over a +/-2 frame window, edges replicated."""
    pad = np.pad(feats, ((2, 2), (0, 0)), mode="edge")
    # sum_{n=1,2} n * (x[t+n] - x[t-n]) / (2 * sum n^2)
    return (1.0 * (pad[3:-1] - pad[1:-3]) + 2.0 * (pad[4:] - pad[:-4])) / 10.0


def add_deltas(feats: np.ndarray) -> np.ndarray:
    """Append first and second order deltas: (T, D) -> (T, 3D)."""
    d1 = delta(feats)
    d2 = delta(d1)
    return np.concatenate([feats, d1, d2], axis=1)


def cmvn(seqs: Sequence[FeatureSequence], floor: float = 1e-8) -> list[FeatureSequence]:
    """Zero-mean unit-variance per dimension, statistics pooled per speaker."""
    by_speaker: dict[str, list[np.ndarray]] = {}
    for s in seqs:
        by_speaker.setdefault(s.speaker_id, []).append(s.feats)
    stats = {}
    for spk, mats in by_speaker.items():
        pooled = np.concatenate(mats, axis=0)
        mean = pooled.mean(axis=0)
        var = np.maximum(pooled.var(axis=0), floor)
        stats[spk] = (mean, np.sqrt(var))
    out = []
    for s in seqs:
        mean, std = stats[s.speaker_id]
        out.append(FeatureSequence(s.utt_id, s.speaker_id, (s.feats - mean) / std))
    return out


def splice(feats: np.ndarray, context: int = 1) -> np.ndarray:
    """Stack +/-context neighboring frames, edges replicated: (T, D) -> (T, (2c+1)D)."""
    if context < 1:
        return feats
    pad = np.pad(feats, ((context, context), (0, 0)), mode="edge")
    T = feats.shape[0]
    return np.concatenate([pad[k : k + T] for k in range(2 * context + 1)], axis=1)


def skip_frames(feats: np.ndarray, every: int) -> np.ndarray:
    """Keep frames 0, every, 2*every, ...; output length ceil(T / every)."""
    if every < 1:
        raise ValueError("skip factor must be >= 1")
    return feats[::every]


def apply_frontend(
    seqs: Sequence[FeatureSequence],
    deltas: bool = False,
    speaker_cmvn: bool = False,
    splice_context: int = 0,
    skip: int = 1,
) -> list[FeatureSequence]:
    """Run the enabled stages in their fixed order."""
    out = list(seqs)
    if deltas:
        out = [FeatureSequence(s.utt_id, s.speaker_id, add_deltas(s.feats)) for s in out]
    if speaker_cmvn:
        out = cmvn(out)
    if splice_context > 0:
        out = [
            FeatureSequence(s.utt_id, s.speaker_id, splice(s.feats, splice_context))
            for s in out
        ]
    if skip > 1:
        out = [FeatureSequence(s.utt_id, s.speaker_id, skip_frames(s.feats, skip)) for s in out]
    return out


# -- synthetic corpora ----------------------------------------------------------


def make_token_table(num_tokens: int) -> TokenTable:
    return TokenTable([BLANK_SYMBOL] + [f"t{k:02d}" for k in range(1, num_tokens + 1)])


def _token_string(rng: np.random.Generator, num_tokens: int, length: int) -> list[int]:
    """Uniform token string with no immediate repetition.

    Both generators emit a token as one contiguous centroid segment, so the
    boundary inside a repeated pair would carry no acoustic evidence at all;
    allowing repeats would just salt the corpus with guaranteed deletions.
    Repeat bookkeeping belongs to the loss and decoder tests.
    """
    toks = [int(rng.integers(1, num_tokens + 1))]
    while len(toks) < length:
        step = int(rng.integers(1, num_tokens))  # skip over the previous token
        toks.append((toks[-1] - 1 + step) % num_tokens + 1)
    return toks


def synth_corpus(
    num_utts: int,
    num_tokens: int = 20,
    min_len: int = 3,
    max_len: int = 10,
    min_dwell: int = 2,
    max_dwell: int = 5,
    noise: float = 0.3,
    seed: int = 0,
    num_speakers: int = 4,
    prefix: str = "u",
) -> tuple[list[FeatureSequence], dict[str, list[int]]]:
    """Separable corpus: token k emits a scaled one-hot plus Gaussian noise.

    Each utterance draws a token string (uniform length in [min_len, max_len])
    and holds every token for a uniform dwell in [min_dwell, max_dwell] frames.
    Frame-level identity is (noisily) unambiguous, so this checks plumbing and
    optimization, not modeling power.
    """
    rng = np.random.default_rng(seed)
    centroids = 2.0 * np.eye(num_tokens)
    feats, labels = [], {}
    for n in range(num_utts):
        utt_id = f"{prefix}{n:05d}"
        L = int(rng.integers(min_len, max_len + 1))
        toks = _token_string(rng, num_tokens, L)
        frames = []
        for k in toks:
            dwell = int(rng.integers(min_dwell, max_dwell + 1))
            base = centroids[k - 1]
            frames.append(base + noise * rng.normal(size=(dwell, num_tokens)))
        mat = np.concatenate(frames, axis=0)
        spk = f"s{n % num_speakers:02d}"
        feats.append(FeatureSequence(utt_id, spk, mat))
        labels[utt_id] = toks
    return feats, labels


def synth_corpus_contextual(
    num_utts: int,
    num_tokens: int = 20,
    min_len: int = 3,
    max_len: int = 8,
    min_dwell: int = 4,
    max_dwell: int = 6,
    noise: float = 0.3,
    seed: int = 0,
    num_speakers: int = 4,
    prefix: str = "u",
) -> tuple[list[FeatureSequence], dict[str, list[int]]]:
    """Context-coded corpus: single frames are ambiguous by construction.

    Token k is an ordered pair of centroids (an opener then a closer), emitted
    as the two halves of its dwell. Openers and closers come from disjoint
    pools, so any centroid run sequence parses into tokens uniquely -- but
    each opener is shared by many tokens and likewise each closer, so a frame
    alone never identifies its token. Per-frame label posteriors are therefore
    genuinely multimodal, and recognizers must integrate context across the
    half boundary to resolve them. Centroids are orthogonal one-hots, so the
    only hard part is the pairing, not centroid classification; dwells keep
    each half at two frames minimum.
    """
    rng = np.random.default_rng(seed)
    num_openers = int(np.ceil(np.sqrt(num_tokens)))
    num_closers = int(np.ceil(num_tokens / num_openers))
    centroids = 2.0 * np.eye(num_openers + num_closers)
    pairs = [
        (i, num_openers + j) for i in range(num_openers) for j in range(num_closers)
    ][:num_tokens]

    feats, labels = [], {}
    for n in range(num_utts):
        utt_id = f"{prefix}{n:05d}"
        L = int(rng.integers(min_len, max_len + 1))
        toks = _token_string(rng, num_tokens, L)
        frames = []
        for k in toks:
            dwell = int(rng.integers(max(min_dwell, 4), max_dwell + 1))
            open_c, close_c = pairs[k - 1]
            half = dwell // 2
            block = np.concatenate(
                [
                    np.tile(centroids[open_c], (dwell - half, 1)),
                    np.tile(centroids[close_c], (half, 1)),
                ],
                axis=0,
            )
            frames.append(block + noise * rng.normal(size=block.shape))
        mat = np.concatenate(frames, axis=0)
        spk = f"s{n % num_speakers:02d}"
        feats.append(FeatureSequence(utt_id, spk, mat))
        labels[utt_id] = toks
    return feats, labels
