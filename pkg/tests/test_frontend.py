import numpy as np
import pytest

from ctclab.frontend import (
    FeatureSequence,
    TokenTable,
    add_deltas,
    apply_frontend,
    cmvn,
    delta,
    make_token_table,
    read_features,
    read_labels,
    read_tokens,
    skip_frames,
    splice,
    synth_corpus,
    synth_corpus_contextual,
    write_features,
    write_labels,
    write_tokens,
)


def test_delta_of_a_ramp_by_hand():
    ramp = np.arange(5.0)[:, None]
    d = delta(ramp)[:, 0]
    # edge replication damps the slope at the boundaries
    assert d == pytest.approx([0.5, 0.8, 1.0, 0.8, 0.5])


def test_delta_constant_signal_is_zero():
    assert np.all(delta(np.full((7, 3), 2.5)) == 0.0)


def test_add_deltas_triples_width_and_keeps_statics():
    x = np.random.default_rng(0).normal(size=(6, 4))
    y = add_deltas(x)
    assert y.shape == (6, 12)
    assert np.array_equal(y[:, :4], x)
    assert np.allclose(y[:, 8:], delta(delta(x)))


def test_cmvn_pools_statistics_per_speaker():
    rng = np.random.default_rng(1)
    seqs = [
        FeatureSequence("u0", "spkA", rng.normal(3.0, 2.0, size=(50, 2))),
        FeatureSequence("u1", "spkA", rng.normal(3.0, 2.0, size=(30, 2))),
        FeatureSequence("u2", "spkB", rng.normal(-1.0, 0.5, size=(40, 2))),
    ]
    out = cmvn(seqs)
    pooled_a = np.concatenate([out[0].feats, out[1].feats])
    assert pooled_a.mean(axis=0) == pytest.approx([0, 0], abs=1e-12)
    assert pooled_a.var(axis=0) == pytest.approx([1, 1], rel=1e-12)
    assert out[2].feats.mean(axis=0) == pytest.approx([0, 0], abs=1e-12)
    # each utterance of a multi-utterance speaker is NOT individually centered
    assert abs(out[0].feats.mean()) > 1e-6


def test_cmvn_floors_constant_dimensions():
    seqs = [FeatureSequence("u0", "s", np.full((10, 1), 7.0))]
    out = cmvn(seqs)
    assert np.all(np.isfinite(out[0].feats))
    assert out[0].feats == pytest.approx(np.zeros((10, 1)))


def test_splice_stacks_neighbors_with_edge_replication():
    x = np.arange(8.0).reshape(4, 2)
    y = splice(x, context=1)
    assert y.shape == (4, 6)
    assert np.array_equal(y[:, 2:4], x)          # center block is the frame itself
    assert np.array_equal(y[0, 0:2], x[0])       # left edge replicated
    assert np.array_equal(y[-1, 4:6], x[-1])     # right edge replicated
    assert np.array_equal(y[1, 0:2], x[0])
    assert np.array_equal(y[1, 4:6], x[2])


def test_splice_widens_120_to_360():
    x = np.zeros((9, 120))
    assert splice(x, 1).shape == (9, 360)


def test_skip_frames_keeps_every_kth():
    x = np.arange(7.0)[:, None]
    y = skip_frames(x, 3)
    assert y[:, 0].tolist() == [0.0, 3.0, 6.0]
    assert skip_frames(x, 1).shape == (7, 1)
    assert skip_frames(np.zeros((10, 2)), 3).shape == (4, 2)  # ceil(10/3)


def test_apply_frontend_runs_stages_in_order():
    rng = np.random.default_rng(2)
    seqs = [FeatureSequence(f"u{i}", "s0", rng.normal(size=(12, 5))) for i in range(3)]
    out = apply_frontend(seqs, deltas=True, speaker_cmvn=True, splice_context=1, skip=3)
    # 5 -> deltas 15 -> splice 45; 12 frames -> ceil(12/3) = 4
    assert out[0].feats.shape == (4, 45)
    assert out[0].utt_id == "u0" and out[0].speaker_id == "s0"


def test_feature_file_round_trip_is_lossless(tmp_path):
    rng = np.random.default_rng(3)
    seqs = [
        FeatureSequence("utt_a", "spk1", rng.normal(size=(4, 3)) * 1e3),
        FeatureSequence("utt_b", "spk2", rng.normal(size=(1, 3)) * 1e-7),
    ]
    p = tmp_path / "feats.txt"
    write_features(p, seqs)
    back = read_features(p)
    assert [s.utt_id for s in back] == ["utt_a", "utt_b"]
    assert [s.speaker_id for s in back] == ["spk1", "spk2"]
    for a, b in zip(seqs, back):
        assert a.feats.tobytes() == b.feats.tobytes()


def test_feature_reader_rejects_truncation(tmp_path):
    p = tmp_path / "feats.txt"
    p.write_text("u0 s0 3 2\n1.0 2.0\n3.0 4.0\n")
    with pytest.raises(ValueError):
        read_features(p)


def test_label_file_round_trip(tmp_path):
    labels = {"u0": ["t01", "t02"], "u1": ["t03"]}
    p = tmp_path / "labels.txt"
    write_labels(p, labels)
    assert read_labels(p) == labels


def test_label_reader_rejects_duplicates(tmp_path):
    p = tmp_path / "labels.txt"
    p.write_text("u0 t01\nu0 t02\n")
    with pytest.raises(ValueError):
        read_labels(p)


def test_token_table_round_trip_and_blank_pinning(tmp_path):
    table = make_token_table(3)
    assert table.symbols == ["<blk>", "t01", "t02", "t03"]
    p = tmp_path / "tokens.txt"
    write_tokens(p, table)
    back = read_tokens(p)
    assert back.symbols == table.symbols
    assert back.encode(["t02", "t01"]) == [2, 1]
    assert back.decode([3]) == ["t03"]
    with pytest.raises(ValueError):
        TokenTable(["t01", "<blk>"])


def test_token_reader_rejects_id_gaps(tmp_path):
    p = tmp_path / "tokens.txt"
    p.write_text("<blk> 0\nt01 2\n")
    with pytest.raises(ValueError):
        read_tokens(p)


def test_synth_corpus_is_deterministic_and_in_range():
    a_feats, a_labels = synth_corpus(20, num_tokens=6, seed=11)
    b_feats, b_labels = synth_corpus(20, num_tokens=6, seed=11)
    assert a_labels == b_labels
    for x, y in zip(a_feats, b_feats):
        assert x.feats.tobytes() == y.feats.tobytes()
    for seq in a_feats:
        L = len(a_labels[seq.utt_id])
        assert 3 <= L <= 10
        assert 2 * L <= seq.feats.shape[0] <= 5 * L
        assert seq.feats.shape[1] == 6
        assert all(1 <= k <= 6 for k in a_labels[seq.utt_id])


def test_synth_corpus_frames_identify_tokens():
    feats, labels = synth_corpus(10, num_tokens=5, noise=0.1, seed=7)
    # nearest-centroid on single frames should align with the label string length
    for seq in feats:
        guesses = np.argmax(seq.feats, axis=1) + 1
        assert set(guesses) <= set(range(1, 6))


def test_contextual_corpus_frames_are_ambiguous():
    feats, labels = synth_corpus_contextual(40, num_tokens=20, noise=0.0, seed=5)
    # with 20 tokens over ceil(sqrt(20)) = 5 centroids, several tokens must
    # open with the same centroid: single opening frames cannot identify them
    opening = {}
    collisions = 0
    for seq in feats:
        first = tuple(np.round(seq.feats[0], 6))
        k = labels[seq.utt_id][0]
        if first in opening and opening[first] != k:
            collisions += 1
        opening.setdefault(first, k)
    assert collisions > 0


def test_contextual_corpus_deterministic():
    a = synth_corpus_contextual(5, num_tokens=9, seed=3)
    b = synth_corpus_contextual(5, num_tokens=9, seed=3)
    assert a[1] == b[1]
    assert all(x.feats.tobytes() == y.feats.tobytes() for x, y in zip(a[0], b[0]))
