import dataclasses

import numpy as np
import pytest

from ctclab.frontend import FeatureSequence, synth_corpus
from ctclab.numerics import ParamStore
from ctclab.training import (
    Adam,
    TrainConfig,
    TrainingDiverged,
    build_train_config,
    evaluate,
    is_validation_utt,
    load_checkpoint,
    parse_config_file,
    prepare_dataset,
    restore_adam,
    restore_params,
    save_checkpoint,
    schedule_step,
    split_dataset,
    train,
    train_sweep,
)

TINY = TrainConfig(
    head="single", hidden=6, layers=1, lr=0.01, batch_size=4,
    max_epochs=3, val_fraction=0.1,
)


def _tiny_corpus(n=14, num_tokens=4, seed=0, prefix="u"):
    return synth_corpus(
        n, num_tokens=num_tokens, min_len=2, max_len=4,
        min_dwell=2, max_dwell=3, seed=seed, prefix=prefix,
    )


# -- config ------------------------------------------------------------------


def test_parse_config_file(tmp_path):
    p = tmp_path / "run.conf"
    p.write_text(
        "# a comment\n"
        "lr = 0.02\n"
        "head = highrank   # trailing comment\n"
        "\n"
        "cmvn = true\n"
        "hidden=16\n"
    )
    values = parse_config_file(p)
    assert values == {"lr": "0.02", "head": "highrank", "cmvn": "true", "hidden": "16"}


def test_parse_config_rejects_garbage(tmp_path):
    p = tmp_path / "run.conf"
    p.write_text("just words\n")
    with pytest.raises(ValueError):
        parse_config_file(p)


def test_build_config_precedence():
    cfg = build_train_config(
        {"lr": "0.02", "hidden": "16", "cmvn": "yes"},
        {"lr": 0.5, "batch_size": 2, "head": None},  # None means flag not given
    )
    assert cfg.lr == 0.5          # flag beats file
    assert cfg.hidden == 16       # file beats default
    assert cfg.cmvn is True
    assert cfg.batch_size == 2
    assert cfg.head == "single"   # default survives a None flag


def test_build_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        build_train_config({"learning_rate": "0.1"})
    with pytest.raises(ValueError):
        build_train_config({}, {"nope": 3})
    with pytest.raises(ValueError):
        build_train_config({"cmvn": "maybe"})


# -- data plumbing -------------------------------------------------------------


def test_prepare_dataset_requires_transcripts():
    seqs, labels = _tiny_corpus()
    del labels[seqs[0].utt_id]
    with pytest.raises(ValueError):
        prepare_dataset(seqs, labels, TINY)


def test_prepare_dataset_skips_infeasible_with_warning():
    seqs, labels = _tiny_corpus()
    # skip framing shortens some utterances below their label count
    cfg = dataclasses.replace(TINY, skip=3)
    with pytest.warns(UserWarning, match="cannot emit"):
        ds = prepare_dataset(seqs, labels, cfg)
    assert 0 < len(ds) < len(seqs)


def test_validation_split_is_stable_and_disjoint():
    seqs, labels = _tiny_corpus(n=60)
    ds = prepare_dataset(seqs, labels, TINY)
    a1, b1 = split_dataset(ds, 0.1)
    a2, b2 = split_dataset(ds, 0.1)
    assert a1.utt_ids == a2.utt_ids and b1.utt_ids == b2.utt_ids
    assert set(a1.utt_ids).isdisjoint(b1.utt_ids)
    assert len(a1) + len(b1) == len(ds)
    assert all(is_validation_utt(u, 0.1) for u in b1.utt_ids)


def test_validation_split_never_empty():
    seqs, labels = _tiny_corpus(n=3)
    ds = prepare_dataset(seqs, labels, TINY)
    train_ds, val_ds = split_dataset(ds, 0.0001)  # nothing hashes into 0.01%
    assert len(val_ds) == 1
    assert len(train_ds) == len(ds) - 1


# -- optimizer -----------------------------------------------------------------


def test_adam_first_step_is_minus_lr():
    ps = ParamStore()
    ps.add("w", np.array([[2.0]]))
    adam = Adam(ps)
    adam.step(ps, {"w": np.array([[1.0]])}, lr=0.001)
    # bias correction makes the first step exactly lr * 1/(1 + eps)
    assert ps["w"].data[0, 0] == pytest.approx(2.0 - 0.001, abs=1e-10)
    assert adam.t == 1


def test_adam_step_direction_follows_sign_of_gradient():
    ps = ParamStore()
    ps.add("w", np.array([0.0, 0.0]))
    adam = Adam(ps)
    adam.step(ps, {"w": np.array([3.0, -0.5])}, lr=0.01)
    w = ps["w"].data
    assert w[0] < 0 < w[1]


# -- training loop ---------------------------------------------------------------


def test_train_writes_metrics_and_checkpoint(tmp_path):
    seqs, labels = _tiny_corpus()
    res = train(seqs, labels, num_symbols=5, config=TINY, out_dir=tmp_path)
    assert res.stop_reason == "max_epochs"
    assert len(res.metrics) == 3
    lines = (tmp_path / "metrics.log").read_text().splitlines()
    assert len(lines) == 3
    epoch, tl, vl, ter, lr = lines[0].split()
    assert int(epoch) == 1 and float(tl) > 0 and float(vl) > 0
    assert 0.0 <= float(ter) and float(lr) == 0.01
    assert (tmp_path / "checkpoint.json").exists()


def test_two_identical_runs_are_byte_identical(tmp_path):
    seqs, labels = _tiny_corpus()
    train(seqs, labels, 5, TINY, out_dir=tmp_path / "a")
    train(seqs, labels, 5, TINY, out_dir=tmp_path / "b")
    log_a = (tmp_path / "a" / "metrics.log").read_bytes()
    log_b = (tmp_path / "b" / "metrics.log").read_bytes()
    assert log_a == log_b
    ck_a = (tmp_path / "a" / "checkpoint.json").read_bytes()
    ck_b = (tmp_path / "b" / "checkpoint.json").read_bytes()
    assert ck_a == ck_b


def test_different_seeds_change_the_run(tmp_path):
    seqs, labels = _tiny_corpus()
    results = train_sweep(seqs, labels, 5, TINY, seeds=[0, 1], out_dir=tmp_path)
    assert set(results) == {0, 1}
    l0 = (tmp_path / "seed0" / "metrics.log").read_text()
    l1 = (tmp_path / "seed1" / "metrics.log").read_text()
    assert l0 != l1


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    seqs, labels = _tiny_corpus()
    res = train(seqs, labels, 5, TINY, out_dir=tmp_path)
    path = tmp_path / "checkpoint.json"
    blob = load_checkpoint(path)
    params = restore_params(blob)
    adam = restore_adam(blob, params, TINY)
    from ctclab.model import ModelConfig

    save_checkpoint(
        tmp_path / "resaved.json", ModelConfig.from_dict(blob["model"]),
        TrainConfig(**blob["train"]), params, adam,
        blob["epoch"], blob["lr"], blob["best_val"], blob["stale"],
        np.array(blob["prior"]),
    )
    assert (tmp_path / "resaved.json").read_bytes() == path.read_bytes()
    # restored parameters match the live ones bit for bit
    for name, live in res.params.items():
        assert params[name].data.tobytes() == live.data.tobytes()


def test_checkpoint_version_is_enforced(tmp_path):
    seqs, labels = _tiny_corpus()
    train(seqs, labels, 5, TINY, out_dir=tmp_path)
    import json

    blob = json.loads((tmp_path / "checkpoint.json").read_text())
    blob["version"] = 99
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(blob))
    with pytest.raises(ValueError):
        load_checkpoint(bad)


def test_resume_reproduces_the_uninterrupted_trajectory(tmp_path):
    seqs, labels = _tiny_corpus()
    full_cfg = dataclasses.replace(TINY, max_epochs=4)
    res_full = train(seqs, labels, 5, full_cfg, out_dir=tmp_path / "full")

    half_cfg = dataclasses.replace(TINY, max_epochs=2)
    train(seqs, labels, 5, half_cfg, out_dir=tmp_path / "half")
    res_resumed = train(
        seqs, labels, 5, full_cfg,
        out_dir=tmp_path / "resumed",
        resume=tmp_path / "half" / "checkpoint.json",
    )

    full_lines = (tmp_path / "full" / "metrics.log").read_text().splitlines()
    resumed_lines = (tmp_path / "resumed" / "metrics.log").read_text().splitlines()
    assert resumed_lines == full_lines[2:]
    for name, p in res_full.params.items():
        assert p.data.tobytes() == res_resumed.params[name].data.tobytes()


def test_resume_rejects_mismatched_model(tmp_path):
    seqs, labels = _tiny_corpus()
    train(seqs, labels, 5, TINY, out_dir=tmp_path)
    other = dataclasses.replace(TINY, hidden=8)
    with pytest.raises(ValueError):
        train(seqs, labels, 5, other, resume=tmp_path / "checkpoint.json")


def test_min_lr_stops_training():
    seqs, labels = _tiny_corpus()
    cfg = dataclasses.replace(TINY, lr=1e-7, max_epochs=10)
    res = train(seqs, labels, 5, cfg)
    assert res.stop_reason == "min_lr"
    assert res.metrics == []


def test_schedule_decays_after_patience_without_improvement():
    best, stale, lr = np.inf, 0, 0.1
    best, stale, lr = schedule_step(5.0, best, stale, lr, 0.5, 2)
    assert (best, stale, lr) == (5.0, 0, 0.1)       # improvement resets
    best, stale, lr = schedule_step(5.0, best, stale, lr, 0.5, 2)
    assert (best, stale, lr) == (5.0, 1, 0.1)       # equal is not better
    best, stale, lr = schedule_step(6.0, best, stale, lr, 0.5, 2)
    assert (best, stale, lr) == (5.0, 0, 0.05)      # patience hit, decay, reset
    best, stale, lr = schedule_step(4.0, best, stale, lr, 0.5, 2)
    assert (best, stale, lr) == (4.0, 0, 0.05)


def test_backward_all_flags_nonfinite_gradients():
    from ctclab.numerics import NonFiniteError, Tape, Tensor
    from ctclab.training import backward_all

    ps = ParamStore()
    ps.add("w", np.array([[1.0]]))
    tape = Tape()
    out = Tensor([[2.0]])
    # inject an adjoint that overflows: the sweep must refuse it
    tape.record_node(out, (ps["w"],), lambda g: (g * np.array([[np.inf]]),))
    loss = tape.sum_all(out)
    with pytest.raises(NonFiniteError):
        backward_all(tape, loss, ps)


def test_divergence_reports_epoch_and_batch(monkeypatch):
    import ctclab.training as training_mod

    seqs, labels = _tiny_corpus()
    calls = {"n": 0}
    real = training_mod.backward_all

    def failing(tape, loss, params):
        calls["n"] += 1
        if calls["n"] == 2:  # second batch of the first epoch
            raise training_mod.NonFiniteError("injected overflow")
        return real(tape, loss, params)

    monkeypatch.setattr(training_mod, "backward_all", failing)
    with pytest.raises(TrainingDiverged) as exc:
        train(seqs, labels, 5, TINY)
    assert exc.value.epoch == 1
    assert exc.value.batch == 1
    assert "epoch 1, batch 1" in str(exc.value)


def test_evaluate_beam_and_prior_paths():
    seqs, labels = _tiny_corpus(n=10)
    res = train(seqs, labels, 5, TINY)
    ds = prepare_dataset(seqs, labels, TINY)
    greedy = evaluate(res.model, res.params, ds)
    beamed = evaluate(
        res.model, res.params, ds, beam_size=4, prior=res.prior, prior_weight=0.5
    )
    assert set(greedy.decoded) == set(ds.utt_ids)
    assert 0.0 <= greedy.ter and 0.0 <= beamed.ter
    with pytest.raises(ValueError):
        evaluate(res.model, res.params, ds, prior_weight=0.5)  # prior missing


def test_prior_comes_from_training_transcripts():
    seqs, labels = _tiny_corpus(n=12)
    res = train(seqs, labels, 5, TINY)
    assert res.prior.shape == (5,)
    assert res.prior.sum() == pytest.approx(1.0, abs=1e-12)
    assert res.prior[0] > 0.5  # blanks dominate augmented transcripts
