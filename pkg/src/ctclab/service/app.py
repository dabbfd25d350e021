"""FastAPI wiring: route handlers delegate straight to the library.

The service holds no state between requests; everything durable lives in the
files named by the request (features, label lists, checkpoints).
"""

from __future__ import annotations

import dataclasses

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..ctc import CtcInfeasibleError
from ..diagnostics import beam_oracle_check, ctc_oracle_check, pipeline_grad_check
from ..frontend import (
    TokenTable,
    make_token_table,
    read_features,
    read_labels,
    read_tokens,
    synth_corpus,
    synth_corpus_contextual,
    write_features,
    write_labels,
    write_tokens,
)
from ..heads import HEAD_KINDS
from ..numerics import NumericsError
from ..training import (
    TrainingDiverged,
    build_train_config,
    decode_corpus,
    evaluate,
    load_model,
    parse_config_file,
    prepare_dataset,
    train,
    train_sweep,
)
from . import schemas


def _encode_labels(table: TokenTable, raw: dict[str, list[str]]) -> dict[str, list[int]]:
    out = {}
    for utt_id, toks in raw.items():
        try:
            out[utt_id] = table.encode(toks)
        except KeyError as e:
            raise ValueError(f"utterance {utt_id}: token {e.args[0]!r} not in table") from e
    return out


def _bad_request(request: Request, exc: Exception) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": str(exc)})


def _not_found(request: Request, exc: Exception) -> JSONResponse:
    return JSONResponse(status_code=404, content={"detail": str(exc)})


def _diverged(request: Request, exc: TrainingDiverged) -> JSONResponse:
    return JSONResponse(
        status_code=409,
        content={"detail": str(exc), "epoch": exc.epoch, "batch": exc.batch},
    )


def create_app() -> FastAPI:
    app = FastAPI(title="ctclab", version=__version__)
    app.add_exception_handler(ValueError, _bad_request)
    app.add_exception_handler(NumericsError, _bad_request)
    app.add_exception_handler(CtcInfeasibleError, _bad_request)
    app.add_exception_handler(FileNotFoundError, _not_found)
    app.add_exception_handler(TrainingDiverged, _diverged)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/synth", response_model=schemas.SynthResponse)
    def synth(req: schemas.SynthRequest) -> schemas.SynthResponse:
        gen = synth_corpus if req.kind == "separable" else synth_corpus_contextual
        shape = {
            k: v
            for k, v in {
                "min_len": req.min_len,
                "max_len": req.max_len,
                "min_dwell": req.min_dwell,
                "max_dwell": req.max_dwell,
            }.items()
            if v is not None
        }
        seqs, labels = gen(
            req.num_utts,
            req.num_tokens,
            noise=req.noise,
            seed=req.seed,
            num_speakers=req.num_speakers,
            prefix=req.prefix,
            **shape,
        )
        table = make_token_table(req.num_tokens)
        write_features(req.features, seqs)
        write_labels(req.labels, {u: table.decode(ids) for u, ids in labels.items()})
        write_tokens(req.token_table, table)
        return schemas.SynthResponse(
            utterances=len(seqs),
            label_tokens=sum(len(v) for v in labels.values()),
            frames=sum(s.feats.shape[0] for s in seqs),
            features=req.features,
            labels=req.labels,
            token_table=req.token_table,
        )

    @app.post("/train", response_model=schemas.TrainResponse)
    def train_endpoint(req: schemas.TrainRequest) -> schemas.TrainResponse:
        if req.seeds is not None and req.resume is not None:
            raise ValueError("resume applies to a single run, not a seed sweep")
        seqs = read_features(req.features)
        table = read_tokens(req.token_table)
        labels = _encode_labels(table, read_labels(req.labels))
        file_values = parse_config_file(req.config_file) if req.config_file else None
        config = build_train_config(file_values, req.overrides)
        if req.seeds is not None:
            results = train_sweep(seqs, labels, len(table), config, req.seeds, req.out_dir)
        else:
            results = {
                config.seed: train(
                    seqs, labels, len(table), config, out_dir=req.out_dir, resume=req.resume
                )
            }
        runs = []
        for seed, res in results.items():
            last = res.metrics[-1] if res.metrics else None
            runs.append(
                schemas.TrainRunResponse(
                    seed=seed,
                    stop_reason=res.stop_reason,
                    epochs=len(res.metrics),
                    final=None if last is None else schemas.EpochRow(**dataclasses.asdict(last)),
                    checkpoint=str(res.checkpoint_path),
                    metrics_log=str(res.metrics_path),
                )
            )
        return schemas.TrainResponse(runs=runs)

    @app.post("/eval", response_model=schemas.EvalResponse)
    def eval_endpoint(req: schemas.EvalRequest) -> schemas.EvalResponse:
        model, params, prior, tcfg = load_model(req.checkpoint)
        table = read_tokens(req.token_table)
        if len(table) != model.config.num_symbols:
            raise ValueError(
                f"token table has {len(table)} symbols, checkpoint expects "
                f"{model.config.num_symbols}"
            )
        seqs = read_features(req.features)
        labels = _encode_labels(table, read_labels(req.labels))
        ds = prepare_dataset(seqs, labels, tcfg)
        res = evaluate(
            model,
            params,
            ds,
            batch_size=req.batch_size,
            beam_size=req.beam_size,
            prior=prior,
            prior_weight=req.prior_weight,
        )
        if req.decoded_out:
            write_labels(req.decoded_out, {u: table.decode(ids) for u, ids in res.decoded.items()})
        return schemas.EvalResponse(
            loss=res.loss, ter=res.ter, utterances=len(ds), decoded_out=req.decoded_out
        )

    @app.post("/decode", response_model=schemas.DecodeResponse)
    def decode_endpoint(req: schemas.DecodeRequest) -> schemas.DecodeResponse:
        model, params, prior, tcfg = load_model(req.checkpoint)
        table = read_tokens(req.token_table)
        if len(table) != model.config.num_symbols:
            raise ValueError(
                f"token table has {len(table)} symbols, checkpoint expects "
                f"{model.config.num_symbols}"
            )
        seqs = read_features(req.features)
        decoded = decode_corpus(
            model,
            params,
            seqs,
            tcfg,
            batch_size=req.batch_size,
            beam_size=req.beam_size,
            prior=prior,
            prior_weight=req.prior_weight,
        )
        if req.out:
            write_labels(req.out, {u: table.decode(ids) for u, ids in decoded.items()})
        return schemas.DecodeResponse(
            utterances=len(decoded),
            out=req.out,
            transcripts={u: " ".join(table.decode(ids)) for u, ids in decoded.items()},
        )

    @app.post("/gradcheck", response_model=schemas.GradCheckResponse)
    def gradcheck(req: schemas.GradCheckRequest) -> schemas.GradCheckResponse:
        for head in req.heads:
            if head not in HEAD_KINDS:
                raise ValueError(f"unknown head {head!r}, expected one of {HEAD_KINDS}")
        rows = []
        for head in req.heads:
            for seed in req.seeds:
                rep = pipeline_grad_check(
                    head=head, seed=seed, hidden=req.hidden, layers=req.layers, eps=req.eps
                )
                rows.append(schemas.GradCheckRow(**dataclasses.asdict(rep)))
        worst = max((r.max_rel_err for r in rows), default=0.0)
        return schemas.GradCheckResponse(
            rows=rows, max_rel_err=worst, tolerance=req.tolerance, passed=worst < req.tolerance
        )

    @app.post("/oracle", response_model=schemas.OracleResponse)
    def oracle(req: schemas.OracleRequest) -> schemas.OracleResponse:
        loss_rep = ctc_oracle_check(
            req.loss_instances, req.loss_max_frames, req.loss_max_labels, req.seed
        )
        beam_rep = beam_oracle_check(req.beam_cases, req.loss_max_frames, req.beam_max_symbols, req.seed)
        return schemas.OracleResponse(
            loss_instances=loss_rep.instances,
            loss_max_rel_err=loss_rep.max_rel_err,
            loss_seconds=loss_rep.seconds,
            loss_passed=loss_rep.max_rel_err <= req.loss_tolerance,
            beam_cases=beam_rep.cases,
            beam_mismatches=beam_rep.mismatches,
            beam_seconds=beam_rep.seconds,
            beam_passed=beam_rep.mismatches == 0,
        )

    return app


app = create_app()
