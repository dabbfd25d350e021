"""Command-line client for the recognizer service.

Every subcommand is a thin wrapper that builds one request and POSTs it.  By
default the service runs in-process (no sockets involved); pass --server to
talk to a remote instance instead.  Train settings follow the usual
precedence: built-in defaults, then --config file entries, then flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import httpx

from .heads import HEAD_KINDS
from .training import TrainConfig


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_ints(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


_FLAG_TYPES = {"str": str, "int": int, "float": float, "bool": _parse_bool}


def _add_train_config_flags(p: argparse.ArgumentParser) -> None:
    # one flag per TrainConfig field, so the dataclass stays the single source
    for f in dataclasses.fields(TrainConfig):
        p.add_argument(
            f"--{f.name.replace('_', '-')}",
            dest=f"cfg_{f.name}",
            type=_FLAG_TYPES[f.type],
            default=None,
            help=f"override {f.name} (default {f.default})",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctclab", description="BiLSTM-CTC recognizer: synth, train, eval, decode."
    )
    parser.add_argument(
        "--server",
        default=None,
        metavar="URL",
        help="base URL of a running service; default runs everything in-process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus and write it to files")
    p.add_argument("--kind", choices=("separable", "contextual"), default="separable")
    p.add_argument("--num-utts", type=int, required=True)
    p.add_argument("--num-tokens", type=int, default=20)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--tokens", required=True, help="token table output path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--min-len", type=int, default=None)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--min-dwell", type=int, default=None)
    p.add_argument("--max-dwell", type=int, default=None)
    p.add_argument("--num-speakers", type=int, default=4)
    p.add_argument("--prefix", default="u")

    p = sub.add_parser("train", help="fit a recognizer on a corpus")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--tokens", required=True)
    p.add_argument("--out", required=True, help="directory for checkpoint and metrics log")
    p.add_argument("--config", default=None, help="key = value settings file")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--seeds", type=_parse_ints, default=None, metavar="N,N,...",
                   help="run a sweep, one training run per seed")
    _add_train_config_flags(p)

    p = sub.add_parser("eval", help="loss and token error rate against references")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--tokens", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--beam-size", type=int, default=0, help="0 means greedy")
    p.add_argument("--prior-weight", type=float, default=0.0)
    p.add_argument("--decoded-out", default=None, help="write decoded transcripts here")

    p = sub.add_parser("decode", help="transcribe utterances (no references needed)")
    p.add_argument("--features", required=True)
    p.add_argument("--tokens", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="write transcripts here")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--beam-size", type=int, default=0, help="0 means greedy")
    p.add_argument("--prior-weight", type=float, default=0.0)

    p = sub.add_parser("gradcheck", help="finite-difference check of the whole pipeline")
    p.add_argument("--heads", default=",".join(HEAD_KINDS), metavar="NAME,NAME,...")
    p.add_argument("--seeds", type=_parse_ints, default=[0], metavar="N,N,...")
    p.add_argument("--hidden", type=int, default=6)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-6)

    p = sub.add_parser("oracle", help="loss and beam search vs. brute-force enumeration")
    p.add_argument("--loss-instances", type=int, default=200)
    p.add_argument("--loss-max-frames", type=int, default=6)
    p.add_argument("--loss-max-labels", type=int, default=4)
    p.add_argument("--loss-tolerance", type=float, default=1e-10)
    p.add_argument("--beam-cases", type=int, default=50)
    p.add_argument("--beam-max-symbols", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def _payload(args: argparse.Namespace) -> tuple[str, dict]:
    if args.command == "synth":
        return "/synth", {
            "kind": args.kind,
            "num_utts": args.num_utts,
            "num_tokens": args.num_tokens,
            "features": args.features,
            "labels": args.labels,
            "token_table": args.tokens,
            "seed": args.seed,
            "noise": args.noise,
            "min_len": args.min_len,
            "max_len": args.max_len,
            "min_dwell": args.min_dwell,
            "max_dwell": args.max_dwell,
            "num_speakers": args.num_speakers,
            "prefix": args.prefix,
        }
    if args.command == "train":
        overrides = {
            f.name: getattr(args, f"cfg_{f.name}")
            for f in dataclasses.fields(TrainConfig)
            if getattr(args, f"cfg_{f.name}") is not None
        }
        return "/train", {
            "features": args.features,
            "labels": args.labels,
            "token_table": args.tokens,
            "out_dir": args.out,
            "config_file": args.config,
            "overrides": overrides,
            "resume": args.resume,
            "seeds": args.seeds,
        }
    if args.command == "eval":
        return "/eval", {
            "features": args.features,
            "labels": args.labels,
            "token_table": args.tokens,
            "checkpoint": args.checkpoint,
            "batch_size": args.batch_size,
            "beam_size": args.beam_size,
            "prior_weight": args.prior_weight,
            "decoded_out": args.decoded_out,
        }
    if args.command == "decode":
        return "/decode", {
            "features": args.features,
            "token_table": args.tokens,
            "checkpoint": args.checkpoint,
            "out": args.out,
            "batch_size": args.batch_size,
            "beam_size": args.beam_size,
            "prior_weight": args.prior_weight,
        }
    if args.command == "gradcheck":
        return "/gradcheck", {
            "heads": [h for h in args.heads.split(",") if h],
            "seeds": args.seeds,
            "hidden": args.hidden,
            "layers": args.layers,
            "eps": args.eps,
            "tolerance": args.tolerance,
        }
    if args.command == "oracle":
        return "/oracle", {
            "loss_instances": args.loss_instances,
            "loss_max_frames": args.loss_max_frames,
            "loss_max_labels": args.loss_max_labels,
            "loss_tolerance": args.loss_tolerance,
            "beam_cases": args.beam_cases,
            "beam_max_symbols": args.beam_max_symbols,
            "seed": args.seed,
        }
    raise AssertionError(f"unhandled command {args.command!r}")


def _client(server: str | None) -> httpx.Client:
    if server is not None:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        # some starlette builds grumble about their own test client import
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service.app import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    path, body = _payload(args)
    try:
        with _client(args.server) as client:
            resp = client.post(path, json=body)
    except httpx.HTTPError as e:
        print(f"request failed: {e}", file=sys.stderr)
        return 1

    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        print(f"error ({resp.status_code}): {detail}", file=sys.stderr)
        return 1

    data = resp.json()
    print(json.dumps(data, indent=2))
    # verification verbs double as exit status
    if args.command == "gradcheck" and not data["passed"]:
        return 1
    if args.command == "oracle" and not (data["loss_passed"] and data["beam_passed"]):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
