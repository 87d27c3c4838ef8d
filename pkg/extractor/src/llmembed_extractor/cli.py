"""Command line: JSONL corpus in, llmembed-format embedding bundle out.

Backbones are declared with repeatable flags; the stub form needs no model
weights and exists for pipeline dry runs:

    llmembed-extract --input corpus.jsonl --out data/ --split train \
        --stub llama2:5:4096 --stub bert:1:1024 --stub roberta:1:1024

    llmembed-extract --input corpus.jsonl --out data/ \
        --causal llama2=/models/llama-2-7b:depths=5 \
        --encoder bert=/models/bert-large:mode=cls \
        --encoder roberta=/models/roberta-large:mode=cls
"""

from __future__ import annotations

import argparse
import logging
import sys

from .backbones import StubBackbone, load_pretrained_causal, load_pretrained_encoder
from .extract import extract, read_corpus


def _parse_stub(text: str):
    try:
        name, depths, dim = text.split(":")
        return name, StubBackbone(n_depths=int(depths), dim=int(dim))
    except ValueError:
        raise SystemExit(f"llmembed-extract: bad --stub {text!r}, want name:depths:dim")


def _parse_options(rest: list[str]) -> dict[str, str]:
    options = {}
    for part in rest:
        key, _, value = part.partition("=")
        options[key] = value
    return options


def _parse_depths(text: str) -> tuple[int, ...]:
    # "5" means the last 5 blocks; "1,3,5" is an explicit list
    if "," in text:
        return tuple(int(d) for d in text.split(","))
    return tuple(range(1, int(text) + 1))


def _parse_causal(text: str, max_length: int):
    name, _, spec = text.partition("=")
    path, *rest = spec.split(":")
    if not name or not path:
        raise SystemExit(f"llmembed-extract: bad --causal {text!r}")
    opts = _parse_options(rest)
    return name, load_pretrained_causal(
        path, depths=_parse_depths(opts.get("depths", "5")), max_length=max_length
    )


def _parse_encoder(text: str, max_length: int):
    name, _, spec = text.partition("=")
    path, *rest = spec.split(":")
    if not name or not path:
        raise SystemExit(f"llmembed-extract: bad --encoder {text!r}")
    opts = _parse_options(rest)
    return name, load_pretrained_encoder(
        path, mode=opts.get("mode", "cls"), max_length=max_length
    )


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="llmembed-extract", description=__doc__)
    parser.add_argument("--input", required=True, help="JSONL with text and label fields")
    parser.add_argument("--out", required=True)
    parser.add_argument("--split", default="train", choices=("train", "test"))
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--max-length", type=int, default=4096)
    parser.add_argument("--class-names", default=None, help="comma-separated")
    parser.add_argument("--stub", action="append", default=[], help="name:depths:dim")
    parser.add_argument("--causal", action="append", default=[], help="name=path[:depths=5]")
    parser.add_argument("--encoder", action="append", default=[], help="name=path[:mode=cls]")
    args = parser.parse_args(argv)

    backbones = {}
    info = {"backbones": {}}
    for text in args.stub:
        name, backbone = _parse_stub(text)
        backbones[name] = backbone
        info["backbones"][name] = {"kind": "stub"}
    for text in args.causal:
        name, backbone = _parse_causal(text, args.max_length)
        backbones[name] = backbone
        info["backbones"][name] = {
            "kind": "causal",
            "depths": list(backbone.depths),
            "max_length": args.max_length,
        }
    for text in args.encoder:
        name, backbone = _parse_encoder(text, args.max_length)
        backbones[name] = backbone
        info["backbones"][name] = {
            "kind": "encoder", "mode": backbone.mode, "max_length": args.max_length,
        }
    if not backbones:
        parser.error("declare at least one --stub/--causal/--encoder backbone")

    names = args.class_names.split(",") if args.class_names else None
    try:
        corpus = read_corpus(args.input, class_names=names)
        manifest = extract(
            corpus,
            backbones,
            args.out,
            split=args.split,
            batch_size=args.batch_size,
            extraction_info=info,
        )
    except (ValueError, OSError) as exc:
        print(f"llmembed-extract: error: {exc}", file=sys.stderr)
        return 1
    print(manifest)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
