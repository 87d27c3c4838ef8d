"""Command-line workflows: synth, train, eval, predict, report-cost.

Heavy imports happen inside the command handlers so ``--threads`` /
``--deterministic`` can pin BLAS thread counts via environment variables
before numpy loads.  Every failure exits nonzero with one machine-parsable
line: ``llmembed: error [E_XXX] message``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path


def _fail(code: str, message: str):
    print(f"llmembed: error [{code}] {message}", file=sys.stderr)
    raise SystemExit(1)


def _out_dir(args) -> Path:
    root = args.out or os.environ.get("LLMEMBED_OUT") or "."
    out = Path(root)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path, args) -> None:
    effective = {k: v for k, v in vars(args).items() if k != "func"}
    (out / "config.json").write_text(json.dumps(effective, indent=2, default=str) + "\n")


def _parse_source_spec(text: str):
    from .store import SourceSpec

    parts = text.split(":")
    if len(parts) != 3:
        _fail("E_USAGE", f"source spec {text!r} must look like name:depths:dim")
    name, depths, dim = parts
    try:
        return SourceSpec(name, int(depths), int(dim))
    except ValueError:
        _fail("E_USAGE", f"source spec {text!r}: depths and dim must be integers")


def cmd_synth(args) -> int:
    from .store import SyntheticSpec, generate_synthetic, write_bundle_files

    extra = {}
    if args.source:
        extra["sources"] = tuple(_parse_source_spec(s) for s in args.source)
    spec = SyntheticSpec(
        n_rows=args.rows,
        n_classes=args.classes,
        separation=args.separation,
        noise=args.noise,
        seed=args.seed,
        n_test_rows=args.test_rows,
        **extra,
    )
    train_bundle, test_bundle = generate_synthetic(spec)
    out = _out_dir(args)
    train_manifest = write_bundle_files(train_bundle, out)
    test_manifest = write_bundle_files(test_bundle, out)
    _echo_config(out, args)
    print(train_manifest)
    print(test_manifest)
    return 0


def _resolve_strategy(args):
    from .fusion import resolve_strategy

    return resolve_strategy(args.strategy, sigma=args.sigma, projection_dim=args.projection_dim)


def cmd_train(args) -> int:
    from .classifier import TrainConfig, save_checkpoint, train
    from .store import load_bundle

    strategy = _resolve_strategy(args)
    config = TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
        deterministic=args.deterministic,
        eval_every=args.eval_every,
        hidden_width=args.hidden_width,
        hidden_activation=args.hidden_activation,
    )
    t0 = time.perf_counter()
    train_bundle = load_bundle(args.manifest)
    test_bundle = load_bundle(args.test_manifest)
    t_load = time.perf_counter() - t0

    clf, projections, report = train(train_bundle, test_bundle, strategy, config)

    out = _out_dir(args)
    save_checkpoint(
        out / "checkpoint.llmc",
        clf,
        projections,
        strategy,
        train_bundle.class_names,
        train_bundle.source_dims(),
    )
    (out / "loss_curve.txt").write_text(report.loss_curve_text())
    doc = report.to_json_dict()
    doc["strategy"] = strategy.index
    doc["sigma"] = strategy.sigma
    (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n")
    timings = [
        {"phase": "load", "seconds": t_load},
        {"phase": "train", "seconds": report.phase_seconds["train"]},
        {"phase": "infer", "seconds": report.phase_seconds["eval"]},
    ]
    (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n")
    _echo_config(out, args)
    print(
        f"strategy {strategy.index}: final test accuracy "
        f"{report.final_test_accuracy:.4f} ({out / 'checkpoint.llmc'})"
    )
    return 0


def _load_checkpoint_against(args):
    from .classifier import load_checkpoint
    from .errors import MismatchError
    from .fusion import STRATEGY_ALIASES
    from .store import load_bundle

    clf, projections, strategy, class_names, source_dims = load_checkpoint(args.checkpoint)
    if args.strategy is not None:
        key = str(args.strategy).strip().lower()
        want = STRATEGY_ALIASES.get(key)
        if want is None:
            try:
                want = int(key)
            except ValueError:
                _fail("E_STRATEGY", f"unknown strategy {args.strategy!r}")
        if want != strategy.index:
            raise MismatchError(
                f"checkpoint was trained with strategy {strategy.index}, "
                f"--strategy asks for {want}"
            )
    bundle = load_bundle(args.manifest)
    if bundle.class_names != class_names:
        raise MismatchError(
            f"bundle classes {list(bundle.class_names)} != "
            f"checkpoint classes {list(class_names)}"
        )
    return clf, projections, strategy, class_names, source_dims, bundle


def cmd_eval(args) -> int:
    from .classifier import evaluate
    from .errors import MismatchError

    clf, projections, strategy, class_names, source_dims, bundle = _load_checkpoint_against(args)
    if bundle.source_dims() != dict(source_dims):
        raise MismatchError(
            f"bundle sources {bundle.source_dims()} != checkpoint sources {dict(source_dims)}"
        )
    acc = evaluate(clf, projections, bundle, strategy)
    doc = {"accuracy": acc, "rows": bundle.n_rows, "strategy": strategy.index}
    print(json.dumps(doc))
    if args.out:
        (_out_dir(args) / "metrics.json").write_text(json.dumps(doc, indent=2) + "\n")
    return 0


def cmd_predict(args) -> int:
    from .classifier import predict
    from .errors import MismatchError

    clf, projections, strategy, class_names, source_dims, bundle = _load_checkpoint_against(args)
    if bundle.source_dims() != dict(source_dims):
        raise MismatchError(
            f"bundle sources {bundle.source_dims()} != checkpoint sources {dict(source_dims)}"
        )
    classes, probs = predict(clf, projections, bundle.stacks(), strategy)
    sink = open(args.predictions, "w") if args.predictions else sys.stdout
    try:
        for i, (c, p) in enumerate(zip(classes.tolist(), probs.tolist())):
            sink.write(
                json.dumps({"row": i, "class": class_names[c], "probabilities": p}) + "\n"
            )
    finally:
        if sink is not sys.stdout:
            sink.close()
    return 0


def cmd_report_cost(args) -> int:
    from .costs import PhaseTiming, PowerProfile, build_report, compare_report

    timings: list[PhaseTiming] = []
    if args.timings:
        for entry in json.loads(Path(args.timings).read_text()):
            timings.append(PhaseTiming(entry["phase"], entry["seconds"]))
    for phase, seconds in (
        ("extract", args.extract_seconds),
        ("train", args.train_seconds),
        ("infer", args.infer_seconds),
    ):
        if seconds is not None:
            timings.append(PhaseTiming(phase, seconds))
    if not timings:
        _fail("E_USAGE", "no timings: pass --timings FILE or --*-seconds flags")
    profile = PowerProfile(
        {"extract": args.watts_extract, "train": args.watts_train, "infer": args.watts_infer}
    )
    local = build_report(
        (t for t in timings if t.phase != "load"),
        profile,
        tariff_per_kwh=args.tariff,
    )
    doc = {"local": local.to_json_dict()}
    text = local.render_text()
    if args.tokens is not None:
        remote = build_report(
            [], PowerProfile(), tariff_per_kwh=args.tariff,
            token_count=args.tokens, token_price_per_1k=args.token_price,
        )
        doc["remote"] = remote.to_json_dict()
        doc["comparison"] = compare_report(local, remote)
        text += (
            f"remote tokens: {args.tokens} -> "
            f"${(remote.token_bill_micro or 0) / 1e6:.2f}; "
            f"local/remote = {doc['comparison']['percent']}\n"
        )
    out = _out_dir(args)
    (out / "cost.json").write_text(json.dumps(doc, indent=2) + "\n")
    (out / "cost.txt").write_text(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="llmembed",
        description="Fuse frozen-backbone embeddings, train a classifier head, "
        "and account for compute cost.",
    )
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_strategy(p):
        p.add_argument("--strategy", default="2", help="index 1..15 or alias (avg, cat+co, ...)")
        p.add_argument("--sigma", type=float, default=0.3)
        p.add_argument("--projection-dim", type=int, default=1024)

    p = sub.add_parser("synth", help="generate synthetic embedding files + manifests")
    p.add_argument("--rows", type=int, default=512)
    p.add_argument("--test-rows", type=int, default=None)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument(
        "--source",
        action="append",
        default=None,
        help="name:depths:dim, repeatable (default llama2:5:64 bert:1:32 roberta:1:32)",
    )
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the classifier head on fused embeddings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    add_common_strategy(p)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--eval-every", type=int, default=10)
    p.add_argument("--hidden-width", type=int, default=None)
    p.add_argument("--hidden-activation", default="tanh", choices=("tanh", "relu"))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategy", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="per-row class + probabilities as JSON lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategy", default=None)
    p.add_argument("--predictions", default=None, help="output file (default stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report-cost", help="energy, bill and token-budget report")
    p.add_argument("--timings", default=None, help="timings.json from a train run")
    p.add_argument("--extract-seconds", type=float, default=None)
    p.add_argument("--train-seconds", type=float, default=None)
    p.add_argument("--infer-seconds", type=float, default=None)
    p.add_argument("--watts-extract", type=float, default=240.0)
    p.add_argument("--watts-train", type=float, default=45.0)
    p.add_argument("--watts-infer", type=float, default=45.0)
    p.add_argument("--tariff", type=float, default=0.065)
    p.add_argument("--tokens", type=int, default=None)
    p.add_argument("--token-price", type=float, default=0.002)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report_cost)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads
    if getattr(args, "deterministic", False):
        threads = 1
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)

    from .errors import LLMEmbedError

    try:
        rc = args.func(args)
        sys.stdout.flush()
        return rc
    except LLMEmbedError as exc:
        _fail(exc.code, str(exc))
    except BrokenPipeError:
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except FileNotFoundError as exc:
        _fail("E_MISSING", str(exc))
    except OSError as exc:
        _fail("E_IO", str(exc))


if __name__ == "__main__":
    raise SystemExit(main())
