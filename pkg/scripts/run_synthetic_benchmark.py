"""Sweep all 15 fusion strategies on synthetic data and print an accuracy table.

Desk-scale stand-in for a full benchmark run: generates separable Gaussian
embeddings for the three canonical sources, trains each strategy's head, and
reports accuracy, fused width, train time, and the electricity cost of the
sweep at the default wattage/tariff.

    python scripts/run_synthetic_benchmark.py --rows 2000 --noise 1.5
"""

import argparse
import time

from llmembed import (
    FusionStrategy,
    PhaseTiming,
    PowerProfile,
    SourceSpec,
    SyntheticSpec,
    TrainConfig,
    build_report,
    evaluate,
    fused_dim,
    generate_synthetic,
    train,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=1000)
    parser.add_argument("--classes", type=int, default=4)
    parser.add_argument("--noise", type=float, default=1.0)
    parser.add_argument("--separation", type=float, default=10.0)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--batch-size", type=int, default=256)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--sigma", type=float, default=0.3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    spec = SyntheticSpec(
        n_rows=args.rows,
        n_classes=args.classes,
        sources=(
            SourceSpec("llama2", 5, 64),
            SourceSpec("bert", 1, 32),
            SourceSpec("roberta", 1, 32),
        ),
        separation=args.separation,
        noise=args.noise,
        seed=args.seed,
    )
    train_b, test_b = generate_synthetic(spec)
    dims = train_b.source_dims()
    config = TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
        eval_every=args.epochs,
    )

    print(f"{'idx':>3}  {'width':>6}  {'train acc':>9}  {'test acc':>8}  {'seconds':>7}")
    total_seconds = 0.0
    for index in range(1, 16):
        strategy = FusionStrategy(index, sigma=args.sigma, projection_dim=32)
        tick = time.perf_counter()
        clf, projections, report = train(train_b, test_b, strategy, config)
        seconds = time.perf_counter() - tick
        total_seconds += seconds
        train_acc = evaluate(clf, projections, train_b, strategy)
        print(
            f"{index:>3}  {fused_dim(strategy, dims):>6}  {train_acc:>9.4f}  "
            f"{report.final_test_accuracy:>8.4f}  {seconds:>7.2f}"
        )

    cost = build_report(
        [PhaseTiming("train", total_seconds)], PowerProfile(), tariff_per_kwh=0.065
    )
    print()
    print(cost.render_text())


if __name__ == "__main__":
    main()
