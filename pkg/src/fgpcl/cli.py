"""Command-line entry points: run, metrics, toy, plot."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import FgpclError
from .metrics import (AccuracyMatrix, incremental_accuracies, metrics_report,
                      save_report)


def cmd_run(args) -> int:
    from .trainer import resolve_config, run_incremental

    config = json.loads(Path(args.config).read_text())
    seeds = config.pop("seeds", [config.get("seed", 0)])
    out = Path(config.pop("output_dir", None) or args.output or "runs/run")
    resolve_config({**config, "seed": 0})  # fail fast before any training
    summaries = []
    for seed in seeds:
        run_dir = out / f"seed_{seed}"
        _, report = run_incremental({**config, "seed": seed}, run_dir)
        summaries.append(report)
        print(f"seed {seed}: incremental accuracy "
              f"{report['incremental_accuracy'][-1]:.4f}")
    keys = ("average_incremental_accuracy", "phase_mad")
    summary = {"seeds": list(seeds)}
    for key in keys:
        vals = [s[key] for s in summaries]
        mean = sum(vals) / len(vals)
        dev = (sum((v - mean) ** 2 for v in vals) / len(vals)) ** 0.5
        summary[key] = {"mean": mean, "std": dev, "values": vals}
    finals = [s["incremental_accuracy"][-1] for s in summaries]
    summary["final_incremental_accuracy"] = {
        "mean": sum(finals) / len(finals), "values": finals}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(f"summary written to {out / 'summary.json'}")
    return 0


def cmd_metrics(args) -> int:
    run_dir = Path(args.run_dir)
    matrix_path = run_dir / "accuracy_matrix.csv"
    if not matrix_path.exists():
        raise IOError(f"no accuracy_matrix.csv in {run_dir}")
    matrix = AccuracyMatrix.load_csv(matrix_path)
    if matrix.num_phases < 2:
        report = {
            "incremental_accuracy": incremental_accuracies(matrix),
            "forgetting": "not applicable (single phase)",
        }
    else:
        report = metrics_report(matrix)
    save_report(report, run_dir / "metrics.json")
    print(json.dumps(report, indent=2))
    return 0


def cmd_toy(args) -> int:
    import torch

    from . import experiments

    out = Path(args.output or "runs/toy")
    out.mkdir(parents=True, exist_ok=True)
    seeds = args.seeds
    if args.kind == "sim2d":
        doc = {"k": args.k, "dim": args.dim, "seeds": seeds, "normalizations": {}}
        norms = [args.norm] if args.norm else ["rectified_cosine", "cosine"]
        for norm in norms:
            per_seed = []
            for seed in seeds:
                problem = experiments.FreeFeatureProblem(
                    args.k, args.dim, norm, steps=args.steps,
                    restarts=args.restarts)
                result = experiments.run_2d_simulation(problem, seed)
                experiments.plot_simulation(
                    result, out / f"sim2d_{norm}_seed{seed}.png",
                    title=f"{norm}, K={args.k}, seed {seed}")
                per_seed.append({
                    "seed": seed,
                    "alignment": result.alignment.tolist(),
                    "max_offdiag_feature_cos": float(
                        (result.pairwise_cos - 2 * torch.eye(args.k)).max()),
                })
            doc["normalizations"][norm] = per_seed
        experiments.save_separation_report(doc, out / "sim2d_report.json")
    else:
        doc = experiments.compare_toy_normalizations(
            seeds, dataset=args.dataset, epochs=args.epochs)
        experiments.save_separation_report(doc, out / "toy_report.json")
    print(f"artifacts written to {out}")
    return 0


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.output or "plots")
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for d in args.run_dirs:
        matrix = AccuracyMatrix.load_csv(Path(d) / "accuracy_matrix.csv")
        runs.append((Path(d).name, matrix))
    phases = {m.num_phases for _, m in runs}
    sizes = {tuple(m.group_sizes) for _, m in runs}
    if len(phases) > 1 or len(sizes) > 1:
        raise FgpclError("runs have mismatched phase schedules; cannot compare")

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, m in runs:
        inc = incremental_accuracies(m)
        avg = sum(inc) / len(inc)
        x = [sum(m.group_sizes[:j + 1]) for j in range(m.num_phases)]
        ax.plot(x, inc, marker="o", label=f"{name} ({avg:.3f})")
    ax.set_xlabel("test samples of classes learned")
    ax.set_ylabel("incremental accuracy")
    ax.legend()
    fig.savefig(out / "incremental_accuracy.png", dpi=120, bbox_inches="tight")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / len(runs)
    for i, (name, m) in enumerate(runs):
        final = m.rows[-1]
        mean = sum(final) / len(final)
        mad = sum(abs(a - mean) for a in final) / len(final)
        xs = [j + i * width for j in range(len(final))]
        ax.bar(xs, final, width=width, label=f"{name} ({mad:.3f})")
    ax.set_xlabel("phase group")
    ax.set_ylabel("phase accuracy")
    ax.legend()
    fig.savefig(out / "phase_accuracy.png", dpi=120, bbox_inches="tight")
    plt.close(fig)
    print(f"plots written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgpcl")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured incremental run")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--output", default=None)
    p_run.set_defaults(func=cmd_run)

    p_metrics = sub.add_parser("metrics", help="recompute metrics from a run directory")
    p_metrics.add_argument("run_dir")
    p_metrics.set_defaults(func=cmd_metrics)

    p_toy = sub.add_parser("toy", help="run a toy experiment")
    p_toy.add_argument("kind", choices=["mnist", "sim2d"])
    p_toy.add_argument("--k", type=int, default=8)
    p_toy.add_argument("--dim", type=int, default=2)
    p_toy.add_argument("--norm", choices=["cosine", "rectified_cosine"], default=None)
    p_toy.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p_toy.add_argument("--steps", type=int, default=5000)
    p_toy.add_argument("--restarts", type=int, default=5)
    p_toy.add_argument("--dataset", default="digits")
    p_toy.add_argument("--epochs", type=int, default=30)
    p_toy.add_argument("--output", default=None)
    p_toy.set_defaults(func=cmd_toy)

    p_plot = sub.add_parser("plot", help="plot accuracy curves for run directories")
    p_plot.add_argument("run_dirs", nargs="+")
    p_plot.add_argument("--output", default=None)
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FgpclError, IOError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
