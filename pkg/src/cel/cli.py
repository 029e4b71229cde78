"""Command line entry point: ``cel <subcommand> --config run.json [overrides]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from cel import confusion, harness, scheduler
from cel.dataset import partition_by_class, save_csv


def _config(args) -> harness.ExperimentConfig:
    if not args.config:
        raise harness.ConfigError("--config is required for this subcommand")
    cfg = harness.ExperimentConfig.load(args.config)
    return cfg.with_overrides(
        num_stages=getattr(args, "k", None),
        lam=getattr(args, "lam", None),
        order=getattr(args, "order", None),
        seeds=[args.seed] if getattr(args, "seed", None) is not None else None,
    )


def _out(args, cfg=None) -> Path | None:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.output_dir:
        return cfg.resolve(cfg.output_dir)
    return None


def cmd_gen_data(args) -> None:
    cfg = _config(args)
    out = _out(args, cfg) or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    train, test = harness.load_data(cfg)
    save_csv(train, out / "train.csv")
    save_csv(test, out / "test.csv")
    print(f"wrote {len(train)} train / {len(test)} test samples (M={train.num_classes}, d={train.feature_dim}) to {out}")


def _scored_batch(args):
    if args.embeddings:
        return confusion.load_embeddings_csv(args.embeddings, args.probabilities), None
    cfg = _config(args)
    train, _ = harness.load_data(cfg)
    scorer = harness.train_scorer(cfg, train, cfg.seeds[0])
    return confusion.compute_embeddings(scorer, train), train


def cmd_score(args) -> None:
    criterion = args.order or "distance"
    batch, train = _scored_batch(args)
    report = confusion.score(batch, criterion)
    out = _out(args)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        confusion.save_embeddings_csv(batch, out / "embeddings.csv", out / "probabilities.csv")
        confusion.save_report_csv(report, out / "scores.csv")
    print("class_id,score")
    for m, s in enumerate(report.scores):
        print(f"{m},{s!r}")


def cmd_order(args) -> None:
    names = None
    if args.scores:
        ordering = confusion.order_classes(confusion.load_report_csv(args.scores))
    elif args.embeddings:
        batch, _ = _scored_batch(args)
        ordering = confusion.order_classes(confusion.score(batch, args.order or "distance"))
    else:
        cfg = _config(args)
        train, _ = harness.load_data(cfg)
        names = train.class_names
        ordering = harness.class_ordering(cfg, train, cfg.seeds[0])
    out = _out(args)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        confusion.save_ordering_csv(ordering, out / "ordering.csv", names)
    print(" ".join(names[m] if names else str(m) for m in ordering.ord))


def cmd_schedule(args) -> None:
    cfg = _config(args)
    train, _ = harness.load_data(cfg)
    ordering = harness.class_ordering(cfg, train, cfg.seeds[0])
    sched = harness.cel_schedule(cfg, ordering)
    cost = scheduler.measured_cost(sched, partition_by_class(train))
    if args.json:
        print(json.dumps({**sched.to_dict(), "measured_cost": cost}, indent=2))
    else:
        print(scheduler.format_schedule(sched, train.class_names))
        print(f"measured cost (x T_normal): {cost:.4f}")
    out = _out(args)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "schedule.json").write_text(json.dumps({**sched.to_dict(), "measured_cost": cost}, indent=2) + "\n")


def _summary(report: harness.ExperimentReport) -> str:
    agg = report.aggregate
    std = agg["std_test_error"]
    spread = f" +/- {100 * std:.2f}" if std is not None else ""
    return (f"{report.mode}: mean test error {100 * agg['mean_test_error']:.2f}%{spread} "
            f"over {agg['num_runs']} run(s), best {100 * agg['best_test_error']:.2f}%, "
            f"cost {agg['mean_measured_cost']:.4f} x T_normal")


def cmd_train(args) -> None:
    cfg = _config(args)
    out = _out(args, cfg)
    run = harness.run_cel if args.mode == "cel" else harness.run_normal
    report = run(cfg, out)
    print(_summary(report))
    if out is not None:
        print(f"report written to {out / 'report.json'}")


def cmd_compare(args) -> None:
    if args.reports:
        a, b = (harness.ExperimentReport.load(p) for p in args.reports)
    else:
        cfg = _config(args)
        out = _out(args, cfg)
        a = harness.run_normal(cfg, out / "normal" if out else None)
        b = harness.run_cel(cfg, out / "cel" if out else None)
    cmp = harness.compare(a, b)
    print(_summary(a))
    print(_summary(b))
    print(harness.format_comparison(a, b, cmp))
    out = _out(args)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.json").write_text(json.dumps(cmp.to_dict(), indent=2) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cel", description="Class-based expansion learning experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="run this single seed")
        sp.set_defaults(func=fn)
        return sp

    add("gen-data", cmd_gen_data, "materialize the train/test split as CSV")

    for name, fn, help_ in (("score", cmd_score, "per-class confusion scores"),
                            ("order", cmd_order, "hardest-first class ordering")):
        sp = add(name, fn, help_)
        sp.add_argument("--order", choices=harness.ORDER_MODES)
        sp.add_argument("--embeddings", help="score precomputed embeddings CSV instead of training a scorer")
        sp.add_argument("--probabilities", help="probabilities CSV paired with --embeddings")
        if name == "order":
            sp.add_argument("--scores", help="order an existing scores CSV")

    sp = add("schedule", cmd_schedule, "print the stage table")
    sp.add_argument("--k", type=int)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--order", choices=harness.ORDER_MODES)
    sp.add_argument("--json", action="store_true")

    sp = add("train", cmd_train, "run normal or CEL training")
    sp.add_argument("--mode", choices=("normal", "cel"), default="cel")
    sp.add_argument("--k", type=int)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--order", choices=harness.ORDER_MODES)

    sp = add("compare", cmd_compare, "normal vs CEL comparison table")
    sp.add_argument("--reports", nargs=2, metavar=("BASELINE", "CANDIDATE"))
    sp.add_argument("--k", type=int)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--order", choices=harness.ORDER_MODES)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("stage", "epoch"):
            if getattr(exc, attr, None) is not None:
                err[attr] = getattr(exc, attr)
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
