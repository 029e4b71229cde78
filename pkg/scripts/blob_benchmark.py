"""Normal vs CEL on the 8-class blob benchmark, plus the two ablations.

    python scripts/blob_benchmark.py [--config configs/blobs8.json] [--out runs/blobs8]

Runs:
  normal        normal training at the CEL schedule's measured cost (equal-cost ablation)
  normal_E      normal training for E epochs only
  cel           distance-ordered CEL
  cel_random    CEL with a seeded random class order (no scorer)
"""

import argparse
import dataclasses
import json
import logging
from pathlib import Path

from cel.harness import ExperimentConfig, compare, format_comparison, run_cel, run_normal

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs" / "blobs8.json"))
    ap.add_argument("--out", default=str(ROOT / "runs" / "blobs8"))
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    cfg = ExperimentConfig.load(args.config)
    out = Path(args.out)
    reports = {
        "normal": run_normal(cfg, out / "normal"),
        "normal_E": run_normal(dataclasses.replace(cfg, normal_epochs=None), out / "normal_E"),
        "cel": run_cel(cfg, out / "cel"),
        "cel_random": run_cel(dataclasses.replace(cfg, order="random"), out / "cel_random"),
    }
    for name, rep in reports.items():
        agg = rep.aggregate
        print(f"{name:11s} error {100 * agg['mean_test_error']:.2f}% (best {100 * agg['best_test_error']:.2f}%), "
              f"cost {agg['mean_measured_cost']:.3f} x T_normal")
    for base, cand in (("normal", "cel"), ("normal", "cel_random"), ("cel_random", "cel")):
        cmp = compare(reports[base], reports[cand])
        print(f"\n{base} -> {cand}")
        print(format_comparison(reports[base], reports[cand], cmp))
        (out / f"compare_{base}_vs_{cand}.json").write_text(json.dumps(cmp.to_dict(), indent=2) + "\n")


if __name__ == "__main__":
    main()
