"""Experiment pipeline: data -> scorer -> class order -> schedule -> staged training -> reports.

A run is described by an :class:`ExperimentConfig` (JSON, unknown keys rejected)
and produces an :class:`ExperimentReport` with one entry per seed plus
aggregates. Everything is a pure function of the config, so re-running a config
reproduces every file byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from cel.confusion import (
    ClassOrdering,
    compute_embeddings,
    natural_ordering,
    order_classes,
    random_ordering,
    save_ordering_csv,
    score,
)
from cel.dataset import (
    BlobSpec,
    LabeledDataset,
    generate_blobs,
    load_csv,
    load_idx,
    partition_by_class,
    split_train_test,
)
from cel.scheduler import ExpansionSchedule, build_schedule, measured_cost, pool_at_stage
from cel.trainer import Checkpoint, DenseModel, EpochMetrics, TrainConfig, evaluate, fresh_checkpoint, train_stage

log = logging.getLogger(__name__)

ORDER_MODES = ("distance", "entropy", "natural", "random")
PREPROCESS_MODES = ("none", "center", "standardize")


class ConfigError(ValueError):
    pass


def _strict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class DataConfig:
    source: str = "blobs"
    blobs: Optional[dict] = None
    csv_path: Optional[str] = None
    label_column: str = "label"
    images_path: Optional[str] = None
    labels_path: Optional[str] = None
    test_fraction: float = 0.25
    split_seed: int = 0
    preprocess: str = "center"

    def __post_init__(self):
        if self.preprocess not in PREPROCESS_MODES:
            raise ConfigError(f"data.preprocess must be one of {PREPROCESS_MODES}, got {self.preprocess!r}")

    def blob_spec(self) -> BlobSpec:
        return _strict(BlobSpec, self.blobs or {}, "data.blobs")


@dataclass
class ModelConfig:
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    train: dict = field(default_factory=dict)

    def train_config(self, epochs: int, seed: int) -> TrainConfig:
        # epochs come from the schedule and seeds from the run, never from this block
        params = {**self.train, "epochs": epochs, "seed": seed}
        return _strict(TrainConfig, params, "train")

    def layer_dims(self, ds: LabeledDataset) -> tuple[int, ...]:
        return (ds.feature_dim, *self.hidden, ds.num_classes)


@dataclass
class ExperimentConfig:
    """Top-level experiment description.

    ``final_epochs`` is E (the last-stage and normal-training budget).
    ``normal_epochs`` sets the normal-training budget: an integer, ``null`` for
    E, or ``"match_cel"`` for the CEL schedule's measured cost times E (the
    equal-cost ablation). Relative paths resolve against ``base_dir``.
    """

    data: DataConfig = field(default_factory=DataConfig)
    scorer: ModelConfig = field(default_factory=lambda: ModelConfig(hidden=[16]))
    model: ModelConfig = field(default_factory=ModelConfig)
    order: str = "distance"
    num_stages: int = 5
    final_epochs: int = 30
    lam: float = 5.0
    stage_epochs: Optional[list[int]] = None
    normal_epochs: Union[int, str, None] = None
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: Optional[str] = None
    save_checkpoints: bool = True
    base_dir: str = "."

    def __post_init__(self):
        if self.order not in ORDER_MODES:
            raise ConfigError(f"order must be one of {ORDER_MODES}, got {self.order!r}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.num_stages < 1:
            raise ConfigError("num_stages must be >= 1")
        if self.final_epochs < 1:
            raise ConfigError("final_epochs must be >= 1")
        if not self.lam >= 1:
            raise ConfigError("lambda must be >= 1")
        if isinstance(self.normal_epochs, str) and self.normal_epochs != "match_cel":
            raise ConfigError("normal_epochs must be an integer, null or 'match_cel'")
        if isinstance(self.normal_epochs, int) and self.normal_epochs < 1:
            raise ConfigError("normal_epochs must be >= 1")

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str = ".") -> "ExperimentConfig":
        raw = dict(raw)
        if "lam" in raw:
            raise ConfigError("config: unknown key(s) ['lam']; the key is 'lambda'")
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        if "base_dir" in raw:
            raise ConfigError("config: unknown key(s) ['base_dir']")
        raw["base_dir"] = base_dir
        if "data" in raw:
            raw["data"] = _strict(DataConfig, raw["data"], "data")
        for key in ("scorer", "model"):
            if key in raw:
                raw[key] = _strict(ModelConfig, raw[key], key)
        cfg = _strict(cls, raw, "config")
        if cfg.data.source == "blobs":
            cfg.data.blob_spec()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw, base_dir=str(path.parent))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        d.pop("base_dir")
        return d

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, **kw)


@dataclass
class SeedResult:
    seed: int
    ordering: list[int]
    stage_class_counts: list[int]
    stage_epochs: list[int]
    test_error: float
    per_class_error: list[Optional[float]]
    measured_cost: float
    parameters_sha256: str
    stages: list[list[dict]]

    def outcome(self) -> dict:
        """Everything the trained model determines (excludes the ordering bookkeeping)."""
        d = dataclasses.asdict(self)
        d.pop("ordering")
        return d


@dataclass
class ExperimentReport:
    mode: str
    order: str
    class_names: list[str]
    runs: list[SeedResult]
    aggregate: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "order": self.order,
            "class_names": list(self.class_names),
            "runs": [dataclasses.asdict(r) for r in self.runs],
            "aggregate": self.aggregate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(d["mode"], d["order"], d["class_names"], [SeedResult(**r) for r in d["runs"]], d["aggregate"])

    @classmethod
    def load(cls, path) -> "ExperimentReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


# -- pipeline pieces ------------------------------------------------------------


def load_data(cfg: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    data = cfg.data
    if data.source == "blobs":
        ds = generate_blobs(data.blob_spec())
    elif data.source == "csv":
        if not data.csv_path:
            raise ConfigError("data.csv_path is required for source 'csv'")
        ds = load_csv(cfg.resolve(data.csv_path), data.label_column)
    elif data.source == "idx":
        if not (data.images_path and data.labels_path):
            raise ConfigError("data.images_path and data.labels_path are required for source 'idx'")
        ds = load_idx(cfg.resolve(data.images_path), cfg.resolve(data.labels_path))
    else:
        raise ConfigError(f"unknown data source {data.source!r}")
    train, test = split_train_test(ds, data.test_fraction, data.split_seed)
    return preprocess(train, test, data.preprocess)


def preprocess(train: LabeledDataset, test: LabeledDataset, mode: str) -> tuple[LabeledDataset, LabeledDataset]:
    """Per-feature mean subtraction ("center"), optionally with unit variance, fitted on train."""
    if mode == "none":
        return train, test
    shift = train.features.mean(axis=0)
    scale = np.ones_like(shift)
    if mode == "standardize":
        sd = train.features.std(axis=0)
        scale = np.where(sd > 0, sd, 1.0)

    def apply(ds: LabeledDataset) -> LabeledDataset:
        return LabeledDataset((ds.features - shift) / scale, ds.labels, ds.num_classes, ds.class_names)

    return apply(train), apply(test)


def scorer_epochs(cfg: ExperimentConfig) -> int:
    epochs = cfg.scorer.train.get("epochs")
    return int(epochs) if epochs is not None else max(1, math.floor(cfg.final_epochs / cfg.lam + 0.5))


def train_scorer(cfg: ExperimentConfig, train: LabeledDataset, seed: int) -> DenseModel:
    tc = cfg.scorer.train_config(scorer_epochs(cfg), seed)
    ckpt, _ = train_stage(fresh_checkpoint(cfg.scorer.layer_dims(train), seed), np.arange(len(train)), train, tc)
    return ckpt.model


def class_ordering(cfg: ExperimentConfig, train: LabeledDataset, seed: int, order: Optional[str] = None) -> ClassOrdering:
    order = order or cfg.order
    if order == "natural":
        return natural_ordering(train.num_classes)
    if order == "random":
        return random_ordering(train.num_classes, seed)
    scorer = train_scorer(cfg, train, seed)
    return order_classes(score(compute_embeddings(scorer, train), order))


def _params_digest(model: DenseModel) -> str:
    return hashlib.sha256(np.ascontiguousarray(model.flat()).tobytes()).hexdigest()


def _write_stage(out: Optional[Path], k: int, ckpt: Checkpoint, history: list[EpochMetrics], save_ckpt: bool) -> None:
    if out is None:
        return
    stage_dir = out / f"stage_{k}"
    stage_dir.mkdir(parents=True, exist_ok=True)
    with (stage_dir / "metrics.jsonl").open("w") as fh:
        for m in history:
            fh.write(json.dumps(m.to_dict(), sort_keys=True) + "\n")
    if save_ckpt:
        ckpt.save(stage_dir / "checkpoint.json")


def run_schedule(
    cfg: ExperimentConfig,
    sched: ExpansionSchedule,
    train: LabeledDataset,
    test: LabeledDataset,
    seed: int,
    out: Optional[Path] = None,
) -> SeedResult:
    """Train through every stage of ``sched``, warm-starting each from the last."""
    partition = partition_by_class(train)
    ckpt = fresh_checkpoint(cfg.model.layer_dims(train), seed)
    stages = []
    for k in range(1, sched.num_stages + 1):
        pool = pool_at_stage(sched, k, partition)
        tc = cfg.model.train_config(sched.stage_epochs[k - 1], seed)
        ckpt, history = train_stage(ckpt, pool, train, tc, eval_ds=test)
        log.info("seed %d stage %d/%d: %d samples, %d epochs, test error %.4f",
                 seed, k, sched.num_stages, pool.size, tc.epochs, history[-1].error)
        _write_stage(out, k, ckpt, history, cfg.save_checkpoints)
        stages.append([m.to_dict() for m in history])
    final = evaluate(ckpt.model, test, epoch=ckpt.epoch)
    return SeedResult(
        seed=seed,
        ordering=list(sched.ordering.ord),
        stage_class_counts=list(sched.stage_class_counts),
        stage_epochs=list(sched.stage_epochs),
        test_error=final.error,
        per_class_error=final.per_class_error,
        measured_cost=measured_cost(sched, partition),
        parameters_sha256=_params_digest(ckpt.model),
        stages=stages,
    )


def cel_schedule(cfg: ExperimentConfig, ordering: ClassOrdering) -> ExpansionSchedule:
    return build_schedule(ordering, cfg.num_stages, cfg.final_epochs, cfg.lam, cfg.stage_epochs)


def normal_schedule(cfg: ExperimentConfig, train: LabeledDataset) -> ExpansionSchedule:
    ordering = natural_ordering(train.num_classes)
    if cfg.normal_epochs is None:
        epochs = cfg.final_epochs
    elif cfg.normal_epochs == "match_cel":
        # the class order only matters for unequal class sizes
        cost = measured_cost(cel_schedule(cfg, ordering), partition_by_class(train))
        epochs = max(1, math.floor(cost * cfg.final_epochs + 0.5))
    else:
        epochs = int(cfg.normal_epochs)
    return build_schedule(ordering, 1, cfg.final_epochs, 1.0, [epochs])


def _mean_std(values: list[float]) -> tuple[float, Optional[float]]:
    arr = np.array(values, dtype=np.float64)
    return float(arr.mean()), (float(arr.std(ddof=1)) if arr.size > 1 else None)


def aggregate(runs: list[SeedResult]) -> dict:
    """Mean, sample standard deviation and best (minimum) across seeds."""
    errs = [r.test_error for r in runs]
    mean, std = _mean_std(errs)
    M = len(runs[0].per_class_error)
    per_mean, per_std = [], []
    for m in range(M):
        vals = [r.per_class_error[m] for r in runs if r.per_class_error[m] is not None]
        if vals:
            a, b = _mean_std(vals)
        else:
            a, b = None, None
        per_mean.append(a)
        per_std.append(b)
    return {
        "num_runs": len(runs),
        "mean_test_error": mean,
        "std_test_error": std,
        "best_test_error": float(min(errs)),
        "mean_per_class_error": per_mean,
        "std_per_class_error": per_std,
        "mean_measured_cost": _mean_std([r.measured_cost for r in runs])[0],
    }


def _run(cfg: ExperimentConfig, mode: str, out_dir: Optional[Path]) -> ExperimentReport:
    train, test = load_data(cfg)
    runs = []
    for seed in cfg.seeds:
        out = out_dir / f"seed_{seed}" if out_dir is not None else None
        if mode == "cel":
            sched = cel_schedule(cfg, class_ordering(cfg, train, seed))
        else:
            sched = normal_schedule(cfg, train)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            save_ordering_csv(sched.ordering, out / "ordering.csv", train.class_names)
            (out / "schedule.json").write_text(json.dumps(sched.to_dict(), indent=2) + "\n")
        runs.append(run_schedule(cfg, sched, train, test, seed, out))
    report = ExperimentReport(mode, cfg.order if mode == "cel" else "natural", list(train.class_names), runs, aggregate(runs))
    if out_dir is not None:
        report.save(out_dir / "report.json")
    return report


def _out(cfg: ExperimentConfig, out_dir) -> Optional[Path]:
    if out_dir is not None:
        return Path(out_dir)
    return cfg.resolve(cfg.output_dir) if cfg.output_dir else None


def run_cel(cfg: ExperimentConfig, out_dir=None) -> ExperimentReport:
    return _run(cfg, "cel", _out(cfg, out_dir))


def run_normal(cfg: ExperimentConfig, out_dir=None) -> ExperimentReport:
    return _run(cfg, "normal", _out(cfg, out_dir))


# -- comparison -----------------------------------------------------------------


@dataclass
class Comparison:
    class_names: list[str]
    overall_delta: float
    per_class_delta: list[Optional[float]]
    preferred_classes: list[int]
    per_seed: list[dict]
    baseline: str
    candidate: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _sub(b: Optional[float], a: Optional[float]) -> Optional[float]:
    return None if a is None or b is None else b - a


def compare(a: ExperimentReport, b: ExperimentReport) -> Comparison:
    """Error deltas ``b - a`` (negative means ``b`` is better).

    Preferred classes are those admitted in the first stage of the staged
    report's schedule in at least half of its seeds.
    """
    if list(a.class_names) != list(b.class_names):
        raise ValueError(f"class vocabularies differ: {a.class_names} vs {b.class_names}")
    staged = b if b.mode == "cel" or a.mode != "cel" else a
    votes: Counter = Counter()
    firsts = {}
    for r in staged.runs:
        first = r.ordering[: r.stage_class_counts[0]] if len(r.stage_class_counts) > 1 else []
        firsts[r.seed] = first
        votes.update(first)
    preferred = sorted(m for m, c in votes.items() if 2 * c >= len(staged.runs))
    by_seed = {r.seed: r for r in a.runs}
    per_seed = []
    for rb in b.runs:
        ra = by_seed.get(rb.seed)
        if ra is None:
            continue
        per_seed.append({
            "seed": rb.seed,
            "overall_delta": rb.test_error - ra.test_error,
            "per_class_delta": [_sub(y, x) for x, y in zip(ra.per_class_error, rb.per_class_error)],
            "preferred_classes": firsts.get(rb.seed, []),
        })
    am, bm = a.aggregate, b.aggregate
    return Comparison(
        class_names=list(a.class_names),
        overall_delta=bm["mean_test_error"] - am["mean_test_error"],
        per_class_delta=[_sub(y, x) for x, y in zip(am["mean_per_class_error"], bm["mean_per_class_error"])],
        preferred_classes=preferred,
        per_seed=per_seed,
        baseline=a.mode,
        candidate=b.mode,
    )


def format_comparison(a: ExperimentReport, b: ExperimentReport, cmp: Comparison) -> str:
    def pct(v):
        return "    -" if v is None else f"{100 * v:6.2f}"

    name_w = max(len("overall"), *(len(n) + 1 for n in cmp.class_names))
    lines = [f"{'class'.ljust(name_w)}  {a.mode:>8}  {b.mode:>8}  {'delta':>8}   (test error %, mean over seeds)"]
    for m, name in enumerate(cmp.class_names):
        flag = "*" if m in cmp.preferred_classes else " "
        lines.append(f"{(name + flag).ljust(name_w)}  {pct(a.aggregate['mean_per_class_error'][m]):>8}"
                     f"  {pct(b.aggregate['mean_per_class_error'][m]):>8}  {pct(cmp.per_class_delta[m]):>8}")
    lines.append(f"{'overall'.ljust(name_w)}  {pct(a.aggregate['mean_test_error']):>8}"
                 f"  {pct(b.aggregate['mean_test_error']):>8}  {pct(cmp.overall_delta):>8}")
    lines.append(f"best run: {a.mode} {pct(a.aggregate['best_test_error']).strip()}%, "
                 f"{b.mode} {pct(b.aggregate['best_test_error']).strip()}%")
    lines.append("* admitted in the first stage")
    return "\n".join(lines)

