"""Per-class confusion scores from a scorer network, and the hardest-first class order.

Two criteria are provided. The distance criterion works in the scorer's
penultimate feature space: for each sample it sums the ratio of the squared
distance to its own class center over the squared distance to every center,
then averages over the class. The entropy criterion averages the Shannon
entropy (natural log) of the scorer's softmax output over the class.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cel.dataset import ClassPartition, LabeledDataset
from cel.trainer import DenseModel, forward, hidden_features, softmax

DIST_EPS = 1e-12
CRITERIA = ("distance", "entropy")


class ScoringError(ValueError):
    pass


@dataclass(eq=False)
class EmbeddingBatch:
    embeddings: np.ndarray  # (n, e)
    probabilities: np.ndarray  # (n, M)
    labels: np.ndarray  # (n,)

    @property
    def num_classes(self) -> int:
        return self.probabilities.shape[1]


@dataclass(eq=False)
class ClassStatistics:
    centers: np.ndarray  # (M, e)


@dataclass(eq=False)
class ConfusionReport:
    criterion: str
    scores: np.ndarray  # (M,)


@dataclass(eq=False)
class ClassOrdering:
    ord: tuple[int, ...]
    source_scores: ConfusionReport | None = None

    def __post_init__(self):
        self.ord = tuple(int(m) for m in self.ord)
        if sorted(self.ord) != list(range(len(self.ord))):
            raise ScoringError(f"not a permutation: {self.ord}")

    @property
    def num_classes(self) -> int:
        return len(self.ord)


def make_batch(embeddings, probabilities, labels) -> EmbeddingBatch:
    g = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    p = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    if g.shape[0] != y.shape[0] or p.shape[0] != y.shape[0]:
        raise ScoringError("embeddings, probabilities and labels disagree on sample count")
    if not np.all(np.isfinite(g)):
        raise ScoringError("embeddings must be finite")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
        raise ScoringError("each probability vector must be a distribution")
    if y.size and (y.min() < 0 or y.max() >= p.shape[1]):
        raise ScoringError("label out of range")
    return EmbeddingBatch(g, p, y)


def compute_embeddings(scorer: DenseModel, ds: LabeledDataset) -> EmbeddingBatch:
    if scorer.layer_dims[0] != ds.feature_dim or scorer.num_classes != ds.num_classes:
        raise ScoringError(
            f"scorer {scorer.layer_dims} does not match data (d={ds.feature_dim}, M={ds.num_classes})"
        )
    return make_batch(hidden_features(scorer, ds.features), softmax(forward(scorer, ds.features)), ds.labels)


def _members(batch: EmbeddingBatch, partition: ClassPartition | None) -> list[np.ndarray]:
    if partition is None:
        idx = np.arange(batch.labels.shape[0])
        return [idx[batch.labels == m] for m in range(batch.num_classes)]
    return list(partition.per_class)


def class_centers(batch: EmbeddingBatch, partition: ClassPartition | None = None) -> ClassStatistics:
    centers = []
    for m, ix in enumerate(_members(batch, partition)):
        if len(ix) == 0:
            raise ScoringError(f"class {m} is empty; its center is undefined")
        centers.append(batch.embeddings[ix].mean(axis=0))
    return ClassStatistics(np.array(centers))


def score_distance(batch: EmbeddingBatch, stats: ClassStatistics | None = None) -> ConfusionReport:
    """Distance criterion; foreign-center distances below ``DIST_EPS`` are clamped to it."""
    if stats is None:
        stats = class_centers(batch)
    g, y, u = batch.embeddings, batch.labels, stats.centers
    M = u.shape[0]
    d2 = ((g[:, None, :] - u[None, :, :]) ** 2).sum(axis=2)  # (n, M)
    own = d2[np.arange(y.shape[0]), y]
    ratios = own[:, None] / np.maximum(d2, DIST_EPS)
    ratios[np.arange(y.shape[0]), y] = 0.0  # the own-center term is exactly 1, added below
    per_sample = 1.0 + ratios.sum(axis=1)
    scores = np.empty(M)
    for m in range(M):
        sel = per_sample[y == m]
        if sel.size == 0:
            raise ScoringError(f"class {m} is empty")
        scores[m] = sel.mean()
    return ConfusionReport("distance", scores)


def score_entropy(batch: EmbeddingBatch) -> ConfusionReport:
    p = batch.probabilities
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = terms.sum(axis=1)
    M = batch.num_classes
    scores = np.empty(M)
    for m in range(M):
        sel = h[batch.labels == m]
        if sel.size == 0:
            raise ScoringError(f"class {m} is empty")
        scores[m] = sel.mean()
    return ConfusionReport("entropy", scores)


def score(batch: EmbeddingBatch, criterion: str) -> ConfusionReport:
    if criterion == "distance":
        return score_distance(batch)
    if criterion == "entropy":
        return score_entropy(batch)
    raise ScoringError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")


def order_classes(report: ConfusionReport) -> ClassOrdering:
    """Descending score, ties broken by ascending class index."""
    s = np.asarray(report.scores, dtype=np.float64)
    if np.any(np.isnan(s)):
        raise ScoringError("NaN confusion score")
    ordering = sorted(range(s.shape[0]), key=lambda m: (-s[m], m))
    return ClassOrdering(tuple(ordering), report)


def natural_ordering(num_classes: int) -> ClassOrdering:
    return ClassOrdering(tuple(range(num_classes)))


def random_ordering(num_classes: int, seed: int) -> ClassOrdering:
    return ClassOrdering(tuple(np.random.default_rng(seed).permutation(num_classes).tolist()))


# -- CSV interchange ------------------------------------------------------------


def _write_rows(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ScoringError(f"{path}: empty file")
    return rows[0], rows[1:]


def save_embeddings_csv(batch: EmbeddingBatch, path, probabilities_path=None) -> None:
    """Rows ``label, g_0..g_{e-1}``; probabilities optionally to a sibling file."""
    e = batch.embeddings.shape[1]
    _write_rows(path, ["label"] + [f"g_{j}" for j in range(e)],
                ([int(y)] + [repr(float(v)) for v in g] for y, g in zip(batch.labels, batch.embeddings)))
    if probabilities_path is not None:
        _write_rows(probabilities_path, ["label"] + [f"p_{j}" for j in range(batch.num_classes)],
                    ([int(y)] + [repr(float(v)) for v in p] for y, p in zip(batch.labels, batch.probabilities)))


def load_embeddings_csv(path, probabilities_path=None, num_classes: int | None = None) -> EmbeddingBatch:
    """Inverse of :func:`save_embeddings_csv`.

    Without a probabilities file the batch carries uniform distributions and
    only the distance criterion is meaningful.
    """
    _, rows = _read_rows(path)
    try:
        labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
        g = np.array([[float(c) for c in r[1:]] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ScoringError(f"{path}: {exc}") from None
    if probabilities_path is not None:
        _, prow = _read_rows(probabilities_path)
        p = np.array([[float(c) for c in r[1:]] for r in prow], dtype=np.float64)
    else:
        M = num_classes if num_classes is not None else int(labels.max()) + 1
        p = np.full((labels.shape[0], M), 1.0 / M)
    return make_batch(g, p, labels)


def save_report_csv(report: ConfusionReport, path) -> None:
    _write_rows(path, ["class_id", "score"], ([m, repr(float(s))] for m, s in enumerate(report.scores)))


def load_report_csv(path, criterion: str = "distance") -> ConfusionReport:
    _, rows = _read_rows(path)
    rows = sorted(rows, key=lambda r: int(r[0]))
    if [int(r[0]) for r in rows] != list(range(len(rows))):
        raise ScoringError(f"{path}: class ids must be 0..M-1")
    return ConfusionReport(criterion, np.array([float(r[1]) for r in rows]))


def save_ordering_csv(ordering: ClassOrdering, path, class_names=None) -> None:
    scores = ordering.source_scores.scores if ordering.source_scores is not None else None
    rows = []
    for rank, m in enumerate(ordering.ord, start=1):
        name = class_names[m] if class_names is not None else str(m)
        rows.append([rank, m, name, repr(float(scores[m])) if scores is not None else ""])
    _write_rows(path, ["rank", "class_id", "class_name", "score"], rows)


def load_ordering_csv(path) -> ClassOrdering:
    _, rows = _read_rows(path)
    rows = sorted(rows, key=lambda r: int(r[0]))
    ord_ = tuple(int(r[1]) for r in rows)
    report = None
    if rows and all(r[3] != "" for r in rows):
        scores = np.empty(len(rows))
        for r in rows:
            scores[int(r[1])] = float(r[3])
        report = ConfusionReport("imported", scores)
    return ClassOrdering(ord_, report)


def max_entropy(num_classes: int) -> float:
    return math.log(num_classes)
