"""Class-based expansion learning: confusion-ordered, warm-started staged training."""

from cel.confusion import (
    ClassOrdering,
    ConfusionReport,
    EmbeddingBatch,
    class_centers,
    compute_embeddings,
    order_classes,
    score_distance,
    score_entropy,
)
from cel.dataset import BlobSpec, ClassPartition, LabeledDataset, generate_blobs, partition_by_class, split_train_test
from cel.harness import ExperimentConfig, ExperimentReport, compare, run_cel, run_normal
from cel.scheduler import ExpansionSchedule, build_schedule, measured_cost, pool_at_stage, predicted_cost
from cel.trainer import Checkpoint, DenseModel, TrainConfig, evaluate, forward, gradients, train_stage

__version__ = "0.1.0"
