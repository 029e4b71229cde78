"""Predicted vs measured training cost for a grid of (K, lambda) on balanced data."""

import numpy as np

from cel.confusion import natural_ordering
from cel.dataset import LabeledDataset, partition_by_class
from cel.scheduler import build_schedule, measured_cost, predicted_cost

E = 60
print(f"{'K':>3} {'lambda':>6} {'T_CEL':>8} {'measured':>9} {'T_CEL2':>8} {'measured':>9}")
for K in (1, 2, 4, 5, 10):
    M = 10 if 10 % K == 0 else 2 * K
    labels = np.repeat(np.arange(M), 50)
    part = partition_by_class(LabeledDataset(np.zeros((labels.size, 1)), labels, M))
    for lam in (1, 2, 5, 10):
        pred = predicted_cost(K, lam)
        eq = measured_cost(build_schedule(natural_ordering(M), K, E, 1), part)
        red = measured_cost(build_schedule(natural_ordering(M), K, E, lam), part)
        print(f"{K:>3} {lam:>6} {pred.equal_epoch_cost:>8.3f} {eq:>9.3f} {pred.reduced_cost:>8.3f} {red:>9.3f}")
