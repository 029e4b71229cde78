"""Slow, loop-based reference implementations used only as test oracles."""

import math


def distance_score_bruteforce(embeddings, labels, num_classes, eps=1e-12):
    n = len(labels)
    dim = len(embeddings[0])
    centers = []
    for m in range(num_classes):
        acc = [0.0] * dim
        cnt = 0
        for i in range(n):
            if labels[i] == m:
                cnt += 1
                for k in range(dim):
                    acc[k] += embeddings[i][k]
        centers.append([a / cnt for a in acc])
    scores = []
    for m in range(num_classes):
        total, cnt = 0.0, 0
        for i in range(n):
            if labels[i] != m:
                continue
            cnt += 1
            own = sum((embeddings[i][k] - centers[m][k]) ** 2 for k in range(dim))
            s = 1.0
            for j in range(num_classes):
                if j == m:
                    continue
                other = sum((embeddings[i][k] - centers[j][k]) ** 2 for k in range(dim))
                s += own / max(other, eps)
            total += s
        scores.append(total / cnt)
    return scores


def entropy_score_bruteforce(probabilities, labels, num_classes):
    scores = []
    for m in range(num_classes):
        total, cnt = 0.0, 0
        for p, y in zip(probabilities, labels):
            if y != m:
                continue
            cnt += 1
            # q * ln(1/q) written as -q * ln(q): 1/q overflows for subnormal q
            total += sum(-q * math.log(q) for q in p if q > 0)
        scores.append(total / cnt)
    return scores


def sample_passes(stage_class_sets, stage_epochs, labels):
    """Count every (epoch, sample) visit one at a time."""
    passes = 0
    for classes, epochs in zip(stage_class_sets, stage_epochs):
        for _ in range(epochs):
            for y in labels:
                if y in classes:
                    passes += 1
    return passes
