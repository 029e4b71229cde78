import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cel.confusion import ClassOrdering, natural_ordering, random_ordering
from cel.dataset import LabeledDataset, partition_by_class
from cel.scheduler import (
    ScheduleError,
    build_schedule,
    format_schedule,
    measured_cost,
    pool_at_stage,
    predicted_cost,
)

from oracles import sample_passes


def balanced(M, per_class):
    labels = np.repeat(np.arange(M), per_class)
    return LabeledDataset(np.zeros((labels.size, 1)), labels, M)


def test_counts_divisible():
    sched = build_schedule(natural_ordering(10), 5, 300, 5)
    assert sched.stage_class_counts == (2, 4, 6, 8, 10)
    assert sched.stage_epochs == (60, 60, 60, 60, 300)


def test_counts_with_remainder():
    sched = build_schedule(natural_ordering(10), 3, 30)
    assert sched.stage_class_counts == (4, 7, 10)
    assert [len(sched.added_at_stage(k)) for k in (1, 2, 3)] == [4, 3, 3]


def test_single_stage():
    sched = build_schedule(ClassOrdering((2, 0, 1)), 1, 7, 3)
    assert sched.stage_class_counts == (3,)
    assert sched.stage_epochs == (7,)


@pytest.mark.parametrize("K", [0, 11])
def test_bad_stage_count(K):
    with pytest.raises(ScheduleError):
        build_schedule(natural_ordering(10), K, 10)


def test_stage_epoch_override():
    sched = build_schedule(natural_ordering(4), 2, 10, 5, stage_epochs=[3, 9])
    assert sched.stage_epochs == (3, 9)
    with pytest.raises(ScheduleError):
        build_schedule(natural_ordering(4), 2, 10, stage_epochs=[3])


def test_pool_examples():
    ds = balanced(10, 100)
    part = partition_by_class(ds)
    ordering = ClassOrdering((7, 3, 0, 1, 2, 4, 5, 6, 8, 9))
    sched = build_schedule(ordering, 5, 10, 5)
    pool1 = pool_at_stage(sched, 1, part)
    assert pool1.size == 200
    assert set(ds.labels[pool1]) == {7, 3}
    # recount through the partition
    assert sorted(pool1) == sorted(list(part.per_class[7]) + list(part.per_class[3]))
    np.testing.assert_array_equal(pool_at_stage(sched, 5, part), np.arange(1000))
    with pytest.raises(ScheduleError):
        pool_at_stage(sched, 6, part)
    with pytest.raises(ScheduleError):
        pool_at_stage(sched, 0, part)


@given(st.integers(2, 12), st.data())
def test_pools_strictly_nested(M, data):
    K = data.draw(st.integers(1, M))
    seed = data.draw(st.integers(0, 1000))
    sizes = data.draw(st.lists(st.integers(1, 5), min_size=M, max_size=M))
    labels = np.repeat(np.arange(M), sizes)
    part = partition_by_class(LabeledDataset(np.zeros((labels.size, 1)), labels, M))
    sched = build_schedule(random_ordering(M, seed), K, 4, 2)
    pools = [set(pool_at_stage(sched, k, part).tolist()) for k in range(1, K + 1)]
    for a, b in zip(pools, pools[1:]):
        assert a < b
    assert pools[-1] == set(range(labels.size))


def test_predicted_cost_examples():
    assert predicted_cost(5).equal_epoch_cost == 3.0
    assert predicted_cost(5, 5).reduced_cost == pytest.approx(1.4, abs=1e-15)
    c = predicted_cost(1, 7)
    assert c.equal_epoch_cost == c.reduced_cost == c.normal_cost == 1.0


def test_measured_cost_examples():
    part = partition_by_class(balanced(10, 30))
    equal = build_schedule(natural_ordering(10), 5, 60, 1)
    assert measured_cost(equal, part) == pytest.approx(3.0, abs=1e-12)
    reduced = build_schedule(natural_ordering(10), 5, 60, 5)
    assert measured_cost(reduced, part) == pytest.approx(1.4, abs=1e-12)


@given(st.integers(2, 8), st.data())
def test_measured_cost_matches_pass_counting(M, data):
    sizes = data.draw(st.lists(st.integers(1, 9), min_size=M, max_size=M))
    K = data.draw(st.integers(1, M))
    E = data.draw(st.integers(1, 20))
    lam = data.draw(st.sampled_from([1, 1.5, 2, 3, 4]))
    labels = np.repeat(np.arange(M), sizes)
    part = partition_by_class(LabeledDataset(np.zeros((labels.size, 1)), labels, M))
    sched = build_schedule(random_ordering(M, data.draw(st.integers(0, 99))), K, E, lam)
    classes = [set(sched.classes_at_stage(k)) for k in range(1, K + 1)]
    expected = sample_passes(classes, sched.stage_epochs, labels.tolist()) / (E * labels.size)
    assert measured_cost(sched, part) == pytest.approx(expected, rel=0, abs=1e-12)


@given(st.integers(1, 10), st.sampled_from([1, 2, 5, 10]))
def test_cost_exactness(K, lam):
    part = partition_by_class(balanced(2 * K, 4))
    E = 10
    equal = build_schedule(natural_ordering(2 * K), K, E, 1)
    reduced = build_schedule(natural_ordering(2 * K), K, E, lam)
    assert abs(measured_cost(equal, part) - (K + 1) / 2) <= 1e-12
    assert abs(measured_cost(reduced, part) - ((K - 1) / (2 * lam) + 1)) <= 1e-12


def test_schedule_deterministic_and_table():
    a = build_schedule(random_ordering(6, 3), 3, 9, 3)
    b = build_schedule(random_ordering(6, 3), 3, 9, 3)
    assert a.to_dict() == b.to_dict()
    text = format_schedule(a, [f"c{m}" for m in range(6)])
    lines = text.splitlines()
    assert lines[0].split()[:2] == ["stage", "classes"]
    assert len(lines) == 5
    assert "reduced 1.3333" in lines[-1]
    assert a.to_dict()["stages"][2]["epochs"] == 9
