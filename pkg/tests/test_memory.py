import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srkocl.memory import EpisodicMemory


def _write_stream(mem, task, labels):
    """Write scalar examples tagged with their arrival index."""
    for i, y in enumerate(labels):
        mem.write_batch(task, [np.array([float(i)])], [y])


def test_ring_keeps_most_recent_per_class():
    mem = EpisodicMemory(per_task_budget=4, classes_per_task=2, seed=0)
    _write_stream(mem, 0, [0, 1] * 5)  # 10 alternating examples
    stored = {c: sorted(int(x[0]) for x, y, _ in mem.entries(before_task=1) if y == c)
              for c in (0, 1)}
    assert stored[0] == [6, 8]   # last two class-0 arrivals
    assert stored[1] == [7, 9]
    assert mem.task_total(0) == 4


def test_underfull_buffer_keeps_everything():
    mem = EpisodicMemory(per_task_budget=4, classes_per_task=2, seed=0)
    _write_stream(mem, 0, [0, 1, 0])
    assert mem.task_total(0) == 3
    assert mem.class_counts(0) == {0: 2, 1: 1}


def test_quota_remainder_goes_to_lowest_class_ids():
    mem = EpisodicMemory(per_task_budget=5, classes_per_task=2, seed=0)
    _write_stream(mem, 0, [0, 1] * 10)
    assert mem.class_counts(0) == {0: 3, 1: 2}


def test_unknown_class_label_rejected():
    mem = EpisodicMemory(per_task_budget=4, classes_per_task=2, seed=0)
    with pytest.raises(ValueError):
        mem.write_batch(0, [np.zeros(1)], [2])


def test_stored_entries_are_deep_copies():
    mem = EpisodicMemory(per_task_budget=4, classes_per_task=1, seed=0)
    x = np.array([1.0, 2.0])
    mem.write_batch(0, [x], [0])
    x[:] = 99.0
    (stored, _, _), = mem.entries(before_task=1)
    npt.assert_array_equal(stored, [1.0, 2.0])


def test_constructor_validation():
    with pytest.raises(ValueError):
        EpisodicMemory(0, 2)
    with pytest.raises(ValueError):
        EpisodicMemory(4, 0)


# ---------------------------------------------------------------------------
# sampling


def test_sample_empty_memory():
    mem = EpisodicMemory(4, 2, seed=0)
    batch = mem.sample(10, exclude_task=0)
    assert len(batch) == 0


def test_sample_returns_all_when_undersized():
    mem = EpisodicMemory(4, 2, seed=0)
    _write_stream(mem, 0, [0, 1, 0])
    batch = mem.sample(10, exclude_task=1)
    assert len(batch) == 3
    assert set(batch.task_ids) == {0}


def test_sample_excludes_current_and_later_tasks():
    mem = EpisodicMemory(4, 2, seed=0)
    _write_stream(mem, 0, [0, 1])
    _write_stream(mem, 1, [0, 1])
    _write_stream(mem, 2, [0, 1])
    batch = mem.sample(100, exclude_task=2)
    assert set(batch.task_ids) == {0, 1}


def test_sample_without_replacement():
    mem = EpisodicMemory(6, 2, seed=3)
    _write_stream(mem, 0, [0, 1, 0, 1, 0, 1])
    batch = mem.sample(4, exclude_task=1)
    stamps = [int(x[0]) for x in batch.inputs]
    assert len(stamps) == len(set(stamps)) == 4


def test_sample_size_must_be_positive():
    mem = EpisodicMemory(4, 2, seed=0)
    with pytest.raises(ValueError):
        mem.sample(0, exclude_task=1)


def test_sampling_roughly_uniform():
    mem = EpisodicMemory(4, 2, seed=7)
    _write_stream(mem, 0, [0, 0, 1, 1])
    draws = 4000
    freq = np.zeros(4)
    for _ in range(draws):
        got = mem.sample(1, exclude_task=1)
        freq[int(got.inputs[0][0])] += 1
    npt.assert_allclose(freq / draws, 0.25, atol=0.03)


# ---------------------------------------------------------------------------
# invariants over random streams


@settings(max_examples=60, deadline=None)
@given(budget=st.integers(1, 12), ncls=st.integers(1, 4),
       labels=st.lists(st.integers(0, 3), max_size=50), seed=st.integers(0, 999))
def test_budget_balance_recency_invariants(budget, ncls, labels, seed):
    labels = [y % ncls for y in labels]
    mem = EpisodicMemory(budget, ncls, seed=seed)
    _write_stream(mem, 0, labels)

    assert mem.task_total(0) <= budget

    base, extra = budget // ncls, budget % ncls
    quotas = {c: base + (1 if c < extra else 0) for c in range(ncls)}
    history = {c: [i for i, y in enumerate(labels) if y == c] for c in range(ncls)}
    stored = {c: sorted(int(x[0]) for x, y, _ in mem.entries(before_task=1) if y == c)
              for c in range(ncls)}
    for c in range(ncls):
        assert stored[c] == sorted(history[c][-quotas[c]:]) if quotas[c] else stored[c] == []

    counts = mem.class_counts(0)
    if ncls > 1 and all(len(history[c]) >= quotas[c] and quotas[c] for c in range(ncls)):
        assert max(counts.values()) - min(counts.values()) <= 1


# ---------------------------------------------------------------------------
# persistence


def test_round_trip_preserves_contents(tmp_path):
    mem = EpisodicMemory(5, 2, seed=1)
    rng = np.random.default_rng(0)
    for t in range(3):
        for y in (0, 1, 0, 1, 1):
            mem.write_batch(t, [rng.normal(size=(2, 3)).astype(np.float32)], [y])
    path = tmp_path / "memory.bin"
    mem.save(path)
    loaded = EpisodicMemory.load(path, seed=1)
    assert loaded.per_task_budget == mem.per_task_budget
    assert loaded.classes_per_task == mem.classes_per_task
    orig = mem.entries()
    back = loaded.entries()
    assert len(orig) == len(back)
    for (xa, ya, ta), (xb, yb, tb) in zip(orig, back):
        npt.assert_array_equal(xa, xb)
        assert xa.dtype == xb.dtype
        assert (ya, ta) == (yb, tb)


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ValueError):
        EpisodicMemory.load(path)


def test_load_rejects_truncation(tmp_path):
    mem = EpisodicMemory(4, 2, seed=0)
    _write_stream(mem, 0, [0, 1])
    blob = mem.to_bytes()
    with pytest.raises(ValueError):
        EpisodicMemory.from_bytes(blob[:-4])
