"""Benchmark construction: split a labeled dataset into disjoint-class tasks
with single-pass seeded train streams and held-out test sets, plus a
synthetic Gaussian-blob suite for desk-scale experiments and loaders for two
self-describing file formats.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

RAW_MAGIC = b"SRKD"


class DataFormatError(ValueError):
    """A dataset file violates its declared format."""


@dataclass(frozen=True)
class Dataset:
    """Labeled examples with values in [0, 1] and integer labels."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.inputs.shape[1:]

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class Task:
    """One task: disjoint global classes remapped to local labels 0..n-1."""

    task_id: int
    class_ids: tuple[int, ...]
    label_map: dict
    train_inputs: np.ndarray
    train_labels: np.ndarray
    test_inputs: np.ndarray
    test_labels: np.ndarray

    def train_stream(self, batch_size: int):
        """Yield (inputs, labels, task_id) batches; each example exactly once."""
        if batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {batch_size}")
        n = len(self.train_labels)
        for start in range(0, n, batch_size):
            stop = min(start + batch_size, n)
            yield self.train_inputs[start:stop], self.train_labels[start:stop], self.task_id


@dataclass(frozen=True)
class Benchmark:
    tasks: tuple[Task, ...]
    classes_per_task: int
    input_shape: tuple[int, ...]
    seed: int

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)


def _class_indices(labels: np.ndarray, class_id: int) -> np.ndarray:
    idx = np.nonzero(labels == class_id)[0]
    if idx.size == 0:
        raise ValueError(f"class {class_id} has no examples")
    return idx


def split_benchmark(dataset: Dataset, num_tasks: int, classes_per_task: int,
                    seed: int, *, ordered_classes: bool = False,
                    test_dataset: Dataset | None = None,
                    test_fraction: float = 0.2) -> Benchmark:
    """Assign disjoint class groups to tasks and shuffle within-task order.

    Classes are taken from a seed-shuffled permutation by default, or in
    ascending label order with `ordered_classes`. When no separate test
    dataset is given, a per-class fraction of the train examples is held out.
    """
    if num_tasks < 1 or classes_per_task < 1:
        raise ValueError("num_tasks and classes_per_task must be positive")
    needed = num_tasks * classes_per_task
    if needed > dataset.num_classes:
        raise ValueError(
            f"insufficient classes: need {needed}, dataset declares {dataset.num_classes}")
    rng = np.random.default_rng(seed)
    if ordered_classes:
        order = np.arange(dataset.num_classes)
    else:
        order = rng.permutation(dataset.num_classes)
    tasks = []
    for k in range(num_tasks):
        class_ids = tuple(int(c) for c in order[k * classes_per_task:(k + 1) * classes_per_task])
        label_map = {g: i for i, g in enumerate(class_ids)}
        train_x, train_y, test_x, test_y = [], [], [], []
        for local, g in enumerate(class_ids):
            idx = _class_indices(dataset.labels, g)
            if test_dataset is not None:
                tidx = _class_indices(test_dataset.labels, g)
                train_x.append(dataset.inputs[idx])
                train_y.append(np.full(idx.size, local, dtype=np.int64))
                test_x.append(test_dataset.inputs[tidx])
                test_y.append(np.full(tidx.size, local, dtype=np.int64))
            else:
                perm = rng.permutation(idx)
                n_test = max(1, int(round(idx.size * test_fraction)))
                if n_test >= idx.size:
                    raise ValueError(f"class {g} too small to hold out a test split")
                test_x.append(dataset.inputs[perm[:n_test]])
                test_y.append(np.full(n_test, local, dtype=np.int64))
                train_x.append(dataset.inputs[perm[n_test:]])
                train_y.append(np.full(idx.size - n_test, local, dtype=np.int64))
        tx = np.concatenate(train_x)
        ty = np.concatenate(train_y)
        stream_order = rng.permutation(len(ty))
        tasks.append(Task(task_id=k, class_ids=class_ids, label_map=label_map,
                          train_inputs=tx[stream_order], train_labels=ty[stream_order],
                          test_inputs=np.concatenate(test_x),
                          test_labels=np.concatenate(test_y)))
    return Benchmark(tasks=tuple(tasks), classes_per_task=classes_per_task,
                     input_shape=dataset.input_shape, seed=seed)


def synthetic_suite(num_tasks: int, classes_per_task: int, dims, samples_per_class: int,
                    seed: int, *, separation: float = 0.7, noise: float = 1.0,
                    test_fraction: float = 0.2) -> Benchmark:
    """Gaussian-blob tasks: one unit-RMS random pattern per class, scaled by
    `separation`, plus isotropic noise. Deterministic for a fixed seed."""
    if num_tasks < 1 or classes_per_task < 1 or samples_per_class < 1:
        raise ValueError("suite sizes must be positive")
    dims = tuple(int(d) for d in dims)
    rng = np.random.default_rng(seed)
    n_test = int(round(samples_per_class * test_fraction))
    if not 0 < n_test < samples_per_class:
        raise ValueError("test_fraction leaves no train or no test examples")
    tasks = []
    for k in range(num_tasks):
        patterns = []
        for _ in range(classes_per_task):
            p = rng.normal(size=dims)
            patterns.append(p * (separation / np.sqrt(np.mean(p ** 2))))
        # center the task's class means so every task occupies the same input
        # region; tasks then compete for the same features instead of landing
        # in disjoint activation regions
        center = np.mean(patterns, axis=0)
        train_x, train_y, test_x, test_y = [], [], [], []
        for local in range(classes_per_task):
            pattern = patterns[local] - center
            samples = pattern + noise * rng.normal(size=(samples_per_class,) + dims)
            train_x.append(samples[:samples_per_class - n_test])
            train_y.append(np.full(samples_per_class - n_test, local, dtype=np.int64))
            test_x.append(samples[samples_per_class - n_test:])
            test_y.append(np.full(n_test, local, dtype=np.int64))
        tx = np.concatenate(train_x)
        ty = np.concatenate(train_y)
        stream_order = rng.permutation(len(ty))
        class_ids = tuple(range(k * classes_per_task, (k + 1) * classes_per_task))
        tasks.append(Task(task_id=k, class_ids=class_ids,
                          label_map={g: i for i, g in enumerate(class_ids)},
                          train_inputs=tx[stream_order], train_labels=ty[stream_order],
                          test_inputs=np.concatenate(test_x),
                          test_labels=np.concatenate(test_y)))
    return Benchmark(tasks=tuple(tasks), classes_per_task=classes_per_task,
                     input_shape=dims, seed=seed)


def _load_csv_labeled(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file, expected a header row") from None
        if not header or header[0].strip() != "label":
            raise DataFormatError(f"{path}: malformed header, first column must be 'label'")
        width = len(header)
        if width < 2:
            raise DataFormatError(f"{path}: header declares no feature columns")
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                label = int(row[0])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: label {row[0]!r} is not an integer") from None
            if label < 0:
                raise DataFormatError(f"{path}:{lineno}: label {label} is negative")
            try:
                feats = [float(v) for v in row[1:]]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric feature value") from None
            labels.append(label)
            rows.append(feats)
    inputs = np.asarray(rows, dtype=np.float64).reshape(len(rows), width - 1)
    labels_arr = np.asarray(labels, dtype=np.int64)
    if inputs.size and (inputs.min() < 0.0 or inputs.max() > 1.0):
        raise DataFormatError(f"{path}: feature values must lie in [0, 1]")
    num_classes = int(labels_arr.max()) + 1 if labels_arr.size else 0
    return Dataset(inputs=inputs, labels=labels_arr, num_classes=num_classes)


def _load_raw_u8(path) -> Dataset:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != RAW_MAGIC:
        raise DataFormatError(f"{path}: bad magic, expected {RAW_MAGIC!r}")
    header_size = 4 + 5 * 4
    if len(blob) < header_size:
        raise DataFormatError(f"{path}: truncated header")
    count, h, w, c, num_classes = struct.unpack_from("<5I", blob, 4)
    example_bytes = h * w * c
    record = 4 + example_bytes
    expected = header_size + count * record
    if len(blob) < expected:
        raise DataFormatError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(blob)}")
    inputs = np.empty((count, h, w, c), dtype=np.float64)
    labels = np.empty(count, dtype=np.int64)
    off = header_size
    for i in range(count):
        (label,) = struct.unpack_from("<I", blob, off)
        if label >= num_classes:
            raise DataFormatError(
                f"{path}: example {i} label {label} out of declared range {num_classes}")
        labels[i] = label
        pixels = np.frombuffer(blob, dtype=np.uint8, count=example_bytes, offset=off + 4)
        inputs[i] = pixels.reshape(h, w, c) / 255.0
        off += record
    return Dataset(inputs=inputs, labels=labels, num_classes=num_classes)


def load_dataset(path, format: str) -> Dataset:
    """Load a labeled dataset; values come back in [0, 1], labels as ints."""
    if format == "csv_labeled":
        return _load_csv_labeled(path)
    if format == "raw_u8_images":
        return _load_raw_u8(path)
    raise ValueError(f"unknown dataset format: {format!r}")
