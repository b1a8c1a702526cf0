"""Fixed-budget episodic memory: a class-balanced ring buffer per task,
sampled uniformly for replay minibatches.

Each task gets `per_task_budget` slots divided evenly across its classes
(remainder to the lowest class ids). Within a class the ring overwrites its
oldest entry once full, so the buffer always holds the most recent
quota-many examples of every class.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

_MAGIC = b"SRKM"
_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass(frozen=True)
class ReplayBatch:
    """Aligned replay arrays; empty when nothing qualifies."""

    inputs: np.ndarray
    labels: np.ndarray
    task_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def _empty_batch() -> ReplayBatch:
    return ReplayBatch(inputs=np.empty((0,)), labels=np.empty((0,), dtype=np.int64),
                       task_ids=np.empty((0,), dtype=np.int64))


@dataclass
class _ClassRing:
    quota: int
    items: list = field(default_factory=list)
    write_count: int = 0

    def push(self, x: np.ndarray, label: int) -> None:
        if self.quota == 0:
            return
        entry = (np.array(x, copy=True), label)
        if len(self.items) < self.quota:
            self.items.append(entry)
        else:
            self.items[self.write_count % self.quota] = entry
        self.write_count += 1


class EpisodicMemory:
    """Ring-buffer replay store keyed by (task, class)."""

    def __init__(self, per_task_budget: int, classes_per_task: int, seed: int = 0):
        if per_task_budget < 1:
            raise ValueError(f"per_task_budget must be positive, got {per_task_budget}")
        if classes_per_task < 1:
            raise ValueError(f"classes_per_task must be positive, got {classes_per_task}")
        self.per_task_budget = per_task_budget
        self.classes_per_task = classes_per_task
        self.rng = np.random.default_rng(seed)
        self._tasks: dict[int, list[_ClassRing]] = {}

    def _rings_for(self, task_id: int) -> list[_ClassRing]:
        rings = self._tasks.get(task_id)
        if rings is None:
            base = self.per_task_budget // self.classes_per_task
            extra = self.per_task_budget % self.classes_per_task
            rings = [_ClassRing(quota=base + (1 if c < extra else 0))
                     for c in range(self.classes_per_task)]
            self._tasks[task_id] = rings
        return rings

    def write_batch(self, task_id: int, inputs, labels) -> None:
        """Append one incoming batch of the current task, FIFO per class."""
        rings = self._rings_for(task_id)
        for x, y in zip(inputs, labels):
            y = int(y)
            if not 0 <= y < self.classes_per_task:
                raise ValueError(
                    f"unknown class label {y} for task {task_id} "
                    f"(expected 0..{self.classes_per_task - 1})")
            rings[y].push(x, y)

    def class_counts(self, task_id: int) -> dict[int, int]:
        rings = self._tasks.get(task_id, [])
        return {c: len(r.items) for c, r in enumerate(rings)}

    def task_total(self, task_id: int) -> int:
        return sum(len(r.items) for r in self._tasks.get(task_id, []))

    def __len__(self) -> int:
        return sum(self.task_total(t) for t in self._tasks)

    def entries(self, before_task: int | None = None):
        """Deterministic enumeration: tasks ascending, classes ascending,
        ring slot order."""
        out = []
        for t in sorted(self._tasks):
            if before_task is not None and t >= before_task:
                continue
            for ring in self._tasks[t]:
                for x, y in ring.items:
                    out.append((x, y, t))
        return out

    def sample(self, n: int, exclude_task: int) -> ReplayBatch:
        """Uniform sample without replacement over entries of earlier tasks.

        Returns everything when fewer than n entries exist; an empty batch
        when no earlier-task entry is stored.
        """
        if n < 1:
            raise ValueError(f"sample size must be positive, got {n}")
        pool = self.entries(before_task=exclude_task)
        if not pool:
            return _empty_batch()
        if len(pool) > n:
            idx = self.rng.choice(len(pool), size=n, replace=False)
            pool = [pool[i] for i in idx]
        inputs = np.stack([x for x, _, _ in pool])
        labels = np.array([y for _, y, _ in pool], dtype=np.int64)
        task_ids = np.array([t for _, _, t in pool], dtype=np.int64)
        return ReplayBatch(inputs=inputs, labels=labels, task_ids=task_ids)

    # -- persistence: flat binary record; the sampling rng state is not
    #    serialized, a resumed run re-seeds its sampler.

    def to_bytes(self) -> bytes:
        chunks = [_MAGIC, struct.pack("<III", _VERSION, self.per_task_budget,
                                      self.classes_per_task),
                  struct.pack("<I", len(self._tasks))]
        for t in sorted(self._tasks):
            rings = self._tasks[t]
            chunks.append(struct.pack("<qI", t, len(rings)))
            for ring in rings:
                chunks.append(struct.pack("<IQI", ring.quota, ring.write_count,
                                          len(ring.items)))
                for x, y in ring.items:
                    code = _DTYPE_CODES[np.dtype(x.dtype)]
                    chunks.append(struct.pack("<iBB", y, code, x.ndim))
                    chunks.append(struct.pack(f"<{x.ndim}I", *x.shape))
                    chunks.append(x.tobytes())
        return b"".join(chunks)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes, seed: int = 0) -> "EpisodicMemory":
        view = memoryview(blob)
        off = 0

        def take(fmt):
            nonlocal off
            size = struct.calcsize(fmt)
            if off + size > len(view):
                raise ValueError("truncated memory record")
            vals = struct.unpack_from(fmt, view, off)
            off += size
            return vals

        if bytes(view[:4]) != _MAGIC:
            raise ValueError("bad magic in memory record")
        off = 4
        version, budget, cpt = take("<III")
        if version != _VERSION:
            raise ValueError(f"unsupported memory record version {version}")
        mem = cls(budget, cpt, seed=seed)
        (num_tasks,) = take("<I")
        for _ in range(num_tasks):
            t, num_rings = take("<qI")
            rings = []
            for _ in range(num_rings):
                quota, write_count, count = take("<IQI")
                ring = _ClassRing(quota=quota, write_count=write_count)
                for _ in range(count):
                    y, code, ndim = take("<iBB")
                    shape = take(f"<{ndim}I")
                    dtype = _CODE_DTYPES[code]
                    nbytes = int(np.prod(shape)) * dtype.itemsize if ndim else dtype.itemsize
                    if off + nbytes > len(view):
                        raise ValueError("truncated memory record")
                    x = np.frombuffer(view, dtype=dtype, count=max(1, int(np.prod(shape))),
                                      offset=off).reshape(shape).copy()
                    off += nbytes
                    ring.items.append((x, y))
                rings.append(ring)
            mem._tasks[t] = rings
        return mem

    @classmethod
    def load(cls, path, seed: int = 0) -> "EpisodicMemory":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read(), seed=seed)
