"""Online continual training loop: one pass over each task's stream, each
incoming batch concatenated with a replay batch, a single combined loss
(replay cross-entropy plus optional pooled-feature distillation against the
frozen previous-task model), one SGD step per batch, and a memory write.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .backbone import ModelState, apply_head, build_model, forward_features, \
    named_parameters, snapshot
from .data import Benchmark
from .memory import EpisodicMemory, ReplayBatch
from .pod import pod_loss
from .tensor import DTYPES, NumericalError, SgdConfig, Tensor, add, backward, \
    gather_rows, no_grad, scale, sgd_step, softmax_cross_entropy, sum_all, tensor


class TaskMismatchError(ValueError):
    """A stream yielded examples that do not belong to the task being trained."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 10
    learning_rate: float = 0.05
    per_task_budget: int = 65
    replay_enabled: bool = True
    pod_enabled: bool = True
    eca_enabled: bool = True
    pod_weight: float = 1.0
    replay_batch_size: int | None = None  # None: same as batch_size
    nf: int = 20
    eca_lambda: float = 2.0
    eca_b: float = 1.0
    seed: int = 0
    precision: str = "f64"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.per_task_budget < 1:
            raise ValueError(f"per_task_budget must be >= 1, got {self.per_task_budget}")
        if self.precision not in DTYPES:
            raise ValueError(f"precision must be one of {sorted(DTYPES)}, got {self.precision!r}")

    @property
    def effective_replay_batch_size(self) -> int:
        return self.batch_size if self.replay_batch_size is None else self.replay_batch_size


@dataclass
class Batch:
    """Aligned example arrays; task_ids route each example to its own head."""

    inputs: np.ndarray
    labels: np.ndarray
    task_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def combine(current: Batch, replay: ReplayBatch) -> Batch:
    if len(replay) == 0:
        return current
    return Batch(inputs=np.concatenate([current.inputs, replay.inputs]),
                 labels=np.concatenate([current.labels, replay.labels]),
                 task_ids=np.concatenate([current.task_ids, replay.task_ids]))


@dataclass
class TrainerState:
    model: ModelState
    memory: EpisodicMemory
    prev_model: ModelState | None = None
    current_task: int = -1
    step_count: int = 0


def _routed_cross_entropy(model: ModelState, pooled: Tensor, batch: Batch) -> Tensor:
    """Mean cross-entropy with each example's logits from its own task head."""
    n = len(batch)
    total = None
    for t in np.unique(batch.task_ids):
        idx = np.nonzero(batch.task_ids == t)[0]
        logits = apply_head(model, gather_rows(pooled, idx), int(t))
        ce = softmax_cross_entropy(logits, batch.labels[idx])
        part = sum_all(ce)
        total = part if total is None else add(total, part)
    return scale(total, 1.0 / n)


def _as_input_tensor(model: ModelState, inputs: np.ndarray) -> Tensor:
    return tensor(inputs, dtype=DTYPES[model.precision])


def loss_pre(model: ModelState, batch: Batch) -> Tensor:
    """Replay cross-entropy over the combined batch (current plus memory)."""
    if len(batch) == 0:
        raise ValueError("loss_pre: empty batch")
    x = _as_input_tensor(model, batch.inputs)
    pooled, _ = forward_features(model, x)
    return _routed_cross_entropy(model, pooled, batch)


def loss_total(model: ModelState, prev_model: ModelState | None, batch: Batch,
               cfg: TrainConfig) -> Tensor:
    """Combined objective: cross-entropy plus weighted distillation drift.

    The distillation term is exactly absent (not merely zero-weighted at
    runtime) on the first task, when distillation is disabled, or when its
    weight is zero, so ablated runs follow bit-identical trajectories.
    """
    if len(batch) == 0:
        raise ValueError("loss_total: empty batch")
    x = _as_input_tensor(model, batch.inputs)
    pooled, stage_features = forward_features(model, x)
    total = _routed_cross_entropy(model, pooled, batch)
    if cfg.pod_enabled and prev_model is not None and cfg.pod_weight != 0.0:
        with no_grad():
            _, prev_stage_features = forward_features(prev_model, x)
        total = add(total, scale(pod_loss(stage_features, prev_stage_features),
                                 cfg.pod_weight))
    return total


def train_task(state: TrainerState, task_stream, cfg: TrainConfig) -> TrainerState:
    """Single pass over one task's stream: for every incoming batch, sample
    replay, step on the combined loss, then write the batch to memory."""
    sgd_cfg = SgdConfig(learning_rate=cfg.learning_rate, precision=cfg.precision)
    for inputs, labels, task_id in task_stream:
        if task_id != state.current_task:
            raise TaskMismatchError(
                f"stream yielded task {task_id} while training task {state.current_task}")
        current = Batch(inputs=np.asarray(inputs),
                        labels=np.asarray(labels, dtype=np.int64),
                        task_ids=np.full(len(labels), task_id, dtype=np.int64))
        if cfg.replay_enabled:
            replay = state.memory.sample(cfg.effective_replay_batch_size,
                                         exclude_task=task_id)
        else:
            replay = ReplayBatch(inputs=np.empty((0,)),
                                 labels=np.empty(0, dtype=np.int64),
                                 task_ids=np.empty(0, dtype=np.int64))
        combined = combine(current, replay)
        loss = loss_total(state.model, state.prev_model, combined, cfg)
        if not np.isfinite(loss.data):
            raise NumericalError(
                f"non-finite loss at task {task_id}, step {state.step_count}")
        backward(loss)
        params = [p for _, p in named_parameters(state.model) if p.grad is not None]
        sgd_step(params, sgd_cfg)
        if cfg.replay_enabled:
            state.memory.write_batch(task_id, current.inputs, current.labels)
        state.step_count += 1
    return state


def evaluate(model: ModelState, benchmark: Benchmark) -> np.ndarray:
    """Test accuracy on every task's held-out split (one row of R)."""
    row = np.zeros(benchmark.num_tasks)
    with no_grad():
        for j, task in enumerate(benchmark.tasks):
            x = _as_input_tensor(model, task.test_inputs)
            pooled, _ = forward_features(model, x)
            logits = apply_head(model, pooled, task.task_id)
            pred = np.argmax(logits.data, axis=1)
            row[j] = float(np.mean(pred == task.test_labels))
    return row


@dataclass
class RunResult:
    matrix: np.ndarray        # T x T accuracy matrix R
    config: TrainConfig
    model: ModelState | None = None
    memory: EpisodicMemory | None = None
    task_seconds: list = field(default_factory=list)

    @property
    def total_seconds(self) -> float:
        return float(sum(self.task_seconds))


def run_benchmark(benchmark: Benchmark, cfg: TrainConfig) -> RunResult:
    """Algorithm loop over the whole benchmark, filling the accuracy matrix.

    Row k is produced by the model state at the end of task k, before task
    k+1 begins. The previous-model snapshot for distillation is taken at the
    same point. Deterministic for a fixed config.
    """
    if benchmark.num_tasks < 1:
        raise ValueError("benchmark must contain at least one task")
    if cfg.replay_enabled and cfg.per_task_budget < benchmark.classes_per_task:
        raise ValueError(
            f"per_task_budget {cfg.per_task_budget} smaller than classes_per_task "
            f"{benchmark.classes_per_task}")
    model = build_model(cfg.nf, benchmark.num_tasks, benchmark.classes_per_task,
                        benchmark.input_shape, cfg.seed, eca_enabled=cfg.eca_enabled,
                        eca_lambda=cfg.eca_lambda, eca_b=cfg.eca_b,
                        precision=cfg.precision)
    memory = EpisodicMemory(cfg.per_task_budget, benchmark.classes_per_task,
                            seed=cfg.seed)
    state = TrainerState(model=model, memory=memory)
    result = RunResult(matrix=np.zeros((benchmark.num_tasks, benchmark.num_tasks)),
                       config=cfg, model=model, memory=memory)
    for k, task in enumerate(benchmark.tasks):
        started = time.perf_counter()
        state.current_task = task.task_id
        train_task(state, task.train_stream(cfg.batch_size), cfg)
        if cfg.pod_enabled:
            state.prev_model = snapshot(state.model)
        result.matrix[k] = evaluate(state.model, benchmark)
        result.task_seconds.append(time.perf_counter() - started)
    return result
