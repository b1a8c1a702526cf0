"""Online continual learning with class-balanced replay, pooled-feature
distillation, and efficient channel attention, on a self-contained
deterministic autodiff engine."""

from .tensor import (DTYPES, NumericalError, SgdConfig, ShapeError, Tensor, activation,
                     backward, conv1d, conv2d, global_avg_pool, grad_check, linear,
                     no_grad, relu, sgd_step, sigmoid, softmax_cross_entropy, tensor)
from .eca import EcaBlock, channel_descriptor, eca_apply, eca_forward, eca_gate, \
    kernel_size_rule, make_eca_block
from .pod import pod_embed, pod_loss
from .memory import EpisodicMemory, ReplayBatch
from .backbone import ForwardResult, ModelState, build_model, forward, \
    forward_features, load_checkpoint, named_parameters, save_checkpoint, snapshot
from .trainer import Batch, RunResult, TaskMismatchError, TrainConfig, TrainerState, \
    evaluate, loss_pre, loss_total, run_benchmark, train_task
from .metrics import MetricSummary, RunSummary, acc, fm, la, summarize
from .data import Benchmark, DataFormatError, Dataset, Task, load_dataset, \
    split_benchmark, synthetic_suite

__version__ = "0.1.0"
