"""Classification network: a slim ResNet-18 feature extractor (4 residual
stages of 2 basic blocks, base width nf) with a channel-attention block after
every convolution and one linear head per task.

Stage outputs are exposed for pooled-feature distillation. Heads are
disjoint: a loss through one task's head never produces gradient on another
head's parameters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .eca import EcaBlock, eca_forward, make_eca_block
from .tensor import DTYPES, Tensor, add, conv2d, global_avg_pool, linear, relu, tensor

_CKPT_MAGIC = b"SRKC"
_CKPT_VERSION = 1

STAGE_WIDTH_FACTORS = (1, 2, 4, 8)
STAGE_STRIDES = (1, 2, 2, 2)
BLOCKS_PER_STAGE = 2
MIN_SPATIAL = 8


@dataclass
class ConvLayer:
    weight: Tensor  # (kh, kw, cin, cout)
    stride: int
    pad: int


@dataclass
class Head:
    weight: Tensor  # (features, classes)
    bias: Tensor    # (classes,)


@dataclass
class BasicBlock:
    conv1: ConvLayer
    eca1: EcaBlock | None
    conv2: ConvLayer
    eca2: EcaBlock | None
    shortcut_conv: ConvLayer | None
    shortcut_eca: EcaBlock | None


@dataclass
class ModelState:
    nf: int
    num_tasks: int
    classes_per_task: int
    input_shape: tuple[int, int, int]
    seed: int
    eca_enabled: bool
    eca_lambda: float
    eca_b: float
    precision: str
    stem_conv: ConvLayer = None
    stem_eca: EcaBlock | None = None
    stages: list = field(default_factory=list)
    heads: dict = field(default_factory=dict)


@dataclass
class ForwardResult:
    logits: Tensor
    stage_features: list


def _conv(rng: np.random.Generator, kh: int, kw: int, cin: int, cout: int,
          stride: int, pad: int, dtype, gated: bool, damp: float = 1.0) -> ConvLayer:
    # He-gain fan-in uniform; without normalization layers this keeps the
    # relu signal scale stable through the stack. Convs feeding an attention
    # block get a 2x bound to cancel the 0.5-valued gates at init; the second
    # conv of each residual block is damped so blocks start near identity and
    # activation variance does not compound across stages.
    bound = np.sqrt(6.0 / (kh * kw * cin)) * damp
    if gated:
        bound *= 2.0
    w = tensor(rng.uniform(-bound, bound, size=(kh, kw, cin, cout)), dtype=dtype,
               requires_grad=True)
    return ConvLayer(weight=w, stride=stride, pad=pad)


def _head(rng: np.random.Generator, n_in: int, n_out: int, dtype) -> Head:
    bound = 1.0 / np.sqrt(n_in)
    w = tensor(rng.uniform(-bound, bound, size=(n_in, n_out)), dtype=dtype,
               requires_grad=True)
    b = tensor(np.zeros(n_out), dtype=dtype, requires_grad=True)
    return Head(weight=w, bias=b)


def build_model(nf: int, num_tasks: int, classes_per_task: int, input_shape,
                seed: int, *, eca_enabled: bool = True, eca_lambda: float = 2.0,
                eca_b: float = 1.0, precision: str = "f64") -> ModelState:
    """Deterministic construction: the seed fully determines every weight.

    Conv/head weights and attention weights come from two independent
    seeded streams, so the convolutional initialization is identical with
    attention enabled or disabled.
    """
    if nf < 1 or num_tasks < 1 or classes_per_task < 1:
        raise ValueError("nf, num_tasks and classes_per_task must be positive")
    if precision not in DTYPES:
        raise ValueError(f"precision must be one of {sorted(DTYPES)}, got {precision!r}")
    input_shape = tuple(int(d) for d in input_shape)
    if len(input_shape) != 3:
        raise ValueError(f"input_shape must be (H, W, C), got {input_shape}")
    h, w, cin = input_shape
    if h < MIN_SPATIAL or w < MIN_SPATIAL:
        raise ValueError(
            f"input spatial size {h}x{w} too small for 4 downsampling stages "
            f"(minimum {MIN_SPATIAL}x{MIN_SPATIAL})")
    dtype = DTYPES[precision]
    conv_rng, eca_rng = [np.random.default_rng(s)
                         for s in np.random.SeedSequence(seed).spawn(2)]

    def maybe_eca(channels: int) -> EcaBlock | None:
        if not eca_enabled:
            return None
        return make_eca_block(channels, eca_rng, lam=eca_lambda, b=eca_b, dtype=dtype)

    model = ModelState(nf=nf, num_tasks=num_tasks, classes_per_task=classes_per_task,
                       input_shape=input_shape, seed=seed, eca_enabled=eca_enabled,
                       eca_lambda=eca_lambda, eca_b=eca_b, precision=precision)
    model.stem_conv = _conv(conv_rng, 3, 3, cin, nf, stride=1, pad=1, dtype=dtype,
                            gated=eca_enabled)
    model.stem_eca = maybe_eca(nf)
    in_ch = nf
    for factor, stage_stride in zip(STAGE_WIDTH_FACTORS, STAGE_STRIDES):
        out_ch = nf * factor
        blocks = []
        for bi in range(BLOCKS_PER_STAGE):
            stride = stage_stride if bi == 0 else 1
            conv1 = _conv(conv_rng, 3, 3, in_ch, out_ch, stride=stride, pad=1, dtype=dtype,
                          gated=eca_enabled)
            conv2 = _conv(conv_rng, 3, 3, out_ch, out_ch, stride=1, pad=1, dtype=dtype,
                          gated=eca_enabled, damp=0.25)
            if stride != 1 or in_ch != out_ch:
                sc_conv = _conv(conv_rng, 1, 1, in_ch, out_ch, stride=stride, pad=0,
                                dtype=dtype, gated=eca_enabled)
                sc_eca = maybe_eca(out_ch)
            else:
                sc_conv = None
                sc_eca = None
            blocks.append(BasicBlock(conv1=conv1, eca1=maybe_eca(out_ch),
                                     conv2=conv2, eca2=maybe_eca(out_ch),
                                     shortcut_conv=sc_conv, shortcut_eca=sc_eca))
            in_ch = out_ch
        model.stages.append(blocks)
    feat = nf * STAGE_WIDTH_FACTORS[-1]
    for t in range(num_tasks):
        model.heads[t] = _head(conv_rng, feat, classes_per_task, dtype=dtype)
    return model


def _apply_conv(x: Tensor, layer: ConvLayer, eca: EcaBlock | None) -> Tensor:
    out = conv2d(x, layer.weight, stride=layer.stride, pad=layer.pad)
    if eca is not None:
        out = eca_forward(out, eca)
    return out


def forward_features(model: ModelState, x: Tensor):
    """Run the feature extractor; returns (pooled vector, 4 stage outputs)."""
    h = relu(_apply_conv(x, model.stem_conv, model.stem_eca))
    stage_features = []
    for blocks in model.stages:
        for block in blocks:
            y = relu(_apply_conv(h, block.conv1, block.eca1))
            y = _apply_conv(y, block.conv2, block.eca2)
            if block.shortcut_conv is not None:
                sc = _apply_conv(h, block.shortcut_conv, block.shortcut_eca)
            else:
                sc = h
            h = relu(add(y, sc))
        stage_features.append(h)
    return global_avg_pool(h), stage_features


def apply_head(model: ModelState, pooled: Tensor, task_id: int) -> Tensor:
    if task_id not in model.heads:
        raise KeyError(f"unknown task_id {task_id}")
    head = model.heads[task_id]
    return linear(pooled, head.weight, head.bias)


def forward(model: ModelState, x: Tensor, task_id: int) -> ForwardResult:
    if task_id not in model.heads:
        raise KeyError(f"unknown task_id {task_id}")
    pooled, stage_features = forward_features(model, x)
    return ForwardResult(logits=apply_head(model, pooled, task_id),
                         stage_features=stage_features)


def named_parameters(model: ModelState):
    """Stable (name, tensor) ordering used by the optimizer and checkpoints."""
    out = [("stem.conv.weight", model.stem_conv.weight)]
    if model.stem_eca is not None:
        out.append(("stem.eca.weight", model.stem_eca.weights))
    for si, blocks in enumerate(model.stages):
        for bi, block in enumerate(blocks):
            prefix = f"stage{si}.block{bi}"
            out.append((f"{prefix}.conv1.weight", block.conv1.weight))
            if block.eca1 is not None:
                out.append((f"{prefix}.eca1.weight", block.eca1.weights))
            out.append((f"{prefix}.conv2.weight", block.conv2.weight))
            if block.eca2 is not None:
                out.append((f"{prefix}.eca2.weight", block.eca2.weights))
            if block.shortcut_conv is not None:
                out.append((f"{prefix}.shortcut.weight", block.shortcut_conv.weight))
                if block.shortcut_eca is not None:
                    out.append((f"{prefix}.shortcut_eca.weight", block.shortcut_eca.weights))
    for t in sorted(model.heads):
        out.append((f"head{t}.weight", model.heads[t].weight))
        out.append((f"head{t}.bias", model.heads[t].bias))
    return out


def count_parameters(model: ModelState) -> int:
    return sum(p.data.size for _, p in named_parameters(model))


def conv_eca_pairs(model: ModelState):
    """Every convolution with the attention block that follows it (None when
    attention is disabled), in forward order."""
    out = [(model.stem_conv, model.stem_eca)]
    for blocks in model.stages:
        for block in blocks:
            out.append((block.conv1, block.eca1))
            out.append((block.conv2, block.eca2))
            if block.shortcut_conv is not None:
                out.append((block.shortcut_conv, block.shortcut_eca))
    return out


def conv_layers(model: ModelState):
    return [conv for conv, _ in conv_eca_pairs(model)]


def eca_blocks(model: ModelState):
    return [e for _, e in conv_eca_pairs(model) if e is not None]


def snapshot(model: ModelState) -> ModelState:
    """Frozen deep copy: fresh buffers, no gradients, requires_grad off."""
    frozen = build_model(model.nf, model.num_tasks, model.classes_per_task,
                         model.input_shape, model.seed, eca_enabled=model.eca_enabled,
                         eca_lambda=model.eca_lambda, eca_b=model.eca_b,
                         precision=model.precision)
    live = dict(named_parameters(model))
    for name, p in named_parameters(frozen):
        p.data = live[name].data.copy()
        p.grad = None
        p.requires_grad = False
    return frozen


# ---------------------------------------------------------------------------
# checkpointing: versioned binary, bit-exact round trip


def save_checkpoint(model: ModelState, path) -> None:
    params = named_parameters(model)
    chunks = [_CKPT_MAGIC, struct.pack("<I", _CKPT_VERSION)]
    h, w, c = model.input_shape
    chunks.append(struct.pack("<IIIIIIqBBdd", model.nf, model.num_tasks,
                              model.classes_per_task, h, w, c, model.seed,
                              1 if model.eca_enabled else 0,
                              0 if model.precision == "f64" else 1,
                              model.eca_lambda, model.eca_b))
    chunks.append(struct.pack("<I", len(params)))
    for name, p in params:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", p.data.ndim))
        chunks.append(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        chunks.append(p.data.tobytes())
    blob = b"".join(chunks)
    with open(path, "wb") as f:
        f.write(blob)


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _CKPT_MAGIC:
        raise ValueError("bad checkpoint magic")
    off = 4
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = struct.unpack_from("<IIIIIIqBBdd", blob, off)
    off += struct.calcsize("<IIIIIIqBBdd")
    nf, num_tasks, cpt, h, w, c, seed, eca_flag, prec_code, lam, b = header
    precision = "f64" if prec_code == 0 else "f32"
    model = build_model(nf, num_tasks, cpt, (h, w, c), seed,
                        eca_enabled=bool(eca_flag), eca_lambda=lam, eca_b=b,
                        precision=precision)
    params = dict(named_parameters(model))
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    dtype = np.dtype(np.float64 if prec_code == 0 else np.float32)
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        nbytes = size * dtype.itemsize
        if off + nbytes > len(blob):
            raise ValueError("truncated checkpoint")
        arr = np.frombuffer(blob, dtype=dtype, count=size, offset=off).reshape(shape).copy()
        off += nbytes
        if name not in params:
            raise ValueError(f"checkpoint names unknown parameter {name!r}")
        if params[name].data.shape != arr.shape:
            raise ValueError(f"checkpoint shape mismatch for {name!r}")
        params[name].data = arr
    return model


def stage_channel_widths(model: ModelState) -> list:
    return [model.nf * f for f in STAGE_WIDTH_FACTORS]
