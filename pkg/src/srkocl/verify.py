"""Runtime verification battery: gradient checks against central finite
differences for every differentiable op, the attention kernel-size rule
against a brute-force oracle, pooled-embedding exactness, and ring-buffer
invariants. `srkocl verify` runs these and reports one line per check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import eca, pod
from .memory import EpisodicMemory
from .tensor import (Tensor, add, conv1d, conv2d, global_avg_pool, grad_check, linear,
                     mul, relu, scale, sigmoid, softmax_cross_entropy, sum_all, tensor)

GRAD_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _away_from_zero(rng, shape, margin=0.05):
    """Samples with no coordinate near 0, so relu finite differences are clean."""
    x = rng.normal(size=shape)
    x = np.where(np.abs(x) < margin, x + np.sign(x) * margin + (x == 0) * margin, x)
    return x


def _project(out: Tensor, proj: np.ndarray) -> Tensor:
    """Scalarize an op output with a fixed random projection."""
    return sum_all(mul(out, tensor(proj)))


def _toy_two_stage_loss(params, x, target, prev_stage_vals):
    """CE + pooled-drift loss through a hand-built two-stage conv net."""
    k1, e1, k2, e2, hw, hb = params
    s1 = relu(eca.eca_forward(conv2d(x, k1, stride=1, pad=1), e1))
    s2 = relu(eca.eca_forward(conv2d(s1, k2, stride=2, pad=1), e2))
    pooled = global_avg_pool(s2)
    ce = softmax_cross_entropy(linear(pooled, hw, hb), target)
    drift = pod.pod_loss([s1, s2], [tensor(v) for v in prev_stage_vals])
    return add(ce, scale(drift, 0.5))


def check_gradients(trials: int = 20, seed: int = 0) -> list[CheckResult]:
    """Randomized-shape finite-difference checks, one result per op family."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}

    def record(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for _ in range(trials):
        # conv2d wrt input and kernels
        kh, kw = rng.choice([1, 3]), rng.choice([1, 3])
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        stride, padv = int(rng.choice([1, 2])), int(rng.choice([0, 1]))
        h = int(rng.integers(kh, kh + 4))
        w = int(rng.integers(kw, kw + 4))
        x = tensor(rng.normal(size=(h, w, cin)), requires_grad=True)
        k = tensor(rng.normal(size=(kh, kw, cin, cout)), requires_grad=True)
        ho = (h + 2 * padv - kh) // stride + 1
        wo = (w + 2 * padv - kw) // stride + 1
        proj = rng.normal(size=(ho, wo, cout))
        record("conv2d", grad_check(lambda t: _project(conv2d(t, k, stride, padv), proj), x))
        record("conv2d", grad_check(lambda t: _project(conv2d(x, t, stride, padv), proj), k))

        # conv1d wrt input and weight
        c = int(rng.integers(1, 9))
        klen = int(rng.choice([1, 3, 5]))
        d = tensor(rng.normal(size=c), requires_grad=True)
        wv = tensor(rng.normal(size=klen), requires_grad=True)
        proj1 = rng.normal(size=c)
        record("conv1d", grad_check(lambda t: _project(conv1d(t, wv), proj1), d))
        record("conv1d", grad_check(lambda t: _project(conv1d(d, t), proj1), wv))

        # linear wrt all three operands
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        lx = tensor(rng.normal(size=n), requires_grad=True)
        lw = tensor(rng.normal(size=(n, m)), requires_grad=True)
        lb = tensor(rng.normal(size=m), requires_grad=True)
        projm = rng.normal(size=m)
        record("linear", grad_check(lambda t: _project(linear(t, lw, lb), projm), lx))
        record("linear", grad_check(lambda t: _project(linear(lx, t, lb), projm), lw))
        record("linear", grad_check(lambda t: _project(linear(lx, lw, t), projm), lb))

        # activations and pooling
        shape = tuple(rng.integers(1, 5, size=3))
        ax = tensor(_away_from_zero(rng, shape), requires_grad=True)
        projs = rng.normal(size=shape)
        record("relu", grad_check(lambda t: _project(relu(t), projs), ax))
        sx = tensor(rng.normal(size=shape), requires_grad=True)
        record("sigmoid", grad_check(lambda t: _project(sigmoid(t), projs), sx))
        gx = tensor(rng.normal(size=shape), requires_grad=True)
        projc = rng.normal(size=shape[-1])
        record("global_avg_pool", grad_check(lambda t: _project(global_avg_pool(t), projc), gx))

        # softmax cross-entropy
        classes = int(rng.integers(2, 7))
        logits = tensor(rng.uniform(-2, 2, size=classes), requires_grad=True)
        targ = int(rng.integers(0, classes))
        record("softmax_cross_entropy", grad_check(lambda t: softmax_cross_entropy(t, targ), logits))

        # eca_forward wrt feature map and gate weights
        ch = int(rng.integers(1, 9))
        blk = eca.make_eca_block(ch, rng)
        z = tensor(rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(1, 4)), ch)),
                   requires_grad=True)
        projz = rng.normal(size=z.data.shape)
        record("eca_forward", grad_check(lambda t: _project(eca.eca_forward(t, blk), projz), z))
        blk.weights.requires_grad = True
        record("eca_forward",
               grad_check(lambda t: _project(eca.eca_forward(z, eca.EcaBlock(ch, blk.kernel_size, t)), projz),
                          blk.weights))

        # pod_embed and pod_loss
        ph, pw_, pc = (int(v) for v in rng.integers(1, 5, size=3))
        pz = tensor(rng.normal(size=(ph, pw_, pc)), requires_grad=True)
        proje = rng.normal(size=(ph + pw_, pc))
        record("pod_embed", grad_check(lambda t: _project(pod.pod_embed(t), proje), pz))
        prev = [rng.normal(size=(ph, pw_, pc))]
        record("pod_loss", grad_check(lambda t: pod.pod_loss([t], [tensor(v) for v in prev]), pz))

        # full combined loss through a two-stage toy net
        cin_t = int(rng.integers(1, 3))
        tx = tensor(rng.normal(size=(5, 5, cin_t)))
        k1 = tensor(rng.normal(size=(3, 3, cin_t, 2)) * 0.7, requires_grad=True)
        k2 = tensor(rng.normal(size=(3, 3, 2, 3)) * 0.7, requires_grad=True)
        e1 = eca.make_eca_block(2, rng)
        e2 = eca.make_eca_block(3, rng)
        hw_ = tensor(rng.normal(size=(3, 3)), requires_grad=True)
        hb = tensor(rng.normal(size=3), requires_grad=True)
        params = [k1, e1, k2, e2, hw_, hb]
        targ2 = int(rng.integers(0, 3))
        prev_vals = [rng.normal(size=(5, 5, 2)), rng.normal(size=(3, 3, 3))]

        def toy(t, slot):
            ps = list(params)
            if slot == 1:
                ps[1] = eca.EcaBlock(2, e1.kernel_size, t)
            elif slot == 3:
                ps[3] = eca.EcaBlock(3, e2.kernel_size, t)
            else:
                ps[slot] = t
            return _toy_two_stage_loss(ps, tx, targ2, prev_vals)

        slot = int(rng.integers(0, 6))
        leaf = params[slot].weights if slot in (1, 3) else params[slot]
        record("loss_total_toy", grad_check(lambda t: toy(t, slot), leaf))

    return [CheckResult(name=f"grad_{name}", passed=err < GRAD_TOL,
                        detail=f"max_rel_err={err:.3e}")
            for name, err in sorted(worst.items())]


def brute_force_kernel_size(channels: int, lam: float = 2.0, b: float = 1.0,
                            search_limit: int = 4099) -> int:
    """Independent oracle: scan odd integers for the nearest to the rule's
    argument, preferring the smaller on ties."""
    x = abs(math.log2(channels) / lam + b / lam)
    best, best_dist = 1, float("inf")
    for k in range(1, search_limit, 2):
        dist = abs(k - x)
        if dist < best_dist:
            best, best_dist = k, dist
    return min(best, channels if channels % 2 == 1 else channels - 1) if channels > 1 else 1


def check_kernel_size_rule(max_channels: int = 1024) -> CheckResult:
    mismatches = [c for c in range(1, max_channels + 1)
                  if eca.kernel_size_rule(c) != brute_force_kernel_size(c)]
    spot_ok = eca.kernel_size_rule(64) == 3 and eca.kernel_size_rule(512) == 5
    passed = not mismatches and spot_ok
    detail = f"C=1..{max_channels} all match; C=64->3, C=512->5" if passed else \
        f"mismatches at {mismatches[:5]} spot_ok={spot_ok}"
    return CheckResult(name="eca_kernel_size_rule", passed=passed, detail=detail)


def naive_pod_embed(z: np.ndarray) -> np.ndarray:
    """Double-loop mean oracle for the pooled embedding."""
    h, w, c = z.shape
    out = np.zeros((h + w, c))
    for i in range(h):
        for k in range(c):
            s = 0.0
            for j in range(w):
                s += z[i, j, k]
            out[i, k] = s / w
    for j in range(w):
        for k in range(c):
            s = 0.0
            for i in range(h):
                s += z[i, j, k]
            out[h + j, k] = s / h
    return out


def check_pod(tensors: int = 50, seed: int = 1) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    exact = True
    for _ in range(tensors):
        h, w, c = (int(v) for v in rng.integers(1, 7, size=3))
        z = rng.normal(size=(h, w, c))
        got = pod.pod_embed(tensor(z)).data
        if not np.array_equal(got, naive_pod_embed(z)):
            exact = False
            break
    results = [CheckResult("pod_embed_exact", exact,
                           f"{tensors} random tensors vs double-loop oracle")]

    f = [tensor(rng.normal(size=(3, 4, 2))), tensor(rng.normal(size=(2, 2, 5)))]
    zero = float(pod.pod_loss(f, f).data)
    results.append(CheckResult("pod_loss_zero_on_identical", zero == 0.0,
                               f"pod_loss(f,f)={zero}"))

    base = [np.zeros((3, 4, 2)), np.zeros((2, 2, 5))]
    cur = [tensor(rng.normal(size=b.shape)) for b in base]
    dbl = [tensor(2.0 * c_.data) for c_ in cur]
    l1 = float(pod.pod_loss(cur, [tensor(b) for b in base]).data)
    l2 = float(pod.pod_loss(dbl, [tensor(b) for b in base]).data)
    homog = math.isclose(l2, 4.0 * l1, rel_tol=1e-12)
    results.append(CheckResult("pod_loss_quadratic_homogeneity", homog,
                               f"loss(2d)={l2:.6g} vs 4*loss(d)={4 * l1:.6g}"))
    return results


def check_ring_buffer(streams: int = 200, draws: int = 10000, seed: int = 2) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    violations = []
    for s in range(streams):
        budget = int(rng.integers(1, 13))
        ncls = int(rng.integers(1, 5))
        mem = EpisodicMemory(budget, ncls, seed=int(rng.integers(0, 2 ** 31)))
        history: dict[int, list[int]] = {c: [] for c in range(ncls)}
        stamp = 0
        for _ in range(int(rng.integers(1, 8))):
            bs = int(rng.integers(1, 7))
            labels = rng.integers(0, ncls, size=bs)
            inputs = [np.array([stamp + i], dtype=np.float64) for i in range(bs)]
            mem.write_batch(0, inputs, labels)
            for i, y in enumerate(labels):
                history[int(y)].append(stamp + i)
            stamp += bs
        if mem.task_total(0) > budget:
            violations.append((s, "budget"))
        base, extra = budget // ncls, budget % ncls
        quotas = {c: base + (1 if c < extra else 0) for c in range(ncls)}
        counts = mem.class_counts(0)
        stored = {c: sorted(int(x[0]) for x, y, _ in mem.entries(before_task=1)
                            if y == c) for c in range(ncls)}
        for c in range(ncls):
            expect = sorted(history[c][-quotas[c]:]) if quotas[c] else []
            if counts.get(c, 0) != len(expect) or stored[c] != expect:
                violations.append((s, f"recency/class {c}"))
        full = [c for c in range(ncls) if len(history[c]) >= quotas[c] and quotas[c]]
        if len(full) == ncls and ncls > 1:
            got = [counts[c] for c in range(ncls)]
            if max(got) - min(got) > 1:
                violations.append((s, "balance"))
    results = [CheckResult("ring_buffer_invariants", not violations,
                           f"{streams} random streams" if not violations
                           else f"violated: {violations[:3]}")]

    mem = EpisodicMemory(4, 2, seed=7)
    mem.write_batch(0, [np.array([float(i)]) for i in range(4)], [0, 0, 1, 1])
    freq = np.zeros(4)
    for _ in range(draws):
        got = mem.sample(1, exclude_task=1)
        freq[int(got.inputs[0][0])] += 1
    freq /= draws
    dev = float(np.abs(freq - 0.25).max())
    results.append(CheckResult("ring_buffer_sampling_uniformity", dev <= 0.02,
                               f"max_dev={dev:.4f} over {draws} draws"))
    return results


def run_all_checks(grad_trials: int = 12) -> list[CheckResult]:
    results = check_gradients(trials=grad_trials)
    results.append(check_kernel_size_rule())
    results.extend(check_pod())
    results.extend(check_ring_buffer())
    return results
