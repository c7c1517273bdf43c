"""Helpers shared by the test modules."""
import numpy as np

from wtamem.activation import fixed_l
from wtamem.autodiff import Tensor, cross_entropy_from_logits, no_grad
from wtamem.gradcheck import grad_check
from wtamem.model import ModelConfig, build
from wtamem.sam import BLANK, SparseMessage, memory_new, store

TINY_SHAPE = (3, 8, 8)


def two_block_config(mode="anneal", ell=2, **kw):
    """Toy network with two residual blocks (one per stage)."""
    return ModelConfig(widths=(4, 8), blocks=1, stem_stride=1, input_shape=TINY_SHAPE,
                       n_classes=3, group=fixed_l(ell), mode=mode, **kw)


def model_grad_error(mode, probes=100, seed=0, temperature=2.0, eps=1e-3):
    """Max relative error of AD against central differences for the two-block
    toy network in ``mode`` (anneal uses the frozen-gate surrogate), 64-bit."""
    model = build(two_block_config(mode), seed=seed, dtype=np.float64)
    names = [n for n, _ in model.named_parameters()]
    init = [p.data.copy() for _, p in model.named_parameters()]
    labels = np.array([0, 1, 2, 1])
    frozen = {}

    def run(ts, trace=None, record=None):
        model.bind_parameters(dict(zip(names, ts[1:])))
        return model.forward(ts[0], mode=mode, temperature=temperature, training=True,
                             trace=trace, record_gates=record,
                             replay_gates=frozen if mode == "anneal" else None)

    def sample(rng):
        point = [rng.normal(size=(4,) + TINY_SHAPE)] + [p + 0.05 * rng.normal(size=p.shape) for p in init]
        if mode == "anneal":
            frozen.clear()
            record = {}
            with no_grad():
                run([Tensor(p) for p in point], record=record)
            frozen.update(record)
        return point

    def f(ts):
        return cross_entropy_from_logits(run(ts), labels)

    def signature(point):
        trace = []
        with no_grad():
            run([Tensor(p) for p in point], trace=trace)
        return [e.preactivation > 0 for e in trace] + [e.output != 0 for e in trace]

    return grad_check(f, sample, probes=probes, seed=seed, eps=eps, signature=signature)


def resnet18_parameter_count(base=64, n_classes=10, cin=3):
    """Closed-form parameter count of the CIFAR ResNet-18 layout (bias-free
    convolutions, batchnorm scale and shift, dense head with bias)."""
    total = cin * base * 9 + 2 * base
    prev = base
    for i, w in enumerate([base, 2 * base, 4 * base, 8 * base]):
        for j in range(2):
            total += prev * w * 9 + 2 * w + w * w * 9 + 2 * w
            if prev != w:
                total += prev * w + 2 * w
            prev = w
    return total + prev * n_classes + n_classes


# -- independent dense oracle ---------------------------------------------------
def one_hot(active, ell):
    v = np.zeros(len(active) * ell, dtype=np.int64)
    for i, a in enumerate(active):
        if a != BLANK:
            v[i * ell + a] = 1
    return v


def oracle_matrix(pairs, c, ell, c_out, ell_out):
    W = np.zeros((c_out * ell_out, c * ell), dtype=np.int64)
    for x, y in pairs:
        W = np.maximum(W, np.outer(one_hot(y, ell_out), one_hot(x, ell)))
    return W


def oracle_retrieve(W, probe, ell, c_out, ell_out):
    """Score every candidate one-hot per output cluster and keep the first best."""
    x = one_hot(probe, ell)
    out = []
    for k in range(c_out):
        best, arg = None, None
        for j in range(ell_out):
            cand = np.zeros(c_out * ell_out, dtype=np.int64)
            cand[k * ell_out + j] = 1
            score = int(cand @ W @ x)
            if best is None or score > best:
                best, arg = score, j
        out.append(arg)
    return tuple(out)


def random_pairs(rng, m, c, ell, c_out, ell_out):
    return [(tuple(rng.integers(0, ell, c)), tuple(rng.integers(0, ell_out, c_out))) for _ in range(m)]


def build_memory(pairs, c, ell, c_out, ell_out):
    mem = memory_new(c, ell, c_out, ell_out)
    for x, y in pairs:
        mem = store(mem, SparseMessage(c, ell, x), SparseMessage(c_out, ell_out, y))
    return mem
