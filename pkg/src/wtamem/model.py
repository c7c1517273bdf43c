"""Convolutional architectures with grouped activation sites.

Two topologies are provided: a small configurable CNN (``"toy"``) used at desk
scale and the CIFAR variant of ResNet-18 (``"resnet18"``).  Every ReLU site is
a :class:`GroupedActivation` whose behaviour depends on the activation mode:

``baseline``  plain base activation
``anneal``    softmax-gated activation at the current temperature
``wta``       hard per-group winner-takes-all
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .activation import (BASE_ACTIVATIONS, GroupSpec, TemperatureSchedule, sigma_t,
                         sigma_wta, softmax_gate, temperature_at)
from .autodiff import (Tensor, add, avgpool_global, batchnorm2d, conv2d, conv_output_size,
                       linear, no_grad)

MODES = ("baseline", "anneal", "wta")
ARCHITECTURES = ("toy", "resnet18")
REPLACE_POLICIES = ("all", "no_post_add")


@dataclass
class ModelConfig:
    architecture: str = "toy"
    widths: tuple = (16, 32, 64)
    blocks: int = 0
    stem_stride: int = 2
    base_width: int = 64
    input_shape: tuple = (3, 32, 32)
    n_classes: int = 10
    group: GroupSpec = field(default_factory=GroupSpec)
    mode: str = "baseline"
    binary: bool = False
    t_init: float = 1.0
    t_final: float = 1000.0
    replace_policy: str = "all"
    base_activation: str = "relu"

    def validate(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown activation mode {self.mode!r}")
        if self.replace_policy not in REPLACE_POLICIES:
            raise ValueError(f"unknown replace_policy {self.replace_policy!r}")
        if self.base_activation not in BASE_ACTIVATIONS:
            raise ValueError(f"unknown base activation {self.base_activation!r}")
        if self.architecture == "toy" and not self.widths:
            raise ValueError("toy architecture needs at least one width")
        return self


@dataclass(frozen=True)
class LayerInfo:
    """Static description of one convolution or dense layer.

    ``source`` names the grouped activation site whose output this layer
    consumes directly, or is ``None`` for raw input, residual sums and pooled
    features.
    """

    name: str
    kind: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    in_hw: tuple
    out_hw: tuple
    source: str | None


@dataclass(frozen=True)
class SiteInfo:
    name: str
    channels: int
    hw: tuple
    kind: str
    grouped: bool


@dataclass
class TraceEntry:
    name: str
    output: np.ndarray
    preactivation: np.ndarray
    group_length: int


@dataclass
class _Ctx:
    mode: str
    group: GroupSpec
    base: str
    training: bool = False
    t: float | None = None
    binary: bool = False
    trace: list | None = None
    record_gates: dict | None = None
    replay_gates: dict | None = None


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------
class Conv:
    def __init__(self, name, cin, cout, kernel=3, stride=1):
        self.name, self.cin, self.cout = name, cin, cout
        self.kernel, self.stride, self.pad = kernel, stride, kernel // 2

    def init(self, rng, dtype):
        std = np.sqrt(2.0 / (self.cin * self.kernel ** 2))
        w = rng.standard_normal((self.cout, self.cin, self.kernel, self.kernel)) * std
        self.weight = Tensor(w.astype(dtype), requires_grad=True)

    def parameters(self):
        yield f"{self.name}.weight", self.weight

    def buffers(self):
        return iter(())

    def __call__(self, x, ctx):
        return conv2d(x, self.weight, self.stride, self.pad, strict=False)

    def describe(self, shape, source, layers, sites):
        c, h, w = shape
        oh = conv_output_size(h, self.kernel, self.stride, self.pad, strict=False)
        ow = conv_output_size(w, self.kernel, self.stride, self.pad, strict=False)
        layers.append(LayerInfo(self.name, "conv", self.cin, self.cout, self.kernel,
                                self.stride, (h, w), (oh, ow), source))
        return (self.cout, oh, ow), None


class BatchNorm:
    def __init__(self, name, channels):
        self.name, self.channels = name, channels

    def init(self, rng, dtype):
        self.weight = Tensor(np.ones(self.channels, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(self.channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(self.channels, dtype=dtype)
        self.running_var = np.ones(self.channels, dtype=dtype)

    def parameters(self):
        yield f"{self.name}.weight", self.weight
        yield f"{self.name}.bias", self.bias

    def buffers(self):
        yield f"{self.name}.running_mean", self.running_mean
        yield f"{self.name}.running_var", self.running_var

    def __call__(self, x, ctx):
        return batchnorm2d(x, self.weight, self.bias, self.running_mean, self.running_var,
                           ctx.training)

    def describe(self, shape, source, layers, sites):
        return shape, None


class GroupedActivation:
    def __init__(self, name, channels, kind, grouped):
        self.name, self.channels, self.kind, self.grouped = name, channels, kind, grouped

    def init(self, rng, dtype):
        pass

    def parameters(self):
        return iter(())

    def buffers(self):
        return iter(())

    def __call__(self, x, ctx):
        base = BASE_ACTIVATIONS[ctx.base]
        ell = ctx.group.group_length(self.channels) if self.grouped else 1
        if ctx.mode == "baseline" or ell == 1:
            out = base(x)
        elif ctx.mode == "anneal":
            frozen = ctx.replay_gates.get(self.name) if ctx.replay_gates is not None else None
            out = sigma_t(x, ctx.group, ctx.t, ctx.base, frozen_gate=frozen)
            if ctx.record_gates is not None:
                ctx.record_gates[self.name] = softmax_gate(base(Tensor(x.data)).data, ell, ctx.t)
        else:
            out = sigma_wta(x, ctx.group, ctx.base, ctx.binary)
        if ctx.trace is not None:
            ctx.trace.append(TraceEntry(self.name, out.data, x.data, ell))
        return out

    def describe(self, shape, source, layers, sites):
        sites.append(SiteInfo(self.name, self.channels, shape[1:], self.kind, self.grouped))
        return shape, (self.name if self.grouped else None)


class Sequential:
    def __init__(self, *layers):
        self.layers = list(layers)

    def init(self, rng, dtype):
        for layer in self.layers:
            layer.init(rng, dtype)

    def parameters(self):
        for layer in self.layers:
            yield from layer.parameters()

    def buffers(self):
        for layer in self.layers:
            yield from layer.buffers()

    def __call__(self, x, ctx):
        for layer in self.layers:
            x = layer(x, ctx)
        return x

    def describe(self, shape, source, layers, sites):
        for layer in self.layers:
            shape, source = layer.describe(shape, source, layers, sites)
        return shape, source


def conv_bn_act(name, cin, cout, stride, grouped, kernel=3):
    return Sequential(Conv(f"{name}.conv", cin, cout, kernel, stride),
                      BatchNorm(f"{name}.bn", cout),
                      GroupedActivation(f"{name}.act", cout, "plain", grouped))


class BasicBlock:
    """Two 3x3 convolutions with an identity or projected shortcut."""

    def __init__(self, name, cin, cout, stride, post_add_grouped):
        self.name = name
        self.conv1 = Conv(f"{name}.conv1", cin, cout, 3, stride)
        self.bn1 = BatchNorm(f"{name}.bn1", cout)
        self.act1 = GroupedActivation(f"{name}.act1", cout, "plain", True)
        self.conv2 = Conv(f"{name}.conv2", cout, cout, 3, 1)
        self.bn2 = BatchNorm(f"{name}.bn2", cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = Sequential(Conv(f"{name}.shortcut.conv", cin, cout, 1, stride),
                                       BatchNorm(f"{name}.shortcut.bn", cout))
        self.act2 = GroupedActivation(f"{name}.act2", cout, "post_add", post_add_grouped)

    def _children(self):
        kids = [self.conv1, self.bn1, self.act1, self.conv2, self.bn2]
        if self.shortcut is not None:
            kids.append(self.shortcut)
        kids.append(self.act2)
        return kids

    def init(self, rng, dtype):
        for k in self._children():
            k.init(rng, dtype)

    def parameters(self):
        for k in self._children():
            yield from k.parameters()

    def buffers(self):
        for k in self._children():
            yield from k.buffers()

    def __call__(self, x, ctx):
        h = self.act1(self.bn1(self.conv1(x, ctx), ctx), ctx)
        h = self.bn2(self.conv2(h, ctx), ctx)
        skip = x if self.shortcut is None else self.shortcut(x, ctx)
        return self.act2(add(h, skip), ctx)

    def describe(self, shape, source, layers, sites):
        h, src = self.conv1.describe(shape, source, layers, sites)
        h, src = self.act1.describe(h, src, layers, sites)
        h, _ = self.conv2.describe(h, src, layers, sites)
        if self.shortcut is not None:
            self.shortcut.describe(shape, source, layers, sites)
        return self.act2.describe(h, None, layers, sites)


class Dense:
    def __init__(self, name, cin, cout):
        self.name, self.cin, self.cout = name, cin, cout

    def init(self, rng, dtype):
        std = np.sqrt(2.0 / self.cin)
        self.weight = Tensor((rng.standard_normal((self.cin, self.cout)) * std).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(self.cout, dtype=dtype), requires_grad=True)

    def parameters(self):
        yield f"{self.name}.weight", self.weight
        yield f"{self.name}.bias", self.bias

    def buffers(self):
        return iter(())

    def __call__(self, x, ctx):
        return linear(x, self.weight, self.bias)

    def describe(self, shape, source, layers, sites):
        layers.append(LayerInfo(self.name, "dense", self.cin, self.cout, 1, 1, (1, 1), (1, 1),
                                source))
        return (self.cout,), None


def _leaves(layer):
    if isinstance(layer, Sequential):
        for child in layer.layers:
            yield from _leaves(child)
    elif isinstance(layer, BasicBlock):
        for child in layer._children():
            yield from _leaves(child)
    else:
        yield layer


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------
def _build_body(config: ModelConfig) -> tuple[Sequential, int]:
    post_add = config.replace_policy == "all"
    cin = config.input_shape[0]
    if config.architecture == "toy":
        widths = [int(w) for w in config.widths]
        layers = [conv_bn_act("stem", cin, widths[0], config.stem_stride, True)]
        prev = widths[0]
        for i, w in enumerate(widths):
            if i > 0:
                layers.append(conv_bn_act(f"stage{i}.down", prev, w, 2, True))
            for b in range(config.blocks):
                layers.append(BasicBlock(f"stage{i}.block{b}", w, w, 1, post_add))
            prev = w
        return Sequential(*layers), prev

    b = config.base_width
    widths = [b, 2 * b, 4 * b, 8 * b]
    layers = [conv_bn_act("stem", cin, b, 1, True)]
    prev = b
    for i, w in enumerate(widths):
        for j in range(2):
            stride = 2 if (i > 0 and j == 0) else 1
            layers.append(BasicBlock(f"layer{i + 1}.{j}", prev, w, stride, post_add))
            prev = w
    return Sequential(*layers), prev


class Model:
    """A built network: ordered named parameters, buffers and topology."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config.validate()
        self.dtype = np.dtype(dtype).type
        self.body, width = _build_body(config)
        self.head = Dense("fc", width, config.n_classes)
        self.feature_dim = width
        self.schedule: TemperatureSchedule | None = None
        self.temperature: float | None = config.t_init if config.mode == "anneal" else None
        c = config.input_shape[0]
        self.input_mean = np.zeros(c, dtype=self.dtype)
        self.input_std = np.full(c, 255.0, dtype=self.dtype)
        self.layers, self.sites = self._describe()
        if config.mode != "baseline":
            for site in self.sites:
                if site.grouped:
                    config.group.group_length(site.channels)

    def _describe(self):
        layers, sites = [], []
        shape, src = self.body.describe(tuple(self.config.input_shape), None, layers, sites)
        self.head.describe((shape[0],), None, layers, sites)
        return layers, sites

    def init(self, seed):
        rng = np.random.default_rng(seed)
        self.body.init(rng, self.dtype)
        self.head.init(rng, self.dtype)
        return self

    # -- state ---------------------------------------------------------------
    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield from self.body.parameters()
        yield from self.head.parameters()

    def parameters(self) -> dict:
        return dict(self.named_parameters())

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "input.mean", self.input_mean
        yield "input.std", self.input_std
        yield from self.body.buffers()

    def bind_parameters(self, tensors: dict):
        """Replace parameter tensors by the given objects (same names and shapes).

        Used to differentiate the network with respect to externally owned
        tensors, e.g. in gradient checks.
        """
        slots = {}
        for layer in list(_leaves(self.body)) + [self.head]:
            for attr in ("weight", "bias"):
                if hasattr(layer, attr):
                    slots[f"{layer.name}.{attr}"] = (layer, attr)
        for name, t in tensors.items():
            if name not in slots:
                raise KeyError(f"unknown parameter {name!r}")
            layer, attr = slots[name]
            if getattr(layer, attr).shape != t.shape:
                raise ValueError(f"shape mismatch for {name}")
            setattr(layer, attr, t)
        return self

    def n_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def set_schedule(self, schedule: TemperatureSchedule):
        self.schedule = schedule
        self.temperature = schedule.t_init

    # -- forward ---------------------------------------------------------------
    def prepare(self, images) -> Tensor:
        """Convert 8-bit NCHW images to normalized float input."""
        x = np.asarray(images, dtype=self.dtype)
        x = (x - self.input_mean[None, :, None, None]) / self.input_std[None, :, None, None]
        return Tensor(x.astype(self.dtype))

    def _temperature(self, step, temperature):
        if temperature is not None:
            return float(temperature)
        if step is not None:
            if self.schedule is None:
                raise ValueError("no temperature schedule set; call set_schedule first")
            return temperature_at(self.schedule, step)
        if self.temperature is None:
            return float(self.config.t_init)
        return float(self.temperature)

    def forward(self, x, mode=None, step=None, temperature=None, training=False, trace=None,
                features=False, record_gates=None, replay_gates=None) -> Tensor:
        """Logits (or pooled features) for a normalized float batch."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        expected = tuple(self.config.input_shape)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ValueError(f"batch shape {x.shape} does not match input shape {expected}")
        mode = mode or self.config.mode
        if mode not in MODES:
            raise ValueError(f"unknown activation mode {mode!r}")
        ctx = _Ctx(mode, self.config.group, self.config.base_activation, training,
                   self._temperature(step, temperature) if mode == "anneal" else None,
                   self.config.binary, trace, record_gates, replay_gates)
        h = avgpool_global(self.body(x, ctx))
        if features:
            return h
        return self.head(h, ctx)

    __call__ = forward

    def logits(self, images, mode=None, batch_size=500, temperature=None) -> np.ndarray:
        """Inference over 8-bit images in batches, returns an array."""
        out = []
        with no_grad():
            for i in range(0, len(images), batch_size):
                x = self.prepare(images[i:i + batch_size])
                out.append(self.forward(x, mode=mode, temperature=temperature).data)
        return np.concatenate(out) if out else np.zeros((0, self.config.n_classes), self.dtype)

    def activation_trace(self, images, mode=None, temperature=None) -> list:
        """Post-activation tensors of every activation site for one batch."""
        mode = mode or ("wta" if self.config.mode == "baseline" else self.config.mode)
        trace = []
        with no_grad():
            self.forward(self.prepare(images), mode=mode, temperature=temperature, trace=trace)
        return trace

    # -- checkpoints ------------------------------------------------------------
    def state(self) -> dict:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def save(self, path):
        save_checkpoint(path, self.state())

    def load(self, path):
        state = load_checkpoint(path)
        self.load_state(state)
        return self

    def load_state(self, state: dict):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        if missing:
            raise ValueError(f"checkpoint is missing tensors: {sorted(missing)[:5]}")
        for name, arr in state.items():
            target = own[name].data if name in own else bufs.get(name)
            if target is None:
                raise ValueError(f"unexpected tensor {name!r} in checkpoint")
            if target.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {target.shape}")
            target[...] = arr


def build(config: ModelConfig, seed=0, dtype=np.float32) -> Model:
    """Build and initialize a model deterministically from ``seed``."""
    return Model(config, dtype).init(seed)


def with_mode(config: ModelConfig, **changes) -> ModelConfig:
    return replace(config, **changes)


# ---------------------------------------------------------------------------
# "DNWT" checkpoint format
# ---------------------------------------------------------------------------
DNWT_MAGIC = b"DNWT"
DNWT_VERSION = 1


def save_checkpoint(path, tensors: dict):
    """Write named tensors as little-endian float32."""
    with open(path, "wb") as fh:
        fh.write(DNWT_MAGIC)
        fh.write(struct.pack("<BI", DNWT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != DNWT_MAGIC:
        raise ValueError(f"{path}: not a DNWT checkpoint")
    version, count = struct.unpack_from("<BI", blob, 4)
    if version != DNWT_VERSION:
        raise ValueError(f"{path}: unsupported DNWT version {version}")
    pos = 9
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(blob):
                raise ValueError("truncated")
            out[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(dims).copy()
            pos += 4 * size
    except (struct.error, ValueError) as exc:
        raise ValueError(f"{path}: truncated or corrupt DNWT checkpoint") from exc
    return out
