"""Decoder architectures: linear convolution, ResNet and the WaveNet-style regressor.

All three map an ``N x 64 x T`` envelope batch to an ``N x 32 x T``
spectrogram batch with causal convolutions, so output frame ``t`` depends on
input frames ``t - receptive_field + 1 .. t`` only.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ShapeError
from .tensor import DTYPE, Tensor

VARIANTS = ("linear", "resnet", "wavenet")


@dataclass
class ModelConfig:
    variant: str = "wavenet"
    in_channels: int = 64
    out_channels: int = 32
    # linear baseline
    linear_filter: int = 124
    # resnet baseline
    resnet_blocks: int = 8
    resnet_filter: int = 4
    resnet_features: int = 32
    # wavenet
    initial_filter: int = 32
    initial_features: int = 16
    dilated_filter: int = 2
    dilated_features: int = 32
    residual_filter: int = 1
    residual_features: int = 16
    skip_filter: int = 1
    skip_features: int = 32
    post_features: int = 32
    dilations: list = field(default_factory=lambda: [1, 2, 4, 8, 16, 1, 2, 4, 8, 16])
    wavenet_blocks: int = 10
    # shared
    dropout: float = 0.2
    batchnorm: bool = True
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    init: Optional[str] = None  # "he" or "zeros"; None picks zeros for linear, he otherwise

    def __post_init__(self):
        self.dilations = [int(d) for d in self.dilations]
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        lengths = {n: getattr(self, n) for n in ("linear_filter", "resnet_filter", "initial_filter",
                                                  "dilated_filter", "residual_filter", "skip_filter")}
        counts = {n: getattr(self, n) for n in ("in_channels", "out_channels", "resnet_blocks",
                                                 "resnet_features", "initial_features",
                                                 "dilated_features", "residual_features",
                                                 "skip_features", "post_features")}
        for name, v in {**lengths, **counts}.items():
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        if any(d < 1 for d in self.dilations):
            raise ConfigurationError(f"dilations must be positive, got {self.dilations}")
        if self.variant == "wavenet" and len(self.dilations) != self.wavenet_blocks:
            raise ConfigurationError(
                f"{len(self.dilations)} dilations for {self.wavenet_blocks} residual blocks")
        if not 0 <= self.dropout < 1:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.init not in (None, "he", "zeros"):
            raise ConfigurationError(f"unknown init {self.init!r}")

    @property
    def init_scheme(self) -> str:
        return self.init or ("zeros" if self.variant == "linear" else "he")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


# -- layers ------------------------------------------------------------------

class Module:
    training = True

    def children(self):
        for name, v in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(v, Module):
                yield name, v
            elif isinstance(v, list) and v and isinstance(v[0], Module):
                for i, m in enumerate(v):
                    yield f"{name}.{i}", m

    def own_parameters(self):
        return []

    def own_buffers(self):
        return []

    def parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out = OrderedDict((prefix + n, p) for n, p in self.own_parameters())
        for name, child in self.children():
            out.update(child.parameters(f"{prefix}{name}."))
        return out

    def buffers(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((prefix + n, b) for n, b in self.own_buffers())
        for name, child in self.children():
            out.update(child.buffers(f"{prefix}{name}."))
        return out

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)


class Conv1d(Module):
    def __init__(self, c_in, c_out, k, dilation=1, rng=None, init="he"):
        self.dilation = dilation
        shape = (c_out, c_in, k)
        if init == "zeros":
            w = np.zeros(shape, dtype=DTYPE)
        else:
            # uniform with variance 2 / fan_in
            bound = np.sqrt(3.0) * np.sqrt(2.0 / (c_in * k))
            w = rng.uniform(-bound, bound, size=shape).astype(DTYPE)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=DTYPE), requires_grad=True)

    def own_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def __call__(self, x):
        return T.conv1d(x, self.weight, self.bias, self.dilation)


class BatchNorm1d(Module):
    def __init__(self, c, momentum=0.9, eps=1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(c, dtype=DTYPE), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=DTYPE), requires_grad=True)
        self.running_mean = np.zeros(c, dtype=DTYPE)
        self.running_var = np.ones(c, dtype=DTYPE)

    def own_parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def own_buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def __call__(self, x):
        return T.batchnorm1d(x, self.running_mean, self.running_var, self.gamma, self.beta,
                             self.training, self.momentum, self.eps)


class Identity(Module):
    def __call__(self, x):
        return x


class Dropout(Module):
    def __init__(self, rate, owner):
        self.rate = rate
        self._owner = owner  # the model holding the dropout generator

    def __call__(self, x):
        return T.dropout(x, self.rate, self.training, self._owner.dropout_rng)


# -- models ------------------------------------------------------------------

class Decoder(Module):
    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        self.seed = seed
        self.dropout_rng = np.random.default_rng([seed, 1])

    def reseed_dropout(self, seed):
        self.dropout_rng = np.random.default_rng(seed)

    def _norm(self, c):
        cfg = self.config
        return BatchNorm1d(c, cfg.bn_momentum, cfg.bn_eps) if cfg.batchnorm else Identity()

    def __call__(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim not in (2, 3) or x.shape[-2] != self.config.in_channels:
            raise ShapeError(
                f"expected {self.config.in_channels} input channels, got input shape {x.shape}")
        squeeze = x.ndim == 2
        if squeeze:
            x = Tensor(x.data[None], requires_grad=x.requires_grad)
        y = self.forward(x)
        if squeeze:
            y = Tensor(y.data[0])
        return y

    def forward(self, x):
        raise NotImplementedError

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((n, p.data.copy()) for n, p in self.parameters().items())
        out.update((n, b.copy()) for n, b in self.buffers().items())
        return out

    def load_state_dict(self, state: dict):
        targets = OrderedDict((n, p.data) for n, p in self.parameters().items())
        targets.update(self.buffers())
        for name, arr in targets.items():
            if name not in state:
                raise KeyError(f"missing tensor {name!r}")
            src = np.asarray(state[name], dtype=DTYPE)
            if src.shape != arr.shape:
                raise ShapeError(f"tensor {name!r} has shape {src.shape}, expected {arr.shape}")
            arr[...] = src


class LinearDecoder(Decoder):
    """A single causal convolution without activation."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__(config, seed)
        rng = np.random.default_rng(seed)
        self.conv = Conv1d(config.in_channels, config.out_channels, config.linear_filter,
                           rng=rng, init=config.init_scheme)

    def forward(self, x):
        return self.conv(x)


class ResBlock(Module):
    def __init__(self, model: Decoder, rng):
        cfg = model.config
        c, k = cfg.resnet_features, cfg.resnet_filter
        self.conv1 = Conv1d(c, c, k, rng=rng, init=cfg.init_scheme)
        self.norm1 = model._norm(c)
        self.drop = Dropout(cfg.dropout, model)
        self.conv2 = Conv1d(c, c, k, rng=rng, init=cfg.init_scheme)
        self.norm2 = model._norm(c)

    def __call__(self, x):
        h = self.drop(T.relu(self.norm1(self.conv1(x))))
        h = self.norm2(self.conv2(h))
        return T.relu(T.add(x, h))


class ResNetDecoder(Decoder):
    """1x1 projection, residual blocks of two causal convolutions, 1x1 head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__(config, seed)
        rng = np.random.default_rng(seed)
        c = config.resnet_features
        self.proj = Conv1d(config.in_channels, c, 1, rng=rng, init=config.init_scheme)
        self.proj_norm = self._norm(c)
        self.blocks = [ResBlock(self, rng) for _ in range(config.resnet_blocks)]
        self.head = Conv1d(c, config.out_channels, 1, rng=rng, init=config.init_scheme)

    def forward(self, x):
        h = T.relu(self.proj_norm(self.proj(x)))
        for blk in self.blocks:
            h = blk(h)
        return self.head(h)


class GatedBlock(Module):
    """Gated dilated unit feeding a residual 1x1 conv and a skip 1x1 conv."""

    def __init__(self, model: Decoder, dilation: int, rng, residual: bool = True):
        cfg = model.config
        r, d = cfg.residual_features, cfg.dilated_features
        init = cfg.init_scheme
        self.filter = Conv1d(r, d, cfg.dilated_filter, dilation, rng=rng, init=init)
        self.gate = Conv1d(r, d, cfg.dilated_filter, dilation, rng=rng, init=init)
        self.filter_norm = model._norm(d)
        self.gate_norm = model._norm(d)
        self.drop = Dropout(cfg.dropout, model)
        # the last block's residual output would feed nothing, so it has no residual conv
        self.residual = Conv1d(d, r, cfg.residual_filter, rng=rng, init=init) if residual else None
        self.skip = Conv1d(d, cfg.skip_features, cfg.skip_filter, rng=rng, init=init)
        self.use_norm = cfg.batchnorm

    def __call__(self, x):
        if self.use_norm:
            f = self.filter_norm(self.filter(x))
            g = self.gate_norm(self.gate(x))
            z = T.mul(T.tanh(f), T.sigmoid(g))
        else:
            z = T.gated_unit(x, self.filter.weight, self.gate.weight, self.filter.dilation,
                             self.filter.bias, self.gate.bias)
        z = self.drop(z)
        h = T.add(x, self.residual(z)) if self.residual is not None else None
        return h, self.skip(z)


class WaveNetDecoder(Decoder):
    """Initial conv, stacked gated residual blocks, summed skips, post-processing head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__(config, seed)
        rng = np.random.default_rng(seed)
        init = config.init_scheme
        self.initial = Conv1d(config.in_channels, config.initial_features, config.initial_filter,
                              rng=rng, init=init)
        self.initial_norm = self._norm(config.initial_features)
        self.initial_drop = Dropout(config.dropout, self)
        if config.initial_features != config.residual_features:
            raise ConfigurationError("initial conv features must equal residual features")
        last = len(config.dilations) - 1
        self.blocks = [GatedBlock(self, d, rng, residual=i < last)
                       for i, d in enumerate(config.dilations)]
        self.post = Conv1d(config.skip_features, config.post_features, 1, rng=rng, init=init)
        self.post_norm = self._norm(config.post_features)
        self.post_drop = Dropout(config.dropout, self)
        self.out = Conv1d(config.post_features, config.out_channels, 1, rng=rng, init=init)

    def forward(self, x):
        h = self.initial_drop(self.initial_norm(self.initial(x)))
        skips = None
        for blk in self.blocks:
            h, s = blk(h)
            skips = s if skips is None else T.add(skips, s)
        y = T.relu(skips)
        y = self.post_drop(T.relu(self.post_norm(self.post(y))))
        return self.out(y)


_BUILDERS = {"linear": LinearDecoder, "resnet": ResNetDecoder, "wavenet": WaveNetDecoder}


def build_model(config: ModelConfig, seed: int = 0) -> Decoder:
    config.validate()
    return _BUILDERS[config.variant](config, seed)


def receptive_field(config: ModelConfig) -> int:
    """Input frames that influence one output frame, along the longest serial path."""
    config.validate()
    if config.variant == "linear":
        return config.linear_filter
    if config.variant == "resnet":
        return 1 + 2 * config.resnet_blocks * (config.resnet_filter - 1)
    rf = 1 + (config.initial_filter - 1)
    rf += sum((config.dilated_filter - 1) * d for d in config.dilations)
    rf += (len(config.dilations) - 1) * (config.residual_filter - 1)
    rf += config.skip_filter - 1
    return rf


def count_params(config: ModelConfig) -> int:
    """Closed-form count of trainable weights, biases and batch-norm affine terms."""
    config.validate()

    def conv(ci, co, k):
        return ci * co * k + co

    bn = (lambda c: 2 * c) if config.batchnorm else (lambda c: 0)
    if config.variant == "linear":
        return conv(config.in_channels, config.out_channels, config.linear_filter)
    if config.variant == "resnet":
        c, k = config.resnet_features, config.resnet_filter
        block = 2 * conv(c, c, k) + 2 * bn(c)
        return (conv(config.in_channels, c, 1) + bn(c) + config.resnet_blocks * block
                + conv(c, config.out_channels, 1))
    r, d = config.residual_features, config.dilated_features
    n = len(config.dilations)
    block = (2 * conv(r, d, config.dilated_filter) + 2 * bn(d)
             + conv(d, config.skip_features, config.skip_filter))
    return (conv(config.in_channels, config.initial_features, config.initial_filter)
            + bn(config.initial_features) + n * block + (n - 1) * conv(d, r, config.residual_filter)
            + conv(config.skip_features, config.post_features, 1) + bn(config.post_features)
            + conv(config.post_features, config.out_channels, 1))


def enumerate_params(model: Decoder) -> int:
    return int(sum(p.size for p in model.parameters().values()))


def layer_table(model: Decoder) -> list:
    """``(name, shape, count)`` rows for every trainable tensor."""
    return [(n, tuple(p.shape), p.size) for n, p in model.parameters().items()]


def empirical_receptive_field(model: Decoder, frames: Optional[int] = None) -> int:
    """Support of d(last output frame)/d(input), measured through the tape.

    Runs in eval mode with every weight set to ``1 / fan_in`` so no path
    cancels or saturates, then restores the weights.
    """
    cfg = model.config
    frames = frames or receptive_field(cfg) + 20
    saved = model.state_dict()
    was_training = model.training
    model.eval()
    try:
        for name, p in model.parameters().items():
            if name.endswith("weight"):
                p.data[...] = 1.0 / (p.shape[1] * p.shape[2])
            elif name.endswith("gamma"):
                p.data[...] = 1.0
            else:
                p.data[...] = 0.0
        x = Tensor(np.full((1, cfg.in_channels, frames), 0.1, dtype=DTYPE), requires_grad=True)
        y = model(x)
        g = np.zeros_like(y.data)
        g[:, :, -1] = 1.0
        y.backward(g)
        touched = np.flatnonzero(np.abs(x.grad[0]).sum(axis=0) > 0)
        return int(frames - touched.min()) if touched.size else 0
    finally:
        model.load_state_dict(saved)
        model.train(was_training)
