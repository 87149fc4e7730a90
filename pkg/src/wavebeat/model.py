"""Strided, dilated residual TCN mapping waveforms to beat/downbeat activations."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from . import nn
from .kvfile import read_kv, write_kv


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 1
    output_channels: int = 2
    n_stacks: int = 2
    blocks_per_stack: int = 4
    kernel_size: int = 15
    stride: int = 2
    dilation_base: int = 8
    channel_growth: int = 32
    sample_rate: float = 22050.0

    def __post_init__(self):
        for name in ("input_channels", "output_channels", "n_stacks", "blocks_per_stack",
                     "kernel_size", "stride", "dilation_base", "channel_growth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd so that centred padding is integral")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    @property
    def n_layers(self) -> int:
        return self.n_stacks * self.blocks_per_stack

    @property
    def dilations(self) -> list[int]:
        return [self.dilation_base ** (l % self.blocks_per_stack) for l in range(self.n_layers)]

    @property
    def channels(self) -> list[int]:
        return [self.channel_growth * (l + 1) for l in range(self.n_layers)]

    @property
    def total_stride(self) -> int:
        return self.stride ** self.n_layers

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.total_stride

    def save(self, path) -> None:
        write_kv(path, dataclasses.asdict(self))

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return from_mapping(cls, read_kv(path))


def from_mapping(cls, mapping: dict):
    """Build a dataclass from string key/values, coercing to the field types."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in mapping.items():
        if key not in fields:
            raise ValueError(f"unknown {cls.__name__} field {key!r}")
        default = fields[key].default
        kind = type(default) if default is not dataclasses.MISSING else str
        if kind is bool:
            kwargs[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
        elif default is None:
            kwargs[key] = None if str(raw).strip().lower() in ("", "none") else int(raw)
        else:
            kwargs[key] = kind(raw) if not isinstance(raw, kind) else raw
    return cls(**kwargs)


PAPER_CONFIG = ModelConfig()
# Same four-block dilation pattern in one stack; stride 4 keeps the 256x
# downsampling, so targets stay at ~86 Hz.
DESK_CONFIG = ModelConfig(n_stacks=1, blocks_per_stack=4, stride=4, channel_growth=16)


def receptive_field(config: ModelConfig) -> tuple[int, float]:
    """Input span (samples, seconds) that influences one output frame."""
    rf = 1
    jump = 1
    for d in config.dilations:
        rf += (config.kernel_size - 1) * d * jump
        jump *= config.stride
    return rf, rf / config.sample_rate


class WaveBeatModel:
    """Residual blocks of conv -> batchnorm -> PReLU with a strided 1x1 skip,
    followed by a 1x1 head and a sigmoid.

    Backward passes are chained by hand through the fixed topology; call
    :meth:`forward` in training mode before :meth:`backward`.
    """

    def __init__(self, config: ModelConfig, params: dict[str, nn.Parameter]):
        self.config = config
        self.params = params
        self.training = True
        self._caches = None

    # -- parameter handling
    def parameters(self, trainable_only=False) -> list[nn.Parameter]:
        return [p for p in self.params.values() if p.trainable or not trainable_only]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        self._caches = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise nn.CheckpointError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in self.params.items():
            if state[name].shape != p.value.shape:
                raise nn.CheckpointError(f"{name}: shape {state[name].shape} != {p.value.shape}")
            p.value[...] = state[name]

    def _p(self, name):
        return self.params[name].value

    # -- computation
    def forward(self, x: np.ndarray) -> np.ndarray:
        """``x`` is (batch, 1, T) with T a multiple of the total stride."""
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != cfg.input_channels:
            raise ValueError(f"expected input of shape (B, {cfg.input_channels}, T), got {x.shape}")
        if x.shape[2] == 0:
            raise ValueError("empty input")
        if x.shape[2] % cfg.total_stride:
            raise ValueError(f"input length {x.shape[2]} is not a multiple of {cfg.total_stride}")

        dtype = self._p("head.weight").dtype
        h = x.astype(dtype, copy=False)
        caches = []
        for l, dilation in enumerate(cfg.dilations):
            pre = f"blocks.{l}."
            pad = dilation * (cfg.kernel_size - 1) // 2
            y, c_conv = nn.conv1d_forward(h, self._p(pre + "conv.weight"), None,
                                          stride=cfg.stride, dilation=dilation, padding=pad)
            y, c_bn = nn.batchnorm1d_forward(
                y, self._p(pre + "bn.gamma"), self._p(pre + "bn.beta"),
                self._p(pre + "bn.running_mean"), self._p(pre + "bn.running_var"),
                training=self.training)
            y, c_act = nn.prelu_forward(y, self._p(pre + "prelu.alpha"))
            s, c_skip = nn.conv1d_forward(h, self._p(pre + "skip.weight"), self._p(pre + "skip.bias"),
                                          stride=cfg.stride)
            h = y + s
            caches.append((c_conv, c_bn, c_act, c_skip))
        logits, c_head = nn.conv1d_forward(h, self._p("head.weight"), self._p("head.bias"))
        out, c_sig = nn.sigmoid_forward(logits)
        if self.training:
            self._caches = (caches, c_head, c_sig)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns the gradient w.r.t. the input."""
        if self._caches is None:
            raise RuntimeError("backward() needs a preceding training-mode forward()")
        caches, c_head, c_sig = self._caches
        g = nn.sigmoid_backward(grad_out, c_sig)
        g, gw, gb = nn.conv1d_backward(g, c_head)
        self.params["head.weight"].grad += gw
        self.params["head.bias"].grad += gb
        for l in reversed(range(len(caches))):
            pre = f"blocks.{l}."
            c_conv, c_bn, c_act, c_skip = caches[l]
            g_skip, gw, gb = nn.conv1d_backward(g, c_skip)
            self.params[pre + "skip.weight"].grad += gw
            self.params[pre + "skip.bias"].grad += gb
            gy, ga = nn.prelu_backward(g, c_act)
            self.params[pre + "prelu.alpha"].grad += ga
            gy, gg, gbeta = nn.batchnorm1d_backward(gy, c_bn)
            self.params[pre + "bn.gamma"].grad += gg
            self.params[pre + "bn.beta"].grad += gbeta
            gy, gw, _ = nn.conv1d_backward(gy, c_conv)
            self.params[pre + "conv.weight"].grad += gw
            g = gy + g_skip
        self._caches = None
        return g

    __call__ = forward


def build(config: ModelConfig = PAPER_CONFIG, init_seed: int = 0, dtype=np.float32) -> WaveBeatModel:
    """Deterministically initialised model.

    Conv weights are Kaiming-uniform over fan-in with bound ``1/sqrt(fan_in)``;
    biases and batchnorm shifts start at zero, scales and running variances at
    one, PReLU slopes at 0.25.
    """
    rng = np.random.default_rng(init_seed)
    params: dict[str, nn.Parameter] = {}

    def add(name, value, trainable=True):
        params[name] = nn.Parameter(name, np.asarray(value, dtype=dtype), trainable=trainable)

    def conv(name, c_out, c_in, k, bias=True):
        bound = 1.0 / np.sqrt(c_in * k)
        add(name + ".weight", rng.uniform(-bound, bound, size=(c_out, c_in, k)))
        if bias:
            add(name + ".bias", np.zeros(c_out))

    c_in = config.input_channels
    for l, c_out in enumerate(config.channels):
        pre = f"blocks.{l}."
        # batchnorm cancels any bias on the main conv
        conv(pre + "conv", c_out, c_in, config.kernel_size, bias=False)
        add(pre + "bn.gamma", np.ones(c_out))
        add(pre + "bn.beta", np.zeros(c_out))
        add(pre + "bn.running_mean", np.zeros(c_out), trainable=False)
        add(pre + "bn.running_var", np.ones(c_out), trainable=False)
        add(pre + "prelu.alpha", np.full(c_out, 0.25))
        conv(pre + "skip", c_out, c_in, 1)
        c_in = c_out
    conv("head", config.output_channels, c_in, 1)
    return WaveBeatModel(config, params)


def param_count(model: WaveBeatModel) -> int:
    return sum(p.size for p in model.parameters(trainable_only=True))


def layer_table(config: ModelConfig) -> list[dict]:
    rows = []
    c_in = config.input_channels
    rate = config.sample_rate
    for l, (c_out, d) in enumerate(zip(config.channels, config.dilations)):
        rate /= config.stride
        rows.append(dict(layer=l + 1, in_channels=c_in, out_channels=c_out, kernel=config.kernel_size,
                         dilation=d, stride=config.stride, output_rate=rate))
        c_in = c_out
    return rows


# -- inference -----------------------------------------------------------------

MAX_CHUNK = 1 << 21


def infer(model: WaveBeatModel, samples: np.ndarray, max_chunk: int = MAX_CHUNK) -> np.ndarray:
    """Activations (2, n_frames) for a full mono signal in eval mode.

    The signal is zero-padded to a multiple of the total stride. Signals longer
    than ``max_chunk`` are processed in overlapping chunks whose central
    regions are stitched together.
    """
    was_training = model.training
    model.eval()
    try:
        stride = model.config.total_stride
        n = len(samples)
        n_frames = -(-n // stride)
        padded = np.zeros(max(n_frames, 1) * stride, dtype=np.float64)
        padded[:n] = samples
        n_frames = len(padded) // stride
        chunk_frames = max(max_chunk // stride, 1)
        if n_frames <= chunk_frames:
            return model.forward(padded[None, None, :])[0]

        rf, _ = receptive_field(model.config)
        margin = min(-(-rf // 2 // stride), chunk_frames // 4)
        hop = chunk_frames - 2 * margin
        out = np.zeros((model.config.output_channels, n_frames), dtype=np.float32)
        start = 0
        while True:
            lo = max(start - margin, 0)
            hi = min(lo + chunk_frames, n_frames)
            lo = max(hi - chunk_frames, 0)
            act = model.forward(padded[None, None, lo * stride:hi * stride])[0]
            stop = min(start + hop, n_frames)
            out[:, start:stop] = act[:, start - lo:stop - lo]
            if stop >= n_frames:
                break
            start = stop
        return out
    finally:
        if was_training:
            model.train()


def save_model(path, model: WaveBeatModel) -> None:
    """Parameters in the binary checkpoint format plus a ``.cfg`` key-value sidecar."""
    nn.save_parameters(path, model.state_dict())
    model.config.save(config_path(path))


def config_path(path) -> str:
    return os.fspath(path) + ".cfg"


def load_model(path) -> WaveBeatModel:
    config = ModelConfig.load(config_path(path))
    model = build(config)
    model.load_state_dict(nn.load_parameters(path))
    return model
