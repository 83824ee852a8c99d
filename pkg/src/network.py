"""
DPN and DPN-SE classifiers built from configuration.

Stem (7x7 conv + max pool), four stages of dual-path substages with optional
squeeze-excitation recalibration after every substage, and a pooled dense head.
"""
import json
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np

from .augment import Image
from .exceptions import ConfigError, DimensionError, InputError
from .models import DpnSeConfig
from .serialization import load_tensors, save_tensors
from .tensor import (
    Tensor,
    add,
    batch_norm,
    concat_channels,
    conv2d,
    dense,
    global_avg_pool,
    maxpool2d,
    no_grad,
    relu,
    scale_channels,
    sigmoid,
    slice_channels,
    softmax,
)

logger = logging.getLogger(__name__)


def _load_presets() -> Dict:
    data_path = os.path.join(os.path.dirname(__file__), "data", "presets.json")
    try:
        with open(data_path, "r") as f:
            return json.load(f)
    except FileNotFoundError:
        raise FileNotFoundError(f"Network presets file not found at {data_path}")


def preset_names() -> List[str]:
    return sorted(_load_presets()["presets"])


def load_preset(name: str) -> DpnSeConfig:
    """Config for a named layout in data/presets.json."""
    presets = _load_presets()["presets"]
    if name not in presets:
        raise ConfigError(f"unknown model preset {name!r}; available: {sorted(presets)}")
    return DpnSeConfig.model_validate(presets[name])


class Module:
    """Container of named parameters, buffers and child modules."""

    def __init__(self) -> None:
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def add_param(self, name: str, data: np.ndarray) -> Tensor:
        tensor = Tensor(data, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def add_buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        self._buffers[name] = np.array(data, dtype=np.float64)
        return self._buffers[name]

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self._params.items():
            yield prefix + name, tensor
        for child_name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, array in self._buffers.items():
            yield prefix + name, array
        for child_name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{child_name}.")

    def parameters(self) -> List[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(tensor.size for tensor in self.parameters())


def _fan_in_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, gain: float) -> np.ndarray:
    bound = gain / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ConvBn(Module):
    """Convolution followed, when enabled, by batch normalization."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, pad: int = 0, batch_norm: bool = True, eps: float = 1e-5,
                 momentum: float = 0.1):
        super().__init__()
        self.stride = stride
        self.pad = pad
        self.eps = eps
        self.momentum = momentum
        fan_in = in_channels * kernel * kernel
        self.weight = self.add_param(
            "weight", _fan_in_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in, np.sqrt(6.0))
        )
        self.use_bn = batch_norm
        if batch_norm:
            self.gamma = self.add_param("gamma", np.ones(out_channels))
            self.beta = self.add_param("beta", np.zeros(out_channels))
            self.running_mean = self.add_buffer("running_mean", np.zeros(out_channels))
            self.running_var = self.add_buffer("running_var", np.ones(out_channels))

    def forward(self, x: Tensor, training: bool) -> Tensor:
        out = conv2d(x, self.weight, stride=self.stride, pad=self.pad)
        if not self.use_bn:
            return out
        return batch_norm(out, self.gamma, self.beta, eps=self.eps, running_mean=self.running_mean,
                          running_var=self.running_var, training=training, momentum=self.momentum)


@dataclass
class SeParams:
    """Squeeze-excitation weights: C -> C/r (ReLU) -> C (sigmoid)."""
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def channels(self) -> int:
        return self.w1.shape[0]


def se_block(x: Tensor, p: SeParams) -> Tensor:
    """Squeeze (global pool), excite (two-layer gate), reweight each channel."""
    if x.data.ndim != 4 or x.shape[1] != p.channels:
        raise DimensionError(f"se_block: input {x.shape} does not match {p.channels} SE channels")
    squeezed = global_avg_pool(x)
    hidden = relu(dense(squeezed, p.w1, p.b1))
    gate = sigmoid(dense(hidden, p.w2, p.b2))
    return scale_channels(x, gate)


def se_hidden_width(channels: int, reduction: int) -> int:
    if channels < 1 or reduction < 1:
        raise ConfigError(f"SE needs channels >= 1 and reduction >= 1, got {channels}/{reduction}")
    return max(1, channels // reduction)


class SqueezeExcitation(Module):
    """Channel attention attached to a substage output."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        hidden = se_hidden_width(channels, reduction)
        self.params = SeParams(
            w1=self.add_param("w1", _fan_in_uniform(rng, (channels, hidden), channels, 1.0)),
            b1=self.add_param("b1", np.zeros(hidden)),
            w2=self.add_param("w2", _fan_in_uniform(rng, (hidden, channels), hidden, 1.0)),
            b2=self.add_param("b2", np.zeros(channels)),
        )

    def forward(self, x: Tensor) -> Tensor:
        return se_block(x, self.params)


class DualPathSubstage(Module):
    """Bottleneck block feeding both a residual (added) and a dense (concatenated) path.

    Input layout is [residual C_r | dense C_d]. With ``project`` set the identity path
    is a strided 1x1 projection to C_r channels and the dense path restarts empty.
    """

    def __init__(self, in_channels: int, residual_width: int, dense_in: int, dense_increment: int,
                 bottleneck_width: int, rng: np.random.Generator, stride: int = 1,
                 project: bool = False, batch_norm: bool = True, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        if not project and in_channels != residual_width + dense_in:
            raise ConfigError(
                f"channel accounting mismatch: {in_channels} inputs != C_r {residual_width} + C_d {dense_in}"
            )
        if not project and stride != 1:
            raise ConfigError("a downsampling substage needs a projection on the identity path")
        self.in_channels = in_channels
        self.residual_width = residual_width
        self.dense_in = 0 if project else dense_in
        self.dense_increment = dense_increment
        self.out_channels = residual_width + self.dense_in + dense_increment
        bn = dict(batch_norm=batch_norm, eps=eps, momentum=momentum)
        self.project = project
        if project:
            self.proj = self.add_child("proj", ConvBn(in_channels, residual_width, 1, rng, stride=stride, **bn))
        self.conv1 = self.add_child("conv1", ConvBn(in_channels, bottleneck_width, 1, rng, **bn))
        self.conv2 = self.add_child("conv2", ConvBn(bottleneck_width, bottleneck_width, 3, rng, stride=stride, pad=1, **bn))
        self.conv3 = self.add_child("conv3", ConvBn(bottleneck_width, residual_width + dense_increment, 1, rng, **bn))

    def forward(self, x: Tensor, training: bool = True) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ConfigError(f"substage expects {self.in_channels} channels, got {x.shape[1]}")
        c_r = self.residual_width
        if self.project:
            residual = self.proj.forward(x, training)
            dense_path = None
        else:
            residual = slice_channels(x, 0, c_r)
            dense_path = slice_channels(x, c_r, self.in_channels)
        branch = relu(self.conv1.forward(x, training))
        branch = relu(self.conv2.forward(branch, training))
        branch = self.conv3.forward(branch, training)
        summed = add(residual, slice_channels(branch, 0, c_r))
        fresh = slice_channels(branch, c_r, c_r + self.dense_increment)
        grown = fresh if dense_path is None else concat_channels(dense_path, fresh)
        return concat_channels(summed, grown)


def dual_path_substage(x: Tensor, substage: DualPathSubstage, training: bool = True) -> Tensor:
    return substage.forward(x, training)


def _conv_out(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


class DpnSeNet(Module):
    """Stem -> 4 dual-path stages (optionally SE-recalibrated) -> pool -> dense logits."""

    def __init__(self, cfg: DpnSeConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.training = True
        rng = np.random.default_rng(seed)
        se_rng = np.random.default_rng([seed, 1])
        bn = dict(batch_norm=cfg.batch_norm, eps=cfg.bn_eps, momentum=cfg.bn_momentum)

        stem = cfg.stem
        self.stem = self.add_child(
            "stem", ConvBn(cfg.input_channels, stem.out_channels, stem.kernel, rng,
                           stride=stem.stride, pad=stem.kernel // 2, **bn)
        )
        size = _conv_out(cfg.input_size, stem.kernel, stem.stride, stem.kernel // 2)
        if size < stem.pool_kernel:
            raise ConfigError(f"input {cfg.input_size} collapses to {size} before the stem max pool")
        size = _conv_out(size, stem.pool_kernel, stem.pool_stride, 0)

        self.blocks: List[Tuple[DualPathSubstage, Optional[SqueezeExcitation]]] = []
        self.expected_channels: List[int] = []
        channels = stem.out_channels
        for s, stage in enumerate(cfg.stages, start=1):
            size = _conv_out(size, 3, stage.stride, 1)
            if size < 1:
                raise ConfigError(f"spatial size collapses below 1 in stage {s}")
            for i in range(stage.num_substages):
                substage = DualPathSubstage(
                    channels, stage.residual_width, i * stage.dense_increment, stage.dense_increment,
                    stage.bottleneck_width, rng, stride=stage.stride if i == 0 else 1, project=(i == 0), **bn,
                )
                self.add_child(f"stage{s}.sub{i + 1}", substage)
                channels = substage.out_channels
                se = None
                if cfg.se_enabled:
                    se = SqueezeExcitation(channels, cfg.se_reduction, se_rng)
                    self.add_child(f"stage{s}.sub{i + 1}.se", se)
                self.blocks.append((substage, se))
                self.expected_channels.append(stage.residual_width + (i + 1) * stage.dense_increment)
        self.final_size = size
        self.feature_channels = channels
        self.head_weight = self.add_param(
            "head.weight", _fan_in_uniform(rng, (channels, cfg.num_classes), channels, 1.0)
        )
        self.head_bias = self.add_param("head.bias", np.zeros(cfg.num_classes))
        logger.debug("built %s with %d parameters", "DPN-SE" if cfg.se_enabled else "DPN", self.parameter_count())

    def train(self) -> "DpnSeNet":
        self.training = True
        return self

    def eval(self) -> "DpnSeNet":
        self.training = False
        return self

    def forward(self, x: Union[Tensor, np.ndarray], training: Optional[bool] = None) -> Tensor:
        """Logits [N, num_classes] for a batch [N, C, S, S]."""
        training = self.training if training is None else training
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.cfg
        expected = (cfg.input_channels, cfg.input_size, cfg.input_size)
        if x.data.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise InputError(f"model expects input [N, {expected[0]}, {expected[1]}, {expected[2]}], got {x.shape}")
        h = relu(self.stem.forward(x, training))
        h = maxpool2d(h, cfg.stem.pool_kernel, cfg.stem.pool_stride)
        for (substage, se), channels in zip(self.blocks, self.expected_channels):
            h = substage.forward(h, training)
            if h.shape[1] != channels:
                raise DimensionError(f"channel recurrence violated: {h.shape[1]} != {channels}")
            if se is not None:
                h = se.forward(h)
        h = relu(h)
        return dense(global_avg_pool(h), self.head_weight, self.head_bias)

    def named_tensors(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters and batch-norm buffers, in a stable order."""
        named: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, tensor in self.named_parameters():
            named[name] = tensor.data
        for name, array in self.named_buffers():
            named[name] = array
        return named

    def load_state(self, named: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """Copy values into the model in place; names and shapes must match."""
        targets: Dict[str, np.ndarray] = dict(self.named_tensors())
        missing = sorted(set(targets) - set(named))
        if missing:
            raise InputError(f"model state is missing tensors: {missing[:5]}")
        unexpected = sorted(set(named) - set(targets))
        if strict and unexpected:
            raise InputError(f"model state has unexpected tensors: {unexpected[:5]}")
        for name, target in targets.items():
            value = np.asarray(named[name], dtype=np.float64)
            if value.shape != target.shape:
                raise InputError(f"shape mismatch for {name}: {value.shape} vs {target.shape}")
            target[...] = value


def build_model(cfg: DpnSeConfig, seed: int = 0) -> DpnSeNet:
    return DpnSeNet(cfg, seed=seed)


def se_parameter_count(cfg: DpnSeConfig) -> int:
    """Parameters SE adds: per substage output C, C*h + h + h*C + C with h = max(1, C // r)."""
    total = 0
    for stage in cfg.stages:
        for i in range(stage.num_substages):
            channels = stage.residual_width + (i + 1) * stage.dense_increment
            hidden = se_hidden_width(channels, cfg.se_reduction)
            total += 2 * channels * hidden + hidden + channels
    return total


def forward(model: DpnSeNet, batch: Union[Tensor, np.ndarray], training: Optional[bool] = None) -> Tensor:
    return model.forward(batch, training=training)


def image_to_array(image: Image) -> np.ndarray:
    """[C, H, W] float64 view of a channel-last image."""
    return np.ascontiguousarray(image.pixels.transpose(2, 0, 1))


def predict(model: DpnSeNet, image: Union[Image, np.ndarray]) -> np.ndarray:
    """Class probabilities in inference mode; no graph is built and the model is not mutated.

    Accepts one image (``Image`` or [C, H, W]) or a batch [N, C, H, W].
    """
    if isinstance(image, Image):
        image = image_to_array(image)
    batch = np.asarray(image, dtype=np.float64)
    single = batch.ndim == 3
    if single:
        batch = batch[None]
    with no_grad():
        probs = softmax(model.forward(batch, training=False)).data
    return probs[0] if single else probs


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_model(model: DpnSeNet, path: Union[str, Path], metadata: Optional[Dict] = None) -> None:
    """Write the DPNSE01 tensor file and its JSON sidecar (config + metadata)."""
    save_tensors(path, model.named_tensors())
    sidecar = {"format": "DPNSE01", "config": model.cfg.model_dump(mode="json")}
    sidecar.update(metadata or {})
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: Union[str, Path]) -> Tuple[DpnSeNet, Dict]:
    meta_path = sidecar_path(path)
    if not meta_path.exists():
        raise FileNotFoundError(f"Model sidecar not found at {meta_path}")
    metadata = json.loads(meta_path.read_text(encoding="utf-8"))
    model = build_model(DpnSeConfig.model_validate(metadata["config"]))
    model.load_state(load_tensors(path))
    model.eval()
    return model, metadata
