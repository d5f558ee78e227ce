"""Small factorized 3D residual classifier.

Every convolution is either pointwise (1x1x1), temporal (Ktx1x1), or spatial
(1xKhxKw); kernels with both temporal and spatial extent are rejected at
construction time.  Each bottleneck block runs reduce -> temporal conv ->
spatial conv -> expand, with batch norm and ReLU after every convolution and
a projected shortcut when channels or stride change.  The head is global
average pooling followed by a single-logit linear layer; logits are clamped
to +-30 and squashed in double precision so probabilities stay strictly
inside (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    add,
    avg_pool,
    batch_norm,
    cast,
    clamp,
    conv3d,
    linear,
    no_grad,
    relu,
    reshape,
    sigmoid,
)

__all__ = [
    "LOGIT_CLAMP",
    "StemSpec",
    "BlockSpec",
    "ModelSpec",
    "NamedParam",
    "Model",
    "build_model",
    "reference_model_spec",
    "cam",
]

LOGIT_CLAMP = 30.0


def _validate_kernel(kernel: tuple[int, int, int], role: str, where: str) -> None:
    kt, kh, kw = kernel
    if kt < 1 or kh < 1 or kw < 1:
        raise ValueError(f"{where}: kernel extents must be positive, got {kernel}")
    if kt > 1 and (kh > 1 or kw > 1):
        raise ValueError(
            f"{where}: kernel {kernel} mixes temporal and spatial extent; "
            "only 1x1x1, Ktx1x1 or 1xKhxKw kernels are allowed"
        )
    if role == "temporal" and (kh > 1 or kw > 1):
        raise ValueError(f"{where}: temporal kernel must be Ktx1x1, got {kernel}")
    if role == "spatial" and kt > 1:
        raise ValueError(f"{where}: spatial kernel must be 1xKhxKw, got {kernel}")


@dataclass(frozen=True)
class StemSpec:
    out_channels: int
    spatial_stride: int = 2
    spatial_kernel: tuple[int, int, int] = (1, 3, 3)
    temporal_kernel: tuple[int, int, int] = (3, 1, 1)


@dataclass(frozen=True)
class BlockSpec:
    in_channels: int
    mid_channels: int
    out_channels: int
    spatial_stride: int = 1
    has_projection: bool = False
    temporal_kernel: tuple[int, int, int] = (3, 1, 1)
    spatial_kernel: tuple[int, int, int] = (1, 3, 3)


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple[int, int, int, int]  # (C, T, H, W)
    stem: StemSpec
    blocks: tuple[BlockSpec, ...]
    head_width: int


@dataclass(frozen=True)
class NamedParam:
    name: str
    kind: str  # conv_weight | conv_bias | bn_gamma | bn_beta | linear_weight | linear_bias
    shape: tuple[int, ...]


def reference_model_spec(input_shape: tuple[int, int, int, int] = (3, 8, 32, 32)) -> ModelSpec:
    """The reference tiny architecture: stem 3->8, blocks 8->8->16 and 16->16->32."""
    return ModelSpec(
        input_shape=tuple(input_shape),
        stem=StemSpec(out_channels=8, spatial_stride=2),
        blocks=(
            BlockSpec(8, 8, 16, spatial_stride=2, has_projection=True),
            BlockSpec(16, 16, 32, spatial_stride=1, has_projection=True),
        ),
        head_width=32,
    )


class _Conv(object):
    def __init__(self, name, in_ch, out_ch, kernel, stride, padding, rng, dtype):
        self.name = name
        self.stride = stride
        self.padding = padding
        fan_in = in_ch * int(np.prod(kernel))
        std = np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, std, size=(out_ch, in_ch) + tuple(kernel))
        self.weight = Tensor(w.astype(dtype), requires_grad=True)

    def __call__(self, x):
        return conv3d(x, self.weight, stride=self.stride, padding=self.padding)

    def named_params(self):
        return [(NamedParam(f"{self.name}.weight", "conv_weight", self.weight.shape), self.weight)]


class _BatchNorm(object):
    def __init__(self, name, channels, dtype, momentum=0.1, eps=1e-5):
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def __call__(self, x, training, update_stats):
        return batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=training,
            momentum=self.momentum,
            eps=self.eps,
            update_running_stats=update_stats,
        )

    def named_params(self):
        return [
            (NamedParam(f"{self.name}.gamma", "bn_gamma", self.gamma.shape), self.gamma),
            (NamedParam(f"{self.name}.beta", "bn_beta", self.beta.shape), self.beta),
        ]

    def buffers(self):
        return [
            (f"{self.name}.running_mean", self.running_mean),
            (f"{self.name}.running_var", self.running_var),
        ]


class _Linear(object):
    def __init__(self, name, in_features, out_features, rng, dtype):
        self.name = name
        std = np.sqrt(2.0 / in_features)
        w = rng.normal(0.0, std, size=(out_features, in_features))
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return linear(x, self.weight, self.bias)

    def named_params(self):
        return [
            (NamedParam(f"{self.name}.weight", "linear_weight", self.weight.shape), self.weight),
            (NamedParam(f"{self.name}.bias", "linear_bias", self.bias.shape), self.bias),
        ]


class _Bottleneck(object):
    """reduce (1x1x1) -> temporal conv -> spatial conv -> expand (1x1x1) + shortcut."""

    def __init__(self, name, spec: BlockSpec, rng, dtype):
        self.name = name
        self.spec = spec
        kt = spec.temporal_kernel[0]
        kh, kw = spec.spatial_kernel[1], spec.spatial_kernel[2]
        s = spec.spatial_stride
        self.conv_reduce = _Conv(
            f"{name}.conv_reduce", spec.in_channels, spec.mid_channels, (1, 1, 1), (1, 1, 1), (0, 0, 0), rng, dtype
        )
        self.bn_reduce = _BatchNorm(f"{name}.bn_reduce", spec.mid_channels, dtype)
        self.conv_t = _Conv(
            f"{name}.conv_t", spec.mid_channels, spec.mid_channels,
            spec.temporal_kernel, (1, 1, 1), (kt // 2, 0, 0), rng, dtype,
        )
        self.bn_t = _BatchNorm(f"{name}.bn_t", spec.mid_channels, dtype)
        self.conv_s = _Conv(
            f"{name}.conv_s", spec.mid_channels, spec.mid_channels,
            spec.spatial_kernel, (1, s, s), (0, kh // 2, kw // 2), rng, dtype,
        )
        self.bn_s = _BatchNorm(f"{name}.bn_s", spec.mid_channels, dtype)
        self.conv_expand = _Conv(
            f"{name}.conv_expand", spec.mid_channels, spec.out_channels, (1, 1, 1), (1, 1, 1), (0, 0, 0), rng, dtype
        )
        self.bn_expand = _BatchNorm(f"{name}.bn_expand", spec.out_channels, dtype)
        if spec.has_projection:
            self.conv_proj = _Conv(
                f"{name}.conv_proj", spec.in_channels, spec.out_channels, (1, 1, 1), (1, s, s), (0, 0, 0), rng, dtype
            )
            self.bn_proj = _BatchNorm(f"{name}.bn_proj", spec.out_channels, dtype)
        else:
            self.conv_proj = None
            self.bn_proj = None

    def __call__(self, x, training, update_stats):
        h = relu(self.bn_reduce(self.conv_reduce(x), training, update_stats))
        h = relu(self.bn_t(self.conv_t(h), training, update_stats))
        h = relu(self.bn_s(self.conv_s(h), training, update_stats))
        h = self.bn_expand(self.conv_expand(h), training, update_stats)
        if self.conv_proj is not None:
            shortcut = self.bn_proj(self.conv_proj(x), training, update_stats)
        else:
            shortcut = x
        return relu(add(h, shortcut))

    def modules(self):
        mods = [
            self.conv_reduce, self.bn_reduce,
            self.conv_t, self.bn_t,
            self.conv_s, self.bn_s,
            self.conv_expand, self.bn_expand,
        ]
        if self.conv_proj is not None:
            mods += [self.conv_proj, self.bn_proj]
        return mods


class Model(object):
    """Factorized 3D residual classifier with a pooled single-logit head."""

    def __init__(self, spec: ModelSpec, seed: int, dtype=np.float32):
        self.spec = spec
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(self.seed)
        c_in = spec.input_shape[0]
        stem = spec.stem
        ss = stem.spatial_stride
        skt = stem.temporal_kernel[0]
        skh, skw = stem.spatial_kernel[1], stem.spatial_kernel[2]
        self.stem_conv_s = _Conv(
            "stem.conv_s", c_in, stem.out_channels, stem.spatial_kernel,
            (1, ss, ss), (0, skh // 2, skw // 2), rng, dtype,
        )
        self.stem_bn_s = _BatchNorm("stem.bn_s", stem.out_channels, dtype)
        self.stem_conv_t = _Conv(
            "stem.conv_t", stem.out_channels, stem.out_channels, stem.temporal_kernel,
            (1, 1, 1), (skt // 2, 0, 0), rng, dtype,
        )
        self.stem_bn_t = _BatchNorm("stem.bn_t", stem.out_channels, dtype)
        self.blocks = [
            _Bottleneck(f"block{i + 1}", bs, rng, dtype) for i, bs in enumerate(spec.blocks)
        ]
        self.head = _Linear("head", spec.head_width, 1, rng, dtype)

    # -- parameter and buffer enumeration ----------------------------------
    def modules(self):
        mods = [self.stem_conv_s, self.stem_bn_s, self.stem_conv_t, self.stem_bn_t]
        for b in self.blocks:
            mods += b.modules()
        mods.append(self.head)
        return mods

    def named_params(self) -> list[tuple[NamedParam, Tensor]]:
        out = []
        for mod in self.modules():
            out.extend(mod.named_params())
        return out

    def param_tensors(self) -> dict[str, Tensor]:
        return {np_.name: t for np_, t in self.named_params()}

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for mod in self.modules():
            if isinstance(mod, _BatchNorm):
                out.extend(mod.buffers())
        return out

    def num_params(self) -> int:
        return sum(t.size for _, t in self.named_params())

    # -- forward ------------------------------------------------------------
    def backbone(self, x: Tensor, training: bool, update_stats: bool) -> Tensor:
        h = relu(self.stem_bn_s(self.stem_conv_s(x), training, update_stats))
        h = relu(self.stem_bn_t(self.stem_conv_t(h), training, update_stats))
        for b in self.blocks:
            h = b(h, training, update_stats)
        return h

    def _as_batch(self, batch) -> Tensor:
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch), dtype=self.dtype)
        if x.ndim != 5 or x.shape[1:] != tuple(self.spec.input_shape):
            raise ValueError(
                f"forward expects a batch of shape [B, {', '.join(map(str, self.spec.input_shape))}], "
                f"got {x.shape}"
            )
        return x

    def forward(self, batch, mode: str = "train", update_stats: bool | None = None) -> Tensor:
        """Probabilities in (0, 1), one per clip in the batch."""
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        training = mode == "train"
        if update_stats is None:
            update_stats = training
        x = self._as_batch(batch)
        if training:
            return self._head_probs(self.backbone(x, True, update_stats))
        with no_grad():
            return self._head_probs(self.backbone(x, False, False))

    def _head_probs(self, feats: Tensor) -> Tensor:
        pooled = avg_pool(feats, axes=(2, 3, 4))
        logits = self.head(pooled)
        logits = clamp(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
        logits = cast(logits, np.float64)
        return reshape(sigmoid(logits), (feats.shape[0],))


def _validate_spec(spec: ModelSpec) -> None:
    c, t, h, w = spec.input_shape
    if min(c, t, h, w) < 1:
        raise ValueError(f"input shape must be positive, got {spec.input_shape}")
    _validate_kernel(spec.stem.spatial_kernel, "spatial", "stem spatial conv")
    _validate_kernel(spec.stem.temporal_kernel, "temporal", "stem temporal conv")
    if spec.stem.spatial_stride not in (1, 2):
        raise ValueError(f"stem spatial stride must be 1 or 2, got {spec.stem.spatial_stride}")
    prev = spec.stem.out_channels
    for i, b in enumerate(spec.blocks):
        where = f"block{i + 1}"
        _validate_kernel(b.temporal_kernel, "temporal", f"{where} temporal conv")
        _validate_kernel(b.spatial_kernel, "spatial", f"{where} spatial conv")
        if b.spatial_stride not in (1, 2):
            raise ValueError(f"{where}: spatial stride must be 1 or 2, got {b.spatial_stride}")
        if b.in_channels != prev:
            raise ValueError(
                f"{where}: in_channels {b.in_channels} does not match previous width {prev}"
            )
        needs_proj = b.in_channels != b.out_channels or b.spatial_stride != 1
        if needs_proj and not b.has_projection:
            raise ValueError(
                f"{where}: shortcut needs a projection (channels {b.in_channels}->{b.out_channels}, "
                f"stride {b.spatial_stride}) but has_projection is False"
            )
        prev = b.out_channels
    if spec.head_width != prev:
        raise ValueError(
            f"head width {spec.head_width} does not match final feature width {prev}"
        )


def build_model(spec: ModelSpec, seed: int, dtype=np.float32) -> Model:
    """Construct the classifier with deterministic, seed-driven initialization.

    Conv and linear weights use fan-in scaled normal initialization; batch
    norm starts at gamma=1, beta=0; biases start at zero.  The same
    (spec, seed, dtype) always yields bitwise-identical parameters.
    """
    _validate_spec(spec)
    model = Model(spec, seed, dtype)
    names = [np_.name for np_, _ in model.named_params()]
    if len(names) != len(set(names)):
        raise ValueError("duplicate parameter names in model")
    return model


def cam(model: Model, clip) -> np.ndarray:
    """Class activation map over the final feature maps.

    Returns a [T', H', W'] heatmap: the head-weight-weighted sum of the last
    feature maps, min-max normalized to [0, 1].  A constant raw map
    normalizes to all zeros.
    """
    head = getattr(model, "head", None)
    if head is None or not isinstance(head, _Linear):
        raise ValueError("CAM requires a model with a pooled linear head")
    arr = np.asarray(clip.data if isinstance(clip, Tensor) else clip)
    if arr.shape != tuple(model.spec.input_shape):
        raise ValueError(
            f"cam expects a single clip of shape {model.spec.input_shape}, got {arr.shape}"
        )
    with no_grad():
        feats = model.backbone(Tensor(arr[np.newaxis], dtype=model.dtype), False, False)
    weights = head.weight.data[0]
    heat = np.tensordot(weights, feats.data[0], axes=(0, 0))
    lo, hi = float(heat.min()), float(heat.max())
    if hi - lo < 1e-12:
        return np.zeros_like(heat)
    return (heat - lo) / (hi - lo)
