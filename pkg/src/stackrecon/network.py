"""Replication layer, the encoder-decoder stage and its stacked composition."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry.grids import SilhouetteImage, VoxelGrid
from .tensor import Tensor, conv3d, conv_transpose3d, leaky_relu, relu, sigmoid


@dataclass(frozen=True)
class NetworkSpec:
    resolution: int = 32
    conv_kernels: tuple[int, ...] = (4, 2, 2, 2)
    deconv_kernels: tuple[int, ...] = (2, 2, 2, 4)
    conv_channels: tuple[int, ...] = (64, 256, 512, 1024)
    deconv_channels: tuple[int, ...] = (1024, 512, 256, 64)
    stride: int = 2
    width_mult: float = 1.0
    activation: str = "leaky_relu"
    slope: float = 0.01
    head: str = "conv1x1-sigmoid"

    def __post_init__(self):
        for name in ("conv_kernels", "deconv_kernels", "conv_channels", "deconv_channels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.conv_kernels) != 4 or len(self.deconv_kernels) != 4:
            raise ValueError("encoder and decoder must both have 4 layers")
        if not 0 < self.width_mult <= 1:
            raise ValueError(f"width multiplier must lie in (0, 1], got {self.width_mult}")
        if self.activation not in ("leaky_relu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        check_resolution(self.resolution)

    def scaled(self, channels) -> tuple[int, ...]:
        return tuple(max(1, int(round(c * self.width_mult))) for c in channels)

    def layers(self) -> list[dict]:
        """Per-layer description: kind, kernel, padding, in/out channels."""
        enc = self.scaled(self.conv_channels)
        dec = self.scaled(self.deconv_channels)
        specs, c_in = [], 1
        for i, (k, c) in enumerate(zip(self.conv_kernels, enc), start=1):
            specs.append(dict(name=f"conv{i}", kind="conv", kernel=k, stride=self.stride,
                              padding=padding_for(k, self.stride), c_in=c_in, c_out=c))
            c_in = c
        for i, (k, c) in enumerate(zip(self.deconv_kernels, dec), start=1):
            specs.append(dict(name=f"deconv{i}", kind="deconv", kernel=k, stride=self.stride,
                              padding=padding_for(k, self.stride), c_in=c_in, c_out=c))
            c_in = c
        specs.append(dict(name="head", kind="conv", kernel=1, stride=1, padding=0, c_in=c_in, c_out=1))
        return specs

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> NetworkSpec:
        return cls(**d)


def padding_for(kernel: int, stride: int) -> int:
    """Padding that makes a layer halve (or double) even extents exactly."""
    return max(0, (kernel - stride) // 2)


def check_resolution(R: int) -> None:
    if R < 16 or R % 16:
        raise ValueError(f"grid resolution must be a positive multiple of 16, got {R}")


@dataclass
class StageParams:
    weights: dict[str, Tensor]  # "<layer>.weight" / "<layer>.bias", declaration order

    def tensors(self) -> list[Tensor]:
        return list(self.weights.values())

    def count(self) -> int:
        return sum(t.size for t in self.weights.values())


@dataclass
class StackedParams:
    spec: NetworkSpec
    stages: list[StageParams]
    shared: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def parameters(self) -> list[Tensor]:
        """Distinct parameter tensors, stage by stage, in declaration order."""
        seen, out = set(), []
        for stage in self.stages:
            for t in stage.tensors():
                if id(t) not in seen:
                    seen.add(id(t))
                    out.append(t)
        return out

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        stages = self.stages[:1] if self.shared else self.stages
        return [(f"stage{i + 1}.{k}", t) for i, s in enumerate(stages) for k, t in s.weights.items()]

    def count(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None


def replicate(s: SilhouetteImage, R: int) -> VoxelGrid:
    """Copy the silhouette into every slice along the depth axis (axis 0)."""
    if s.width != s.height:
        raise ValueError(f"silhouette must be square, got {s.width}x{s.height}")
    px = s.resized(R).pixels
    return VoxelGrid(np.broadcast_to(px[None, :, :], (R, R, R)).copy())


def init_params(spec: NetworkSpec, n_stages: int = 2, seed: int = 0, share_weights: bool = False,
                dtype=np.float64) -> StackedParams:
    """He-normal weights (std = sqrt(2 / fan_in)) and zero biases.

    fan_in counts the inputs feeding one output element: ``c_in * k^3`` for a
    convolution, ``c_in * (k / s)^3`` for a transposed convolution.
    """
    if n_stages < 1:
        raise ValueError("need at least one stage")
    rng = np.random.default_rng(seed)

    def draw() -> StageParams:
        weights = {}
        for layer in spec.layers():
            k, s, ci, co = layer["kernel"], layer["stride"], layer["c_in"], layer["c_out"]
            if layer["kind"] == "conv":
                shape, fan_in = (co, ci, k, k, k), ci * k ** 3
            else:
                shape, fan_in = (ci, co, k, k, k), ci * max(1, (k // s)) ** 3
            w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            weights[f"{layer['name']}.weight"] = Tensor(w, requires_grad=True, dtype=dtype)
            weights[f"{layer['name']}.bias"] = Tensor(np.zeros(co), requires_grad=True, dtype=dtype)
        return StageParams(weights)

    if share_weights:
        one = draw()
        stages = [one] * n_stages
    else:
        stages = [draw() for _ in range(n_stages)]
    return StackedParams(spec, stages, share_weights)


def _activate(spec: NetworkSpec, x: Tensor) -> Tensor:
    return leaky_relu(x, spec.slope) if spec.activation == "leaky_relu" else relu(x)


def stage_forward(p: StageParams, x: Tensor, spec: NetworkSpec) -> Tensor:
    """One encoder-decoder: [1,R,R,R] (or batched) in, same shape out, in (0, 1)."""
    R = x.shape[-1]
    check_resolution(R)
    if R != spec.resolution or x.shape[-3:] != (R, R, R):
        raise ValueError(f"input extents {x.shape[-3:]} do not match network resolution {spec.resolution}")
    h = x
    for layer in spec.layers():
        w = p.weights[f"{layer['name']}.weight"]
        b = p.weights[f"{layer['name']}.bias"]
        if layer["kind"] == "deconv":
            h = conv_transpose3d(h, w, b, layer["stride"], layer["padding"])
        else:
            h = conv3d(h, w, b, layer["stride"], layer["padding"])
        if layer["name"] != "head":
            h = _activate(spec, h)
    return sigmoid(h)


def stacked_forward(P: StackedParams, x0: Tensor) -> list[Tensor]:
    """Outputs Y_1 .. Y_n of the chain Y_k = f_k(Y_{k-1})."""
    outputs, y = [], x0
    for stage in P.stages:
        y = stage_forward(stage, y, P.spec)
        outputs.append(y)
    return outputs


def extents_trace(spec: NetworkSpec) -> list[int]:
    """Spatial extent after each layer, starting from the input resolution."""
    n, trace = spec.resolution, [spec.resolution]
    for layer in spec.layers()[:-1]:
        k, s, p = layer["kernel"], layer["stride"], layer["padding"]
        n = (n + 2 * p - k) // s + 1 if layer["kind"] == "conv" else (n - 1) * s - 2 * p + k
        trace.append(n)
    return trace
