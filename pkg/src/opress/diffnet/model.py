"""Residual U-Net used as the enhancement network.

Layout for depth ``D`` and base width ``C`` (level ``l`` has ``C * 2**l``
channels)::

    encoder   l = 0 .. D-1 : block -> skip_l -> downsample2
    bottleneck            : block at level D
    decoder   l = D-1 .. 0 : upsample2 -> concat(skip_l) -> block
    head                  : conv3x3 to 1 channel (zero-initialized) = delta
    output                = softplus(softplus^-1(input) + delta)

The softplus head is evaluated as ``input + softplus(L + delta) - softplus(L)``
(``L`` the inverse-softplus logit, clamped at 0) so a zero delta returns the
input bit for bit.

Two other heads exist: ``relu`` gives ``max(input + delta, 0)`` and
``softplus_relu`` uses two head channels, ``max(softplus(softplus^-1(input)
+ delta_0) + delta_1, 0)``. The multiplicative first stage sharpens, the
additive second stage can clear signal-free regions exactly. ``plain`` drops
the input residual, ``softplus(delta)``, and so starts as a constant frame.

A block is ``a = act(conv(x)); out = act(a + conv(a))``. Because the head
starts at zero the untrained network is the identity map.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..exceptions import DimMismatch, DimNotDivisible, InvariantViolation
from ..imagecore import BFrame, like
from . import autodiff as ad

HEADS = ("softplus", "relu", "softplus_relu", "plain")
LAYER_KINDS = ("conv3x3", "relu", "leaky_relu", "downsample2", "upsample2",
               "skip_concat", "residual_add")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    name: str = ""
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvariantViolation(f"unknown layer kind {self.kind!r}")

    @property
    def n_params(self) -> int:
        if self.kind == "conv3x3":
            return 9 * self.in_channels * self.out_channels + self.out_channels
        return 0


@dataclass
class Model:
    depth: int
    base_channels: int
    seed: int
    architecture: list
    params: "OrderedDict[str, np.ndarray]"
    activation: str = "leaky_relu"
    alpha: float = 0.1
    downsample: bool = True
    head: str = "softplus"
    dtype: str = "float64"

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @property
    def multiple(self) -> int:
        return 2 ** self.depth if self.downsample else 1

    def arch_dict(self) -> dict:
        return {"depth": self.depth, "base_channels": self.base_channels,
                "activation": self.activation, "alpha": self.alpha,
                "downsample": self.downsample, "head": self.head, "dtype": self.dtype}

    def astype(self, dtype) -> "Model":
        dtype = np.dtype(dtype)
        params = OrderedDict((k, v.astype(dtype)) for k, v in self.params.items())
        return Model(self.depth, self.base_channels, self.seed, self.architecture, params,
                     self.activation, self.alpha, self.downsample, self.head, dtype.name)

    def copy(self) -> "Model":
        return self.astype(self.dtype)


@dataclass
class GradStore:
    """Gradients for every parameter (same keys and shapes) and for the input."""

    params: "OrderedDict[str, np.ndarray]"
    input: np.ndarray | None = None

    def __getitem__(self, name):
        return self.params[name]


def _architecture(depth, base, activation, alpha, downsample, head_channels=1):
    specs = []

    def block(cin, cout, name):
        specs.append(LayerSpec("conv3x3", cin, cout, f"{name}.conv1"))
        specs.append(LayerSpec(activation, cout, cout, f"{name}.act1", alpha))
        specs.append(LayerSpec("conv3x3", cout, cout, f"{name}.conv2"))
        specs.append(LayerSpec("residual_add", cout, cout, f"{name}.add"))
        specs.append(LayerSpec(activation, cout, cout, f"{name}.act2", alpha))

    widths = [base * 2**lvl for lvl in range(depth + 1)]
    cin = 1
    for lvl in range(depth):
        block(cin, widths[lvl], f"enc{lvl}")
        if downsample:
            specs.append(LayerSpec("downsample2", widths[lvl], widths[lvl], f"down{lvl}"))
        cin = widths[lvl]
    block(cin, widths[depth], "mid")
    for lvl in reversed(range(depth)):
        up = widths[lvl + 1]
        if downsample:
            specs.append(LayerSpec("upsample2", up, up, f"up{lvl}"))
        specs.append(LayerSpec("skip_concat", up, up + widths[lvl], f"cat{lvl}"))
        block(up + widths[lvl], widths[lvl], f"dec{lvl}")
    specs.append(LayerSpec("conv3x3", widths[0], head_channels, "head"))
    return specs


def build_model(depth=3, base_channels=16, seed=0, activation="leaky_relu", alpha=0.1,
                downsample=True, head="softplus", dtype="float64") -> Model:
    """Build a residual U-Net with He-normal weights drawn from ``seed``."""
    if not 1 <= depth <= 4:
        raise InvariantViolation("depth must be in [1, 4]")
    if not 4 <= base_channels <= 64:
        raise InvariantViolation("base_channels must be in [4, 64]")
    if activation not in ("relu", "leaky_relu"):
        raise InvariantViolation("activation must be 'relu' or 'leaky_relu'")
    if head not in HEADS:
        raise InvariantViolation(f"head must be one of {HEADS}")
    rng = np.random.default_rng(seed)
    arch = _architecture(depth, base_channels, activation, alpha, downsample,
                         2 if head == "softplus_relu" else 1)
    params = OrderedDict()
    for spec in arch:
        if spec.kind != "conv3x3":
            continue
        shape = (spec.out_channels, spec.in_channels, 3, 3)
        if spec.name == "head":
            w = np.zeros(shape)
        else:
            w = rng.standard_normal(shape) * np.sqrt(2.0 / (9 * spec.in_channels))
        params[f"{spec.name}.weight"] = w.astype(dtype)
        params[f"{spec.name}.bias"] = np.zeros(spec.out_channels, dtype=dtype)
    return Model(depth, base_channels, seed, arch, params, activation, alpha,
                 downsample, head, np.dtype(dtype).name)


def bind(model: Model, requires_grad=True) -> "OrderedDict[str, ad.Tensor]":
    return OrderedDict((k, ad.leaf(v, requires_grad, k)) for k, v in model.params.items())


def _act(model, x):
    return ad.leaky_relu(x, model.alpha if model.activation == "leaky_relu" else 0.0)


def _block(model, p, name, x):
    a = _act(model, ad.conv3x3(x, p[f"{name}.conv1.weight"], p[f"{name}.conv1.bias"]))
    b = ad.conv3x3(a, p[f"{name}.conv2.weight"], p[f"{name}.conv2.bias"])
    return _act(model, ad.add(a, b))


def check_dims(model: Model, shape) -> None:
    h, w = shape[-2:]
    m = model.multiple
    if h % m or w % m:
        raise DimNotDivisible(f"frame {h}x{w} is not divisible by {m}")


def apply(model: Model, images: ad.Tensor, p=None) -> ad.Tensor:
    """Run the network on an ``(N, H, W)`` stack held in a Tensor.

    ``p`` is the bound parameter dict from :func:`bind`; pass the same dict
    to several calls to share parameters inside one graph.
    """
    if p is None:
        p = bind(model, requires_grad=False)
    check_dims(model, images.value.shape)
    n, h, w = images.value.shape
    x = ad.reshape(images, (1, n, h, w))
    skips = []
    for lvl in range(model.depth):
        x = _block(model, p, f"enc{lvl}", x)
        skips.append(x)
        if model.downsample:
            x = ad.avgpool2(x)
    x = _block(model, p, "mid", x)
    for lvl in reversed(range(model.depth)):
        if model.downsample:
            x = ad.upsample2(x)
        x = ad.concat([x, skips[lvl]], axis=0)
        x = _block(model, p, f"dec{lvl}", x)
    delta = ad.conv3x3(x, p["head.weight"], p["head.bias"])
    if model.head == "softplus_relu":
        scaled = ad.residual_softplus(images, ad.reshape(ad.take(delta, 0), (n, h, w)))
        return ad.residual_relu(scaled, ad.reshape(ad.take(delta, 1), (n, h, w)))
    delta = ad.reshape(delta, (n, h, w))
    if model.head == "plain":
        return ad.softplus(delta)
    if model.head == "relu":
        return ad.residual_relu(images, delta)
    return ad.residual_softplus(images, delta)


def _as_stack(model, frame):
    a = np.asarray(frame.data if isinstance(frame, BFrame) else frame, dtype=model.dtype)
    if a.ndim == 2:
        return a[None], True
    if a.ndim != 3:
        raise DimMismatch(f"expected a frame or a stack of frames, got shape {a.shape}")
    return a, False


def forward(model: Model, frame):
    """Φ(frame) for one 2-D frame (or BFrame) or an ``(N, H, W)`` stack."""
    stack, single = _as_stack(model, frame)
    out = apply(model, ad.leaf(stack)).value
    return like(frame, out[0]) if single else out


def backward(model: Model, frame, upstream_grad) -> GradStore:
    """Gradients of ``<Φ(frame), upstream_grad>`` for all parameters and the input."""
    stack, single = _as_stack(model, frame)
    g = np.asarray(upstream_grad, dtype=model.dtype)
    if single:
        g = g[None]
    if g.shape != stack.shape:
        raise DimMismatch(f"upstream gradient {g.shape} != output {stack.shape}")
    p = bind(model)
    x = ad.leaf(stack, requires_grad=True)
    out = apply(model, x, p)
    ad.backward(out, g)
    grads = collect_grads(p)
    gin = x.grad if x.grad is not None else np.zeros_like(stack)
    return GradStore(grads, gin[0] if single else gin)


def collect_grads(p) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict((k, t.grad if t.grad is not None else np.zeros_like(t.value))
                       for k, t in p.items())
