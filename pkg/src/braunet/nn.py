"""Neural building blocks: linear, conv2d, norms, GELU, and the 2-layer MLP.

Layers are thin parameter holders; the math lives in functional forms that
register tape nodes directly, with closed-form backward passes. Convolution
is computed as explicit cross-correlation, one kernel tap at a time, each tap
a vectorized slice product; this keeps the arithmetic order fixed and the
result deterministic.
"""

import math

import numpy as np
from scipy.special import erf

from .autodiff import Tensor, matmul

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# -- initialization ------------------------------------------------------------


def trunc_normal(shape, std: float, rng: np.random.Generator, dtype=np.float32, clip=2.0):
    """Normal(0, std) resampled until all draws fall inside +-clip*std."""
    vals = rng.normal(0.0, std, size=shape)
    bound = clip * std
    bad = np.abs(vals) > bound
    while bad.any():
        vals[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(vals) > bound
    return vals.astype(dtype)


def conv_init(shape, rng: np.random.Generator, groups=1, dtype=np.float32):
    """Fan-out scaled normal for convolution weights [out, in/g, kh, kw]."""
    out_ch, _, kh, kw = shape
    fan_out = out_ch * kh * kw // groups
    return rng.normal(0.0, math.sqrt(2.0 / fan_out), size=shape).astype(dtype)


# -- module base ---------------------------------------------------------------


class Module:
    """Parameter container with deterministic recursive naming.

    Iteration follows ``__dict__`` insertion order, so parameter order, and
    with it checkpoint bytes and optimizer state layout, is stable run to run.
    """

    _buffer_names: tuple[str, ...] = ()

    def named_parameters(self, prefix: str = ""):
        for attr, value in vars(self).items():
            yield from _walk_parameters(f"{prefix}{attr}", value)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for attr in self._buffer_names:
            yield f"{prefix}{attr}", getattr(self, attr)
        for attr, value in vars(self).items():
            yield from _walk_buffers(f"{prefix}{attr}", value)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t in self.named_parameters()}
        state.update({name: buf.copy() for name, buf in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        if expected != set(state):
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ValueError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, tensor in params.items():
            arr = np.asarray(state[name])
            if arr.shape != tensor.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {tensor.data.shape}")
            tensor.data = np.ascontiguousarray(arr.astype(tensor.data.dtype, copy=False))
        for name, buf in buffers.items():
            arr = np.asarray(state[name])
            if arr.shape != buf.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {buf.shape}")
            buf[...] = arr

    def zero_grad(self) -> None:
        for _, t in self.named_parameters():
            t.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk_parameters(name, value):
    if isinstance(value, Tensor) and value.requires_grad:
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_parameters(f"{name}.{i}", item)


def _walk_buffers(name, value):
    if isinstance(value, Module):
        yield from value.named_buffers(f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_buffers(f"{name}.{i}", item)


def count_parameters(module: Module) -> int:
    """Total trainable scalar count (buffers such as running stats excluded)."""
    return sum(t.data.size for _, t in module.named_parameters())


# -- activations -----------------------------------------------------------------


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF gelu: x * Phi(x)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return Tensor.from_op(out.astype(x.data.dtype, copy=False), (x,), vjp)


# -- linear ------------------------------------------------------------------------


class Linear(Module):
    """y = x @ weight + bias, applied to the trailing axis."""

    def __init__(self, in_features, out_features, bias=True, rng=None, dtype=np.float32, std=0.02):
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(trunc_normal((in_features, out_features), std, rng, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return linear_forward(x, self)


def linear_forward(x: Tensor, layer: Linear) -> Tensor:
    if x.data.shape[-1] != layer.weight.data.shape[0]:
        raise ValueError(
            f"linear expects trailing extent {layer.weight.data.shape[0]}, got {x.data.shape}"
        )
    out = matmul(x, layer.weight)
    if layer.bias is not None:
        out = out + layer.bias
    return out


# -- convolution ---------------------------------------------------------------------


class Conv2d(Module):
    """Cross-correlation on [B, C, H, W] maps; depth-wise when groups == channels."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 groups=1, bias=True, rng=None, dtype=np.float32):
        if in_channels % groups or out_channels % groups:
            raise ValueError("groups must divide both channel counts")
        rng = rng or np.random.default_rng(0)
        kh, kw = (kernel_size, kernel_size) if isinstance(kernel_size, int) else kernel_size
        shape = (out_channels, in_channels // groups, kh, kw)
        self.weight = Tensor(conv_init(shape, rng, groups, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return conv2d_forward(x, self)


def _conv_tap(xs, w_tap, groups):
    """Contract channels for one kernel tap: xs [B,Cin,Ho,Wo] x w_tap [Cout,Cin/g]."""
    if groups == 1:
        return np.einsum("bchw,oc->bohw", xs, w_tap)
    b, cin, ho, wo = xs.shape
    cout = w_tap.shape[0]
    if groups == cin == cout:  # depth-wise fast path
        return xs * w_tap[:, 0][None, :, None, None]
    xs_g = xs.reshape(b, groups, cin // groups, ho, wo)
    w_g = w_tap.reshape(groups, cout // groups, cin // groups)
    return np.einsum("bgchw,goc->bgohw", xs_g, w_g).reshape(b, cout, ho, wo)


def _conv_tap_input_grad(g, w_tap, groups, cin):
    if groups == 1:
        return np.einsum("bohw,oc->bchw", g, w_tap)
    b, cout, ho, wo = g.shape
    if groups == cin == cout:
        return g * w_tap[:, 0][None, :, None, None]
    g_g = g.reshape(b, groups, cout // groups, ho, wo)
    w_g = w_tap.reshape(groups, cout // groups, cin // groups)
    return np.einsum("bgohw,goc->bgchw", g_g, w_g).reshape(b, cin, ho, wo)


def _conv_tap_weight_grad(g, xs, groups):
    if groups == 1:
        return np.einsum("bohw,bchw->oc", g, xs)
    b, cin, ho, wo = xs.shape
    cout = g.shape[1]
    if groups == cin == cout:
        return (g * xs).sum(axis=(0, 2, 3))[:, None]
    g_g = g.reshape(b, groups, cout // groups, ho, wo)
    xs_g = xs.reshape(b, groups, cin // groups, ho, wo)
    return np.einsum("bgohw,bgchw->goc", g_g, xs_g).reshape(cout, cin // groups)


def conv2d_forward(x: Tensor, layer: Conv2d) -> Tensor:
    w, bias = layer.weight, layer.bias
    stride, pad, groups = layer.stride, layer.padding, layer.groups
    out_ch, cin_per_group, kh, kw = w.data.shape
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects [B, C, H, W], got {x.data.shape}")
    b, cin, h, wdt = x.data.shape
    if cin != cin_per_group * groups:
        raise ValueError(f"conv2d expects {cin_per_group * groups} input channels, got {cin}")
    if h + 2 * pad < kh or wdt + 2 * pad < kw:
        raise ValueError("input smaller than kernel reach under the given padding")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wdt + 2 * pad - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    out = np.zeros((b, out_ch, ho, wo), dtype=x.data.dtype)
    for di in range(kh):
        for dj in range(kw):
            xs = xp[:, :, di : di + stride * (ho - 1) + 1 : stride,
                    dj : dj + stride * (wo - 1) + 1 : stride]
            out += _conv_tap(xs, w.data[:, :, di, dj], groups)
    if bias is not None:
        out += bias.data[None, :, None, None]

    inputs = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w.data)
        for di in range(kh):
            for dj in range(kw):
                rows = slice(di, di + stride * (ho - 1) + 1, stride)
                cols = slice(dj, dj + stride * (wo - 1) + 1, stride)
                dxp[:, :, rows, cols] += _conv_tap_input_grad(g, w.data[:, :, di, dj], groups, cin)
                dw[:, :, di, dj] = _conv_tap_weight_grad(g, xp[:, :, rows, cols], groups)
        dx = dxp[:, :, pad : pad + h, pad : pad + wdt] if pad else dxp
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return Tensor.from_op(out, inputs, vjp)


# -- normalization -----------------------------------------------------------------


class LayerNorm(Module):
    """Per-token normalization over the trailing channel axis, then affine."""

    def __init__(self, channels, eps=1e-5, dtype=np.float32):
        self.scale = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layernorm_forward(x, self)


def layernorm_forward(x: Tensor, layer: LayerNorm) -> Tensor:
    scale, shift, eps = layer.scale, layer.shift, layer.eps
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * scale.data + shift.data

    def vjp(g):
        gx = g * scale.data
        dx = (gx - gx.mean(axis=-1, keepdims=True)
              - xhat * (gx * xhat).mean(axis=-1, keepdims=True)) * inv_std
        reduce_axes = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return Tensor.from_op(out, (x, scale, shift), vjp)


class BatchNorm2d(Module):
    """Channel-wise batch normalization over [B, C, H, W].

    Running statistics use the population (biased) batch variance and are
    updated only when forwarding in training mode with ``update_stats``.
    Before any update they stay at mean 0 / var 1, so eval mode starts out as
    a pure affine map.
    """

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        self.scale = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum

    def forward(self, x: Tensor, training: bool = False, update_stats: bool | None = None) -> Tensor:
        return batchnorm2d_forward(x, self, training, update_stats)


def batchnorm2d_forward(x: Tensor, layer: BatchNorm2d, training: bool,
                        update_stats: bool | None = None) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError(f"batchnorm2d expects [B, C, H, W], got {x.data.shape}")
    scale, shift, eps = layer.scale, layer.shift, layer.eps
    axes = (0, 2, 3)
    if training:
        mu = x.data.mean(axis=axes)
        centered = x.data - mu[None, :, None, None]
        var = (centered * centered).mean(axis=axes)
        if update_stats is None:
            update_stats = True
        if update_stats:
            m = layer.momentum
            layer.running_mean[...] = (1.0 - m) * layer.running_mean + m * mu
            layer.running_var[...] = (1.0 - m) * layer.running_var + m * var
    else:
        mu = layer.running_mean
        centered = x.data - mu[None, :, None, None]
        var = layer.running_var
    inv_std = (1.0 / np.sqrt(var + eps))[None, :, None, None]
    xhat = centered * inv_std
    out = xhat * scale.data[None, :, None, None] + shift.data[None, :, None, None]

    def vjp(g):
        gx = g * scale.data[None, :, None, None]
        if training:
            dx = (gx - gx.mean(axis=axes, keepdims=True)
                  - xhat * (gx * xhat).mean(axis=axes, keepdims=True)) * inv_std
        else:
            dx = gx * inv_std
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return Tensor.from_op(out, (x, scale, shift), vjp)


# -- MLP ----------------------------------------------------------------------------


class Mlp(Module):
    """fc2(gelu(fc1(x))) with hidden width exactly ratio * channels."""

    def __init__(self, channels, ratio=3, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        hidden = ratio * channels
        self.fc1 = Linear(channels, hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(hidden, channels, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return mlp_forward(x, self)


def mlp_forward(x: Tensor, mlp: Mlp) -> Tensor:
    return linear_forward(gelu(linear_forward(x, mlp.fc1)), mlp.fc2)
