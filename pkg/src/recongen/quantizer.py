"""Uniform fake quantization (quantize-dequantize) of weights and activations.

Weights use a symmetric per-tensor grid recomputed from the current weights
on every forward; activations use an asymmetric per-tensor grid whose range
is calibrated once (EMA of batch min/max) and then frozen. BN layers are
folded into the preceding conv/linear before quantization.
"""
from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CalibrationError, ConfigError, DegenerateRangeError
from .zoo.models import ConvBN, LinearBN

SYMMETRIC, ASYMMETRIC = "symmetric", "asymmetric"
_SCHEME_RE = re.compile(r"^w(\d+)a(\d+)$")


@dataclass(frozen=True)
class QuantScheme:
    weight_bits: int
    act_bits: int
    weight_mode: str = SYMMETRIC
    act_mode: str = ASYMMETRIC

    def __post_init__(self):
        for name in ("weight_bits", "act_bits"):
            bits = getattr(self, name)
            if not isinstance(bits, int) or not 2 <= bits <= 16:
                raise ConfigError(f"{name} must be an integer in [2, 16], got {bits!r}")
        for mode in (self.weight_mode, self.act_mode):
            if mode not in (SYMMETRIC, ASYMMETRIC):
                raise ConfigError(f"unknown quantization mode {mode!r}")

    @property
    def notation(self) -> str:
        return f"w{self.weight_bits}a{self.act_bits}"

    @classmethod
    def parse(cls, text: str) -> "QuantScheme":
        m = _SCHEME_RE.match(str(text).strip().lower())
        if not m:
            raise ConfigError(f"invalid scheme {text!r}; expected the form 'w4a4'")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self):
        return self.notation


def grid(bits: int, mode: str, lo: float, hi: float) -> tuple[float, int, int, int]:
    """``(scale, zero_point, qmin, qmax)`` of the integer grid for a range."""
    if not lo < hi:
        raise CalibrationError(f"empty quantization range [{lo}, {hi}]")
    if mode == SYMMETRIC:
        a = max(abs(lo), abs(hi))
        qmax = 2 ** (bits - 1) - 1
        return a / qmax, 0, -(2 ** (bits - 1)), qmax
    if mode == ASYMMETRIC:
        qmax = 2**bits - 1
        scale = (hi - lo) / qmax
        zp = min(max(math.floor(-lo / scale + 0.5), 0), qmax)
        return scale, zp, 0, qmax
    raise ConfigError(f"unknown quantization mode {mode!r}")


def _clamp_bounds(bits, mode, lo, hi):
    scale, zp, qmin, qmax = grid(bits, mode, lo, hi)
    if mode == SYMMETRIC:
        a = max(abs(lo), abs(hi))
        return scale, zp, qmin, qmax, -a, a
    return scale, zp, qmin, qmax, (qmin - zp) * scale, (qmax - zp) * scale


def quantize_codes(x: torch.Tensor, bits: int, mode: str, range_: tuple[float, float]) -> torch.Tensor:
    """Integer grid codes (round half up) of the clamped input."""
    scale, zp, qmin, qmax, lo, hi = _clamp_bounds(bits, mode, *range_)
    xc = x.clamp(lo, hi)
    return (torch.floor(xc / scale + 0.5) + zp).clamp(qmin, qmax)


def dequantize(codes: torch.Tensor, bits: int, mode: str, range_: tuple[float, float]) -> torch.Tensor:
    scale, zp, *_ = grid(bits, mode, *range_)
    return (codes - zp) * scale


def quantize_tensor(x: torch.Tensor, bits: int, mode: str, range_: tuple[float, float]) -> torch.Tensor:
    """Fake-quantize ``x``; gradient is 1 inside the clamp range, 0 outside."""
    scale, zp, qmin, qmax, lo, hi = _clamp_bounds(bits, mode, *range_)
    xc = x.clamp(lo, hi)
    q = (torch.floor(xc / scale + 0.5) + zp).clamp(qmin, qmax)
    deq = (q - zp) * scale
    return xc + (deq - xc).detach()


class _QuantLayer(nn.Module):
    """Shared activation-range bookkeeping for quantized conv/linear."""

    momentum = 0.9

    def __init__(self, name: str, scheme: QuantScheme):
        super().__init__()
        self.name = name
        self.scheme = scheme
        self.register_buffer("act_range", torch.zeros(2))
        self.calibrating = False
        self.calibrated = False

    def observe(self, x: torch.Tensor) -> None:
        lo, hi = float(x.min()), float(x.max())
        if not self.calibrated:
            self.act_range.copy_(torch.tensor([lo, hi]))
            self.calibrated = True
        else:
            m = self.momentum
            self.act_range.mul_(m).add_((1 - m) * torch.tensor([lo, hi]))

    def freeze(self) -> None:
        lo, hi = self.act_range.tolist()
        if not self.calibrated or not hi - lo > 1e-12:
            raise DegenerateRangeError(self.name, lo, hi)
        self.calibrating = False

    def quant_input(self, x):
        if self.calibrating:
            self.observe(x.detach())
            return x
        lo, hi = self.act_range.tolist()
        return quantize_tensor(x, self.scheme.act_bits, self.scheme.act_mode, (lo, hi))

    def quant_weight(self):
        w = self.weight
        a = float(w.detach().abs().max())
        if a == 0:
            return w
        return quantize_tensor(w, self.scheme.weight_bits, self.scheme.weight_mode, (-a, a))


class QuantConv2d(_QuantLayer):
    def __init__(self, name, scheme, weight, bias, stride, padding, dilation, groups):
        super().__init__(name, scheme)
        self.weight = nn.Parameter(weight.detach().clone())
        self.bias = nn.Parameter(bias.detach().clone()) if bias is not None else None
        self.stride, self.padding, self.dilation, self.groups = stride, padding, dilation, groups

    def forward(self, x):
        return F.conv2d(self.quant_input(x), self.quant_weight(), self.bias,
                        self.stride, self.padding, self.dilation, self.groups)


class QuantLinear(_QuantLayer):
    def __init__(self, name, scheme, weight, bias):
        super().__init__(name, scheme)
        self.weight = nn.Parameter(weight.detach().clone())
        self.bias = nn.Parameter(bias.detach().clone()) if bias is not None else None

    def forward(self, x):
        return F.linear(self.quant_input(x), self.quant_weight(), self.bias)


def fold_bn(weight: torch.Tensor, bias: torch.Tensor | None, bn: nn.modules.batchnorm._BatchNorm):
    """Fold eval-mode BN into the preceding layer's weight and bias."""
    std = torch.sqrt(bn.running_var + bn.eps)
    gamma = bn.weight if bn.affine else torch.ones_like(std)
    beta = bn.bias if bn.affine else torch.zeros_like(std)
    factor = gamma / std
    shape = (-1,) + (1,) * (weight.dim() - 1)
    w = weight * factor.view(shape)
    b0 = bias if bias is not None else torch.zeros_like(std)
    b = beta + (b0 - bn.running_mean) * factor
    return w.detach(), b.detach()


def _quant_conv(name, scheme, conv: nn.Conv2d, bn=None):
    w, b = (fold_bn(conv.weight, conv.bias, bn) if bn is not None else (conv.weight, conv.bias))
    return QuantConv2d(name, scheme, w, b, conv.stride, conv.padding, conv.dilation, conv.groups)


def _quant_linear(name, scheme, fc: nn.Linear, bn=None):
    w, b = (fold_bn(fc.weight, fc.bias, bn) if bn is not None else (fc.weight, fc.bias))
    return QuantLinear(name, scheme, w, b)


def _convert(module: nn.Module, scheme: QuantScheme, prefix: str = "") -> nn.Module:
    if isinstance(module, ConvBN):
        return _quant_conv(prefix, scheme, module.conv, module.bn)
    if isinstance(module, LinearBN):
        return _quant_linear(prefix, scheme, module.fc, module.bn)
    if isinstance(module, nn.Conv2d):
        return _quant_conv(prefix, scheme, module)
    if isinstance(module, nn.Linear):
        return _quant_linear(prefix, scheme, module)
    if isinstance(module, nn.Sequential):
        children = list(module.named_children())
        out, i = [], 0
        while i < len(children):
            name, child = children[i]
            nxt = children[i + 1][1] if i + 1 < len(children) else None
            if isinstance(child, (nn.Conv2d, nn.Linear)) and isinstance(nxt, nn.modules.batchnorm._BatchNorm):
                full = f"{prefix}.{name}" if prefix else name
                make = _quant_conv if isinstance(child, nn.Conv2d) else _quant_linear
                out.append(make(full, scheme, child, nxt))
                i += 2
                continue
            out.append(_convert(child, scheme, f"{prefix}.{name}" if prefix else name))
            i += 1
        return nn.Sequential(*out)
    for name, child in list(module.named_children()):
        setattr(module, name, _convert(child, scheme, f"{prefix}.{name}" if prefix else name))
    return module


class QuantizedModel(nn.Module):
    """Trainable fake-quantized copy of a frozen classifier."""

    def __init__(self, net: nn.Module, scheme: QuantScheme):
        super().__init__()
        self.net = net
        self.scheme = scheme

    def quant_layers(self) -> list[_QuantLayer]:
        return [m for m in self.net.modules() if isinstance(m, _QuantLayer)]

    def act_ranges(self) -> dict[str, tuple[float, float]]:
        return {m.name: tuple(m.act_range.tolist()) for m in self.quant_layers()}

    def forward(self, x):
        return self.net(x)


def build_quantized(model: nn.Module, scheme: QuantScheme, calib_batches) -> QuantizedModel:
    """Fold, convert and calibrate a fake-quantized copy of ``model``.

    ``calib_batches`` is an iterable of input tensors (generated images).
    """
    net = copy.deepcopy(model).eval()
    net = _convert(net, scheme)
    for p in net.parameters():
        p.requires_grad_(True)
    qmodel = QuantizedModel(net, scheme)
    layers = qmodel.quant_layers()
    if not layers:
        raise ConfigError("model has no conv/linear layers to quantize")
    for layer in layers:
        layer.calibrating = True
    n = 0
    with torch.no_grad():
        for x in calib_batches:
            qmodel(x)
            n += 1
    if n == 0:
        raise CalibrationError("at least one calibration batch is required")
    for layer in layers:
        layer.freeze()
    return qmodel
