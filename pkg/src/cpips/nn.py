"""Layer primitives and small modules built on top of torch autograd.

All ops accept either a single activation ``(C, H, W)`` or a batch
``(N, C, H, W)``; channel axis is always ``-3``.  Gradients come from torch's
reverse-mode engine and accumulate until :func:`zero_grad` is called.
"""

import math

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConstraintError, ContractError, DimensionError

BETA_MIN = 1e-6


def _channels(x):
    if x.dim() < 3:
        raise DimensionError(f"expected (C, H, W) or (N, C, H, W), got {tuple(x.shape)}")
    return x.shape[-3]


def conv2d(x, w, b=None, stride=1, pad=None):
    """Same-padded cross-correlation; output spatial size is ``ceil(H / stride)``."""
    k = w.shape[-1]
    if w.dim() != 4 or w.shape[-2] != k or k % 2 == 0:
        raise ContractError(f"kernel must be square and odd, got {tuple(w.shape)}")
    if stride not in (1, 2):
        raise ContractError(f"stride must be 1 or 2, got {stride}")
    if _channels(x) != w.shape[1]:
        raise DimensionError(f"input has {_channels(x)} channels, kernel expects {w.shape[1]}")
    if pad is None:
        pad = (k - 1) // 2
    return F.conv2d(x, w, b, stride=stride, padding=pad)


def deconv2d(x, w, b=None, stride=2):
    """Transposed convolution producing exactly ``stride * H`` by ``stride * W``.

    ``w`` has layout ``(C_in, C_out, k, k)``, i.e. the same tensor a stride-2
    :func:`conv2d` from ``C_out`` to ``C_in`` channels would use, which makes
    the two ops adjoint.
    """
    k = w.shape[-1]
    if w.dim() != 4 or k % 2 == 0:
        raise ContractError(f"kernel must be square and odd, got {tuple(w.shape)}")
    if _channels(x) != w.shape[0]:
        raise DimensionError(f"input has {_channels(x)} channels, kernel expects {w.shape[0]}")
    return F.conv_transpose2d(x, w, b, stride=stride, padding=(k - 1) // 2,
                              output_padding=stride - 1)


def _per_channel(v, x):
    if v.numel() == 1 or x.dim() < 3:
        return v
    if v.numel() != _channels(x):
        raise DimensionError(f"{v.numel()} per-channel values for {_channels(x)} channels")
    return v.reshape(-1, 1, 1)


def prelu(x, a):
    return torch.where(x >= 0, x, _per_channel(a, x) * x)


def gdn(x, beta, gamma, inverse=False):
    """y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2) at each site (times, if inverse)."""
    c = _channels(x)
    if beta.shape != (c,) or gamma.shape != (c, c):
        raise DimensionError(f"GDN over {c} channels got beta {tuple(beta.shape)}, "
                             f"gamma {tuple(gamma.shape)}")
    if bool((beta < BETA_MIN).any()) or bool((gamma < 0).any()):
        raise ConstraintError("GDN requires beta >= 1e-6 and gamma >= 0")
    norm = torch.sqrt(F.conv2d(x * x, gamma[:, :, None, None], beta))
    return x * norm if inverse else x / norm


def avgpool_global(x):
    _channels(x)
    return x.mean(dim=(-2, -1))


def linear(x, w, b=None):
    if x.shape[-1] != w.shape[1]:
        raise DimensionError(f"linear expects {w.shape[1]} features, got {x.shape[-1]}")
    return F.linear(x, w, b)


def softmax_cross_entropy(logits, target):
    """-log softmax(logits)[target]; batched inputs are averaged over the batch."""
    target = torch.as_tensor(target, dtype=torch.long)
    k = logits.shape[-1]
    if bool((target < 0).any()) or bool((target >= k).any()):
        raise IndexError(f"target class out of range for {k} logits")
    shifted = logits - logits.max(dim=-1, keepdim=True).values.detach()
    logz = torch.log(torch.exp(shifted).sum(dim=-1))
    picked = shifted.gather(-1, target.reshape(*shifted.shape[:-1], 1)).squeeze(-1)
    return (logz - picked).mean()


def backward(loss):
    if loss.numel() != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.backward()


def zero_grad(params):
    for p in params:
        p.grad = None


def project_constraints(module):
    """Clamp every constrained parameter back into its feasible set."""
    with torch.no_grad():
        for m in module.modules():
            if hasattr(m, "project_"):
                m.project_()
    return module


# --- modules -----------------------------------------------------------------
# Parameter attribute names (w, b, a, beta, gamma) are the tail of the canonical
# CPWT entry names, so state_dict() keys are the on-disk names verbatim.


class Conv(nn.Module):
    def __init__(self, c_in, c_out, k=3, stride=1):
        super().__init__()
        self.stride = stride
        self.w = nn.Parameter(torch.empty(c_out, c_in, k, k))
        self.b = nn.Parameter(torch.zeros(c_out))
        nn.init.kaiming_normal_(self.w, mode="fan_in", nonlinearity="leaky_relu", a=0.25)

    def forward(self, x):
        return conv2d(x, self.w, self.b, self.stride)


class Deconv(nn.Module):
    def __init__(self, c_in, c_out, k=3, stride=2):
        super().__init__()
        self.stride = stride
        self.w = nn.Parameter(torch.empty(c_in, c_out, k, k))
        self.b = nn.Parameter(torch.zeros(c_out))
        # Each output site sees about k*k*c_in/stride^2 taps.
        std = math.sqrt(2.0 / (1 + 0.25 ** 2) / (k * k * c_in / stride ** 2))
        nn.init.normal_(self.w, 0.0, std)

    def forward(self, x):
        return deconv2d(x, self.w, self.b, self.stride)


class PReLU(nn.Module):
    def __init__(self, channels, init=0.25):
        super().__init__()
        self.a = nn.Parameter(torch.full((channels,), float(init)))

    def forward(self, x):
        return prelu(x, self.a)


class GDN(nn.Module):
    def __init__(self, channels, inverse=False, gamma_init=0.1):
        super().__init__()
        self.inverse = inverse
        self.beta = nn.Parameter(torch.ones(channels))
        self.gamma = nn.Parameter(gamma_init * torch.eye(channels))

    @torch.no_grad()
    def project_(self):
        self.beta.clamp_(min=BETA_MIN)
        self.gamma.clamp_(min=0.0)

    def forward(self, x):
        return gdn(x, self.beta, self.gamma, self.inverse)


class Linear(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.w = nn.Parameter(torch.empty(c_out, c_in))
        self.b = nn.Parameter(torch.zeros(c_out))
        nn.init.normal_(self.w, 0.0, 1.0 / math.sqrt(c_in))

    def forward(self, x):
        return linear(x, self.w, self.b)
