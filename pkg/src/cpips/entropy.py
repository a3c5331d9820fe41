"""Quantization, the learned factorized latent density, rate loss, and
integer symbol tables for the range coder."""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import rangecoder
from .errors import ContractError, RangeCoderError, SymbolOutOfSupportError

LIKELIHOOD_FLOOR = 1e-9
MIN_PROB_LOG2 = -15
MAX_SYMBOLS = 4096


def quantize(y, mode="infer", generator=None):
    """``train``: add uniform noise in (-0.5, 0.5); ``infer``: round half away from zero."""
    if mode == "train":
        u = torch.rand(y.shape, generator=generator, dtype=y.dtype, device=y.device)
        noise = (u - 0.5).clamp(-0.5 + 2 ** -20, 0.5 - 2 ** -20)
        return y + noise
    if mode == "infer":
        return torch.sign(y) * torch.floor(torch.abs(y) + 0.5)
    if mode == "ste":
        return y + (quantize(y, "infer") - y).detach()
    raise ContractError(f"unknown quantization mode {mode!r}")


class FactorizedDensity(nn.Module):
    """Per-channel learned CDF: a stack of monotone affine + tanh-gated stages.

    c(x) = sigmoid(g_K(...g_1(x))), where g_i(x) = softplus(H_i) x + b_i, followed
    by x + tanh(a_i) tanh(x) on all but the last stage. softplus keeps every
    matrix positive and tanh(a_i) >= -1, so c is nondecreasing for any parameter
    values.
    """

    def __init__(self, channels, filters=(3, 3, 3), init_scale=10.0, tail_mass=1e-6):
        super().__init__()
        if not 0 < tail_mass <= 0.01:
            raise ContractError("tail_mass must lie in (0, 0.01]")
        self.channels = channels
        self.tail_mass = tail_mass
        dims = (1,) + tuple(filters) + (1,)
        self.n_stages = len(dims) - 1
        scale = init_scale ** (1.0 / self.n_stages)
        g = torch.Generator().manual_seed(0)
        for i in range(self.n_stages):
            init = math.log(math.expm1(1.0 / scale / dims[i + 1]))
            self.register_parameter(
                f"H{i}", nn.Parameter(torch.full((channels, dims[i + 1], dims[i]), init)))
            self.register_parameter(
                f"b{i}", nn.Parameter(torch.rand(channels, dims[i + 1], 1, generator=g) - 0.5))
            if i < self.n_stages - 1:
                self.register_parameter(
                    f"a{i}", nn.Parameter(torch.zeros(channels, dims[i + 1], 1)))

    def logits(self, x):
        """x: (C, 1, M) -> (C, 1, M) pre-sigmoid cumulative values."""
        for i in range(self.n_stages):
            x = torch.matmul(F.softplus(getattr(self, f"H{i}")), x) + getattr(self, f"b{i}")
            if i < self.n_stages - 1:
                x = x + torch.tanh(getattr(self, f"a{i}")) * torch.tanh(x)
        return x

    def _to_rows(self, y):
        # (..., C, H, W) -> (C, 1, M)
        if y.shape[-3] != self.channels:
            raise ContractError(f"density has {self.channels} channels, got {y.shape[-3]}")
        moved = y.movedim(-3, 0)
        return moved.reshape(self.channels, 1, -1), moved.shape

    def likelihood(self, y):
        rows, shape = self._to_rows(y)
        lower = self.logits(rows - 0.5)
        upper = self.logits(rows + 0.5)
        # Evaluate on the side of the median where sigmoid is not saturated.
        sign = -torch.sign(lower + upper).detach()
        p = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        return p.reshape(shape).movedim(0, -3)

    @torch.no_grad()
    def cdf(self, x):
        """Float64 CDF on a (C, M) numpy grid; used to derive coding tables."""
        x = torch.as_tensor(np.asarray(x, dtype=np.float64))
        params = {n: p.detach().double() for n, p in self.named_parameters()}
        x = x[:, None, :]
        for i in range(self.n_stages):
            x = torch.matmul(F.softplus(params[f"H{i}"]), x) + params[f"b{i}"]
            if i < self.n_stages - 1:
                x = x + torch.tanh(params[f"a{i}"]) * torch.tanh(x)
        return torch.sigmoid(x[:, 0, :]).numpy()


def rate_loss(y_quantized, density):
    """Total bits, sum of -log2 P(y) with P floored at ``LIKELIHOOD_FLOOR``."""
    p = density.likelihood(y_quantized)
    return -torch.log2(p.clamp_min(LIKELIHOOD_FLOOR)).sum()


# --- integer symbol tables ---------------------------------------------------


@dataclass(frozen=True)
class SymbolGrid:
    """Per-channel integer supports and quantized CDFs summing to 2**precision.

    ``cdf[c, j]`` is the cumulative count before symbol ``offsets[c] + j``;
    rows are padded with the total after ``lengths[c] + 1`` entries.
    """

    offsets: np.ndarray
    lengths: np.ndarray
    cdf: np.ndarray
    precision: int

    @property
    def channels(self):
        return len(self.offsets)

    def tobytes(self):
        return (np.int64(self.precision).tobytes() + self.offsets.astype("<i8").tobytes()
                + self.lengths.astype("<i8").tobytes() + self.cdf.astype("<i8").tobytes())

    def support(self, c):
        return int(self.offsets[c]), int(self.offsets[c] + self.lengths[c] - 1)

    def pmf(self):
        """Quantized probabilities, one (padded) row per channel."""
        return np.diff(self.cdf, axis=1) / float(1 << self.precision)

    @classmethod
    def from_pmf(cls, pmfs, offsets, precision=16):
        """Quantize float pmfs (list of 1-D arrays) to integer frequencies.

        Every symbol gets at least ``max(1, 2**(precision - 15))`` counts, the
        remainder is split proportionally with largest-remainder rounding.
        """
        if not 8 <= precision <= 16:
            raise ContractError("precision must be in [8, 16]")
        total = 1 << precision
        min_freq = max(1, total >> -MIN_PROB_LOG2)
        lengths = np.array([len(p) for p in pmfs], dtype=np.int64)
        if lengths.min() < 1 or lengths.max() * min_freq > total:
            raise ContractError("alphabet too large for the requested precision")
        cdf = np.full((len(pmfs), lengths.max() + 1), total, dtype=np.int64)
        for c, p in enumerate(pmfs):
            p = np.clip(np.asarray(p, dtype=np.float64), 0.0, None)
            p = p / p.sum() if p.sum() > 0 else np.full(len(p), 1.0 / len(p))
            budget = total - len(p) * min_freq
            scaled = p * budget
            freq = np.floor(scaled).astype(np.int64)
            short = budget - int(freq.sum())
            if short:
                order = np.argsort(-(scaled - freq), kind="stable")
                freq[order[:short]] += 1
            freq += min_freq
            cdf[c, 0] = 0
            cdf[c, 1:len(p) + 1] = np.cumsum(freq)
        return cls(np.asarray(offsets, dtype=np.int64), lengths, cdf, precision)


def _bisect_quantile(density, target, lo=-2.0 ** 15, hi=2.0 ** 15, iters=64):
    lo = np.full(density.channels, lo)
    hi = np.full(density.channels, hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = density.cdf(mid[:, None])[:, 0] < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def build_symbol_grid(density, precision=16, tail_mass=None, max_symbols=MAX_SYMBOLS):
    """Derive coding tables from a density exposing ``channels`` and ``cdf(x)``.

    The support [k_min, k_max] of each channel leaves at most ``tail_mass`` of
    probability outside; that mass is folded into the end symbols.
    """
    if not 8 <= precision <= 16:
        raise ContractError("precision must be in [8, 16]")
    tail = tail_mass if tail_mass is not None else density.tail_mass
    x_lo = _bisect_quantile(density, tail / 2)
    x_hi = _bisect_quantile(density, 1 - tail / 2)
    k_min = np.floor(x_lo + 0.5).astype(np.int64)
    k_max = np.maximum(np.ceil(x_hi - 0.5).astype(np.int64), k_min)
    too_wide = k_max - k_min + 1 > max_symbols
    if too_wide.any():
        med = np.round(_bisect_quantile(density, 0.5)).astype(np.int64)
        k_min = np.where(too_wide, np.maximum(k_min, med - max_symbols // 2), k_min)
        k_max = np.where(too_wide, k_min + max_symbols - 1, k_max)
    lengths = k_max - k_min + 1
    span = int(lengths.max())
    # Evaluate every channel on its own edge grid k - 0.5, padded to a common width.
    edges = k_min[:, None] + np.arange(span + 1)[None, :] - 0.5
    c = density.cdf(edges)
    pmfs = []
    for ch in range(density.channels):
        n = lengths[ch]
        row = c[ch, :n + 1]
        p = np.diff(row)
        p[0] += row[0]
        p[-1] += 1.0 - row[-1]
        pmfs.append(p)
    return SymbolGrid.from_pmf(pmfs, k_min, precision)


def clamp_to_support(values, grid):
    """Clamp integer latents of shape (C, ...) into the grid; returns (clamped, count)."""
    values = np.asarray(values, dtype=np.int64)
    shape = (grid.channels,) + (1,) * (values.ndim - 1)
    lo = grid.offsets.reshape(shape)
    hi = (grid.offsets + grid.lengths - 1).reshape(shape)
    clamped = np.clip(values, lo, hi)
    return clamped, int((clamped != values).sum())


def _channel_map(shape, channels):
    if shape[0] != channels:
        raise ContractError(f"symbols have {shape[0]} channels, grid has {channels}")
    per = int(np.prod(shape[1:], dtype=np.int64))
    return np.repeat(np.arange(channels, dtype=np.int64), per)


def range_encode(symbols, grid):
    """Encode integer symbols of shape (C, ...) (or 1-D for a one-channel grid)."""
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.ndim == 1 and grid.channels == 1:
        symbols = symbols[None]
    chan = _channel_map(symbols.shape, grid.channels)
    idx = symbols.reshape(-1) - grid.offsets[chan]
    bad = np.flatnonzero((idx < 0) | (idx >= grid.lengths[chan]))
    if bad.size:
        i = int(bad[0])
        raise SymbolOutOfSupportError(
            f"symbol {int(symbols.reshape(-1)[i])} at index {i} is outside channel "
            f"{int(chan[i])} support {grid.support(int(chan[i]))}")
    out = np.empty(4 * idx.size + 16, dtype=np.uint8)
    status, n = rangecoder.encode_kernel(idx, chan, grid.cdf, grid.precision, out)
    if status != rangecoder.OK:
        raise RangeCoderError("output buffer overflow", offset=n)
    return out[:n].tobytes()


def range_decode(data, grid, count):
    """Decode ``count`` symbols; ``count`` is the (C, ...) shape or, for a
    one-channel grid, a plain element count."""
    shape = (count,) if isinstance(count, (int, np.integer)) else tuple(count)
    flat_one = len(shape) == 1 and grid.channels == 1
    full = (1,) + shape if flat_one else shape
    chan = _channel_map(full, grid.channels)
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    idx = np.empty(chan.size, dtype=np.int64)
    status, pos, i = rangecoder.decode_kernel(buf, chan, grid.cdf, grid.lengths,
                                              grid.precision, idx)
    if status == rangecoder.ERR_TRUNCATED:
        raise RangeCoderError(f"payload truncated while decoding symbol {i}", offset=pos)
    if status == rangecoder.ERR_CORRUPT:
        raise RangeCoderError(f"corrupt payload at symbol {i}", offset=pos)
    if pos != buf.size:
        raise RangeCoderError("trailing bytes after coded symbols", offset=pos)
    values = idx + grid.offsets[chan]
    return values.reshape(shape)


def ideal_bits(symbols, grid):
    """Sum of -log2 p under the quantized tables (the coder's target length)."""
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.ndim == 1 and grid.channels == 1:
        symbols = symbols[None]
    chan = _channel_map(symbols.shape, grid.channels)
    idx = symbols.reshape(-1) - grid.offsets[chan]
    freq = grid.cdf[chan, idx + 1] - grid.cdf[chan, idx]
    return float(np.sum(grid.precision - np.log2(freq)))
