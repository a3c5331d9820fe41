"""Integer range coder over static per-channel CDF tables.

32-bit range, 33-bit low with a one-byte cache for carry propagation, byte
aligned output, renormalization whenever the range drops below 2**24. Integer
only; hot loops are compiled with numba. Status codes returned by the kernels
are turned into exceptions by the wrappers in :mod:`cpips.entropy`.
"""

import numpy as np
from numba import njit

TOP = 1 << 24
MASK = (1 << 32) - 1

OK = 0
ERR_OVERFLOW = 1
ERR_TRUNCATED = 2
ERR_CORRUPT = 3


@njit(cache=True)
def _shift_low(low, cache, pending, out, pos, first):
    # Emits the cached byte plus any run of 0xFF bytes once no carry can reach them.
    if low < 0xFF000000 or low > MASK:
        carry = low >> 32
        temp = cache
        while pending > 0:
            if first:
                first = False  # leading byte is always zero; never stored
            else:
                if pos >= out.shape[0]:
                    return low, cache, pending, -1, first
                out[pos] = (temp + carry) & 0xFF
                pos += 1
            temp = 0xFF
            pending -= 1
        cache = (low >> 24) & 0xFF
    pending += 1
    low = (low << 8) & MASK
    return low, cache, pending, pos, first


@njit(cache=True)
def encode_kernel(symbols, channel, cdf, precision, out):
    """Encode ``symbols[i]`` (index into row ``channel[i]`` of ``cdf``) into ``out``.

    Returns ``(status, n_bytes)``.
    """
    low = np.int64(0)
    rng = np.int64(MASK)
    cache = np.int64(0)
    pending = 1
    pos = 0
    first = True
    for i in range(symbols.shape[0]):
        c = channel[i]
        s = symbols[i]
        start = cdf[c, s]
        r = rng >> precision
        low += start * r
        rng = r * (cdf[c, s + 1] - start)
        while rng < TOP:
            rng <<= 8
            low, cache, pending, pos, first = _shift_low(low, cache, pending, out, pos, first)
            if pos < 0:
                return ERR_OVERFLOW, out.shape[0]
    for _ in range(5):
        low, cache, pending, pos, first = _shift_low(low, cache, pending, out, pos, first)
        if pos < 0:
            return ERR_OVERFLOW, out.shape[0]
    return OK, pos


@njit(cache=True)
def decode_kernel(data, channel, cdf, lengths, precision, symbols):
    """Inverse of :func:`encode_kernel`. Returns ``(status, byte_position, index)``."""
    n = data.shape[0]
    total = np.int64(1) << precision
    if n < 4:
        return ERR_TRUNCATED, n, 0
    code = np.int64(0)
    for k in range(4):
        code = (code << 8) | np.int64(data[k])
    pos = 4
    rng = np.int64(MASK)
    for i in range(symbols.shape[0]):
        c = channel[i]
        r = rng >> precision
        v = code // r
        if v >= total:
            return ERR_CORRUPT, pos, i
        lo = 0
        hi = lengths[c]
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cdf[c, mid] <= v:
                lo = mid
            else:
                hi = mid
        symbols[i] = lo
        start = cdf[c, lo]
        code -= start * r
        rng = r * (cdf[c, lo + 1] - start)
        while rng < TOP:
            if pos >= n:
                return ERR_TRUNCATED, pos, i
            code = ((code << 8) | np.int64(data[pos])) & MASK
            pos += 1
            rng <<= 8
    return OK, pos, symbols.shape[0]
