from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def encoded_dim(dim: int, num_freqs: int) -> int:
    return dim * (1 + 2 * num_freqs)


def positional_encoding(x, num_freqs: int, tangent=None):
    """concat(x, sin(2^k pi x), cos(2^k pi x) for k < num_freqs).

    Blocks are ordered [x | sin_0 | cos_0 | sin_1 | cos_1 | ...], each block
    spanning all input dimensions.  With ``tangent`` (shape (..., K, dim))
    the encoded tangent is returned as well.
    """
    if num_freqs < 0:
        raise ValueError("num_freqs must be >= 0")
    x = T.as_tensor(x)
    tan = None if tangent is None else T.as_tensor(tangent)
    pieces = [x]
    dpieces = [tan]
    for k in range(num_freqs):
        scale = (2.0 ** k) * np.pi
        arg = x * scale
        s, c = T.sin(arg), T.cos(arg)
        pieces += [s, c]
        if tan is not None:
            c_e = T.reshape(c * scale, c.shape[:-1] + (1, c.shape[-1]))
            s_e = T.reshape(s * (-scale), s.shape[:-1] + (1, s.shape[-1]))
            dpieces += [tan * c_e, tan * s_e]
    out = pieces[0] if num_freqs == 0 else T.concat(pieces, axis=-1)
    if tan is None:
        return out
    dout = dpieces[0] if num_freqs == 0 else T.concat(dpieces, axis=-1)
    return out, dout


def encode_np(x: np.ndarray, num_freqs: int) -> np.ndarray:
    """Same layout as ``positional_encoding`` on plain arrays."""
    x = np.asarray(x, dtype=np.float64)
    if num_freqs == 0:
        return x.copy()
    n, d = x.shape[:-1], x.shape[-1]
    args = x[..., None, :] * (np.pi * 2.0 ** np.arange(num_freqs))[:, None]
    out = np.empty(n + (1 + 2 * num_freqs, d))
    out[..., 0, :] = x
    np.sin(args, out=out[..., 1::2, :])
    np.cos(args, out=out[..., 2::2, :])
    return out.reshape(n + ((1 + 2 * num_freqs) * d,))
