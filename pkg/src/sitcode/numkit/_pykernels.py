"""Pure numpy versions of the hot kernels.

Signatures match the compiled ``_kernels`` module exactly; ``kernels.py``
picks one of the two at import time.
"""
import numpy as np

MASK_FILL = -1e9


def masked_softmax_fwd(x, allowed):
    """Row softmax of ``x`` (B, H, I, J) restricted to ``allowed`` (Bm, Hm, I, J).

    ``Bm``/``Hm`` may be 1 (broadcast).  Forbidden entries come out as exact
    zeros.
    """
    z = np.where(allowed, x, x + x.dtype.type(MASK_FILL))
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    e = np.where(allowed, e, 0)
    return (e / e.sum(axis=-1, keepdims=True)).astype(x.dtype, copy=False)


def masked_softmax_bwd(y, g):
    return y * (g - (g * y).sum(axis=-1, keepdims=True))


def layer_norm_fwd(x, gain, bias, eps):
    """``x`` is (N, D); returns (y, xhat, rstd)."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def layer_norm_bwd(g, xhat, rstd, gain):
    """Returns (dx, dgain, dbias)."""
    d = xhat.shape[1]
    dgain = (g * xhat).sum(axis=0)
    dbias = g.sum(axis=0)
    gx = g * gain
    dx = (gx - gx.mean(axis=1, keepdims=True) - xhat * (gx * xhat).sum(axis=1, keepdims=True) / d)
    return dx * rstd[:, None], dgain, dbias
