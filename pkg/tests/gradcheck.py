"""Central finite differences over every entry of a ParameterSet (64-bit)."""

import numpy as np


def numeric_grads(params, loss_fn, step=1e-4):
    out = {}
    for name, t in params.tensors.items():
        g = np.zeros_like(t)
        flat = t.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = loss_fn()
            flat[i] = old - step
            down = loss_fn()
            flat[i] = old
            gf[i] = (up - down) / (2 * step)
        out[name] = g
    return out


def relative_errors(analytic, numeric, floor=1e-8):
    """Per tensor: max |a - n| / max(max |a|, max |n|).

    A tensor whose gradient is zero on both sides (below ``floor``) is
    scored by the absolute difference instead; the key-bias gradient is
    structurally zero because softmax ignores constant shifts.
    """
    errs = {}
    for name, n in numeric.items():
        a = np.asarray(analytic[name], dtype=np.float64)
        diff = float(np.max(np.abs(a - n))) if n.size else 0.0
        scale = max(float(np.max(np.abs(a))) if a.size else 0.0, float(np.max(np.abs(n))) if n.size else 0.0)
        errs[name] = diff if scale < floor else diff / scale
    return errs
