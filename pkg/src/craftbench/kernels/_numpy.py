"""Pure numpy implementations of the hot kernels.

Reference semantics for the compiled core in _core.pyx; both backends
must agree (exactly for the elementwise/integer kernels, to rounding
for the BLAS-backed ones).
"""

import numpy as np
from scipy import ndimage

BACKEND_NAME = "numpy"

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def encode(patches, weights, use_tanh):
    """Per-token affine map, optionally squashed.

    patches: (n, k) float64, weights: (d, k) float64 -> (n, d) float64.
    """
    pre = patches @ weights.T
    if use_tanh:
        np.tanh(pre, out=pre)
    return pre


def encode_backward(feats, weights, use_tanh, dfeats):
    """Backprop d(loss)/d(features) -> d(loss)/d(patch pixels)."""
    if use_tanh:
        dpre = dfeats * (1.0 - feats * feats)
    else:
        dpre = dfeats
    return dpre @ weights


def sim_matrix(feats, units):
    """Cosine of each feature row against each unit-norm embedding row.

    Zero-norm feature rows get similarity 0 everywhere.
    """
    dots = feats @ units.T
    norms = np.sqrt(np.einsum("nd,nd->n", feats, feats))
    safe = np.where(norms > 0.0, norms, 1.0)
    out = dots / safe[:, None]
    out[norms == 0.0] = 0.0
    return out


def pgd_step(delta, grad, clean, alpha, eps, descend, mask):
    """One sign-gradient step with ball projection and pixel clamp.

    All arrays flat float64 of the same length.  mask is an optional
    uint8 array; pixels with mask == 0 keep their current delta (which
    stays exactly zero when it started at zero).  Returns (delta, adv).
    """
    step = alpha * np.sign(grad)
    if descend:
        upd = delta - step
    else:
        upd = delta + step
    if mask is not None:
        upd = np.where(mask != 0, upd, delta)
    np.clip(upd, -eps, eps, out=upd)
    adv = np.clip(clean + upd, 0.0, 1.0)
    return adv - clean, adv


def label_grid(mask):
    """4-connected labeling of a small boolean grid.

    Labels are 1..n ordered by each component's first cell in row-major
    scan order.  Returns (labels int32 array, n).
    """
    raw, n = ndimage.label(mask != 0, structure=_FOUR_CONN)
    if n == 0:
        return raw.astype(np.int32), 0
    flat = raw.ravel()
    # scipy's numbering is an implementation detail; renumber by first
    # occurrence in scan order so both backends agree exactly
    order_ids = []
    hit = set()
    for idx in np.flatnonzero(flat):
        lab = flat[idx]
        if lab not in hit:
            hit.add(lab)
            order_ids.append(lab)
            if len(order_ids) == n:
                break
    remap = np.zeros(n + 1, dtype=np.int32)
    for new, old in enumerate(order_ids, start=1):
        remap[old] = new
    return remap[raw], n
