"""Differentiable attack objectives over token feature grids.

Every loss object exposes

    value_and_feat_grad(flat_feats) -> (value, dvalue/dfeats)

with flat_feats of shape (n_tokens, d), plus an ``active_cells``
attribute: the flat token indices the loss reads, or None when it reads
the whole grid.  Gradients are exact; together with the per-patch
encoder this gives exact pixel gradients without autodiff.
"""

import numpy as np


def _unit(v, what):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError(f"zero-norm {what}")
    return v / n


def _unit_rows(m, what):
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    n = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError(f"zero-norm {what}")
    return m / n


def _cos_and_grad(f, e):
    """cos(f, e) for unit e, and its gradient with respect to f."""
    r = np.linalg.norm(f)
    if r == 0.0:
        raise ValueError("zero-norm feature vector in cosine")
    c = float(f @ e) / r
    return c, (e - c * (f / r)) / r


def contrastive_loss(pooled, e_pos, e_negs, tau, aggregate="mean"):
    """Hinge of the pooled feature's negative-vs-positive alignment.

    max(0, agg_neg - sim_pos + tau) where sims are cosines and agg_neg
    is the mean (or max) cosine over the negative embeddings, 0 when
    there are none.
    """
    if aggregate not in ("mean", "max"):
        raise ValueError(f"unknown aggregate {aggregate!r}")
    pooled = np.asarray(pooled, dtype=np.float64)
    if np.linalg.norm(pooled) == 0.0:
        raise ValueError("zero-norm pooled feature")
    e_pos = _unit(e_pos, "positive embedding")
    sim_pos, _ = _cos_and_grad(pooled, e_pos)
    e_negs = np.asarray(e_negs, dtype=np.float64)
    if e_negs.size == 0:
        agg = 0.0
    else:
        negs = _unit_rows(e_negs, "negative embedding")
        sims = negs @ pooled / np.linalg.norm(pooled)
        agg = float(np.mean(sims) if aggregate == "mean" else np.max(sims))
    return max(0.0, agg - sim_pos + tau)


class RegionContrastiveLoss:
    """Contrastive hinge on the mean-pooled features of a cell set."""

    def __init__(self, cells, e_pos, e_negs, tau, aggregate="mean"):
        self.active_cells = np.asarray(cells, dtype=np.int64)
        if self.active_cells.size == 0:
            raise ValueError("empty cell set")
        self.e_pos = _unit(e_pos, "positive embedding")
        e_negs = np.asarray(e_negs, dtype=np.float64)
        self.e_negs = (
            _unit_rows(e_negs, "negative embedding") if e_negs.size else
            np.zeros((0, self.e_pos.size))
        )
        if aggregate not in ("mean", "max"):
            raise ValueError(f"unknown aggregate {aggregate!r}")
        self.tau = float(tau)
        self.aggregate = aggregate

    def pooled_sims(self, flat_feats):
        """(sim_pos, agg_neg) of the pooled feature; for reporting."""
        pooled = flat_feats[self.active_cells].mean(axis=0)
        sim_pos, _ = _cos_and_grad(pooled, self.e_pos)
        if not len(self.e_negs):
            return sim_pos, None
        sims = self.e_negs @ pooled / np.linalg.norm(pooled)
        agg = np.mean(sims) if self.aggregate == "mean" else np.max(sims)
        return sim_pos, float(agg)

    def value_and_feat_grad(self, flat_feats):
        cells = self.active_cells
        pooled = flat_feats[cells].mean(axis=0)
        sim_pos, dpos = _cos_and_grad(pooled, self.e_pos)
        if len(self.e_negs):
            r = np.linalg.norm(pooled)
            sims = self.e_negs @ pooled / r
            if self.aggregate == "mean":
                agg = float(np.mean(sims))
                e_agg = self.e_negs.mean(axis=0)
            else:
                winner = int(np.argmax(sims))
                agg = float(sims[winner])
                e_agg = self.e_negs[winner]
            dagg = (e_agg - agg * (pooled / r)) / r
        else:
            agg, dagg = 0.0, np.zeros_like(pooled)
        value = agg - sim_pos + self.tau
        dfeats = np.zeros_like(flat_feats)
        if value > 0.0:
            dfeats[cells] = (dagg - dpos) / cells.size
            return value, dfeats
        return 0.0, dfeats


class PooledCosineLoss:
    """Negative cosine of a pooled feature against one embedding.

    cells=None pools over the whole grid (the text-feature-match
    surrogate); a cell set gives the pooled-region variant.
    """

    def __init__(self, e_target, cells=None):
        self.e_target = _unit(e_target, "target embedding")
        self.active_cells = None if cells is None else np.asarray(cells, np.int64)

    def value_and_feat_grad(self, flat_feats):
        cells = self.active_cells
        sub = flat_feats if cells is None else flat_feats[cells]
        pooled = sub.mean(axis=0)
        c, dc = _cos_and_grad(pooled, self.e_target)
        dfeats = np.zeros_like(flat_feats)
        share = -dc / sub.shape[0]
        if cells is None:
            dfeats[:] = share
        else:
            dfeats[cells] = share
        return -c, dfeats


class FeatureMatchImageLoss:
    """Squared distance between pooled features and a target's."""

    def __init__(self, target_pooled):
        self.target_pooled = np.asarray(target_pooled, dtype=np.float64)
        self.active_cells = None

    def value_and_feat_grad(self, flat_feats):
        pooled = flat_feats.mean(axis=0)
        diff = pooled - self.target_pooled
        dfeats = np.broadcast_to(
            2.0 * diff / flat_feats.shape[0], flat_feats.shape
        ).copy()
        return float(diff @ diff), dfeats


def _token_cosines(flat_feats, e):
    norms = np.linalg.norm(flat_feats, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    sims = (flat_feats @ e) / safe
    sims[norms == 0.0] = 0.0
    return sims, norms


def _add_token_cos_grad(dfeats, flat_feats, n, e, weight):
    f = flat_feats[n]
    c, dc = _cos_and_grad(f, e)
    dfeats[n] += weight * dc


class CaptionSwapLoss:
    """Pull the best token toward the target word, push the source away.

    -max_n cos(f_n, e_target) + max_n cos(f_n, e_source), maxima over
    all tokens.
    """

    def __init__(self, e_target, e_source):
        self.e_target = _unit(e_target, "target embedding")
        self.e_source = _unit(e_source, "source embedding")
        self.active_cells = None

    def value_and_feat_grad(self, flat_feats):
        sims_t, norms = _token_cosines(flat_feats, self.e_target)
        sims_s, _ = _token_cosines(flat_feats, self.e_source)
        nt, ns = int(np.argmax(sims_t)), int(np.argmax(sims_s))
        value = -float(sims_t[nt]) + float(sims_s[ns])
        dfeats = np.zeros_like(flat_feats)
        if norms[nt] > 0.0:
            _add_token_cos_grad(dfeats, flat_feats, nt, self.e_target, -1.0)
        if norms[ns] > 0.0:
            _add_token_cos_grad(dfeats, flat_feats, ns, self.e_source, 1.0)
        return value, dfeats


class RegionSwapLoss:
    """Pooled-region push toward the target, away from the runner-up.

    -cos(pooled, e_target) + max_c cos(pooled, e_c) over the other
    categories.
    """

    def __init__(self, cells, e_target, e_others):
        self.active_cells = np.asarray(cells, dtype=np.int64)
        self.e_target = _unit(e_target, "target embedding")
        self.e_others = _unit_rows(e_others, "category embedding")

    def value_and_feat_grad(self, flat_feats):
        cells = self.active_cells
        pooled = flat_feats[cells].mean(axis=0)
        ct, dct = _cos_and_grad(pooled, self.e_target)
        r = np.linalg.norm(pooled)
        sims = self.e_others @ pooled / r
        w = int(np.argmax(sims))
        cw = float(sims[w])
        dcw = (self.e_others[w] - cw * (pooled / r)) / r
        dfeats = np.zeros_like(flat_feats)
        dfeats[cells] = (-dct + dcw) / cells.size
        return -ct + cw, dfeats


class DetectionSwapLoss:
    """Region swap plus suppression of in-box source similarities.

    Adds mean_n relu(cos(f_n, e_source) - theta) over the box cells, so
    the source map drops below the detection threshold there.
    """

    def __init__(self, cells, e_target, e_others, e_source, theta):
        self.inner = RegionSwapLoss(cells, e_target, e_others)
        self.e_source = _unit(e_source, "source embedding")
        self.theta = float(theta)
        self.active_cells = self.inner.active_cells

    def value_and_feat_grad(self, flat_feats):
        value, dfeats = self.inner.value_and_feat_grad(flat_feats)
        cells = self.active_cells
        sims_s, norms = _token_cosines(flat_feats[cells], self.e_source)
        over = sims_s - self.theta
        hot = over > 0.0
        value += float(over[hot].sum()) / cells.size
        for local in np.flatnonzero(hot & (norms > 0.0)):
            _add_token_cos_grad(
                dfeats, flat_feats, cells[local], self.e_source, 1.0 / cells.size
            )
        return value, dfeats


class LocalizeSwapLoss:
    """Concentrate target similarity inside the box, not outside.

    -mean_{n in box} cos(f_n, e_target) + max_{n outside} cos(f_n,
    e_target); the second term is dropped when the box covers the grid.
    """

    def __init__(self, cells, n_tokens, e_target):
        self.box_cells = np.asarray(cells, dtype=np.int64)
        outside = np.setdiff1d(np.arange(n_tokens), self.box_cells)
        self.outside_cells = outside
        self.e_target = _unit(e_target, "target embedding")
        self.active_cells = None

    def value_and_feat_grad(self, flat_feats):
        cells = self.box_cells
        sims_in, norms_in = _token_cosines(flat_feats[cells], self.e_target)
        value = -float(np.mean(sims_in))
        dfeats = np.zeros_like(flat_feats)
        for local in np.flatnonzero(norms_in > 0.0):
            _add_token_cos_grad(
                dfeats, flat_feats, cells[local], self.e_target, -1.0 / cells.size
            )
        if self.outside_cells.size:
            sims_out, norms_out = _token_cosines(
                flat_feats[self.outside_cells], self.e_target
            )
            w = int(np.argmax(sims_out))
            value += float(sims_out[w])
            if norms_out[w] > 0.0:
                _add_token_cos_grad(
                    dfeats, flat_feats, self.outside_cells[w], self.e_target, 1.0
                )
        return value, dfeats
