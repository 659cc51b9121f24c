# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: BLAS-backed encoder passes plus fused elementwise
loops.  Must match the numpy backend (see _numpy.py) bit-for-bit on the
elementwise and integer kernels and to rounding on the BLAS ones."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND_NAME = "c"


def encode(double[:, ::1] patches, double[:, ::1] weights, bint use_tanh):
    cdef int n = patches.shape[0]
    cdef int k = patches.shape[1]
    cdef int d = weights.shape[0]
    if weights.shape[1] != k:
        raise ValueError("patch and weight widths disagree")
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] feats = out
    cdef double one = 1.0, zero = 0.0
    cdef int i, j
    # row-major feats = patches @ weights.T via column-major BLAS
    dgemm("T", "N", &d, &n, &k, &one, &weights[0, 0], &k,
          &patches[0, 0], &k, &zero, &feats[0, 0], &d)
    if use_tanh:
        for i in range(n):
            for j in range(d):
                feats[i, j] = tanh(feats[i, j])
    return out


def encode_backward(double[:, ::1] feats, double[:, ::1] weights,
                    bint use_tanh, double[:, ::1] dfeats):
    cdef int n = feats.shape[0]
    cdef int d = feats.shape[1]
    cdef int k = weights.shape[1]
    cdef double[:, ::1] dpre
    cdef int i, j
    if use_tanh:
        dpre_arr = np.empty((n, d), dtype=np.float64)
        dpre = dpre_arr
        for i in range(n):
            for j in range(d):
                dpre[i, j] = dfeats[i, j] * (1.0 - feats[i, j] * feats[i, j])
    else:
        dpre = dfeats
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] dpatches = out
    cdef double one = 1.0, zero = 0.0
    dgemm("N", "N", &k, &n, &d, &one, &weights[0, 0], &k,
          &dpre[0, 0], &d, &zero, &dpatches[0, 0], &k)
    return out


def sim_matrix(double[:, ::1] feats, double[:, ::1] units):
    cdef int n = feats.shape[0]
    cdef int d = feats.shape[1]
    cdef int c = units.shape[0]
    if units.shape[1] != d:
        raise ValueError("feature and embedding widths disagree")
    out = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] sims = out
    cdef double one = 1.0, zero = 0.0
    dgemm("T", "N", &c, &n, &d, &one, &units[0, 0], &d,
          &feats[0, 0], &d, &zero, &sims[0, 0], &c)
    cdef int i, j
    cdef double acc, norm
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += feats[i, j] * feats[i, j]
        norm = sqrt(acc)
        if norm == 0.0:
            for j in range(c):
                sims[i, j] = 0.0
        else:
            for j in range(c):
                sims[i, j] = sims[i, j] / norm
    return out


def pgd_step(double[::1] delta, double[::1] grad, double[::1] clean,
             double alpha, double eps, bint descend, mask):
    cdef Py_ssize_t m = delta.shape[0]
    out_delta_arr = np.empty(m, dtype=np.float64)
    out_adv_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out_delta = out_delta_arr
    cdef double[::1] out_adv = out_adv_arr
    cdef const unsigned char[::1] mv_mask
    cdef bint masked = mask is not None
    if masked:
        mv_mask = mask
    cdef Py_ssize_t i
    cdef double g, s, t, adv
    for i in range(m):
        g = grad[i]
        s = (g > 0.0) - (g < 0.0)
        if descend:
            t = delta[i] - alpha * s
        else:
            t = delta[i] + alpha * s
        if masked and mv_mask[i] == 0:
            t = delta[i]
        if t < -eps:
            t = -eps
        elif t > eps:
            t = eps
        adv = clean[i] + t
        if adv < 0.0:
            adv = 0.0
        elif adv > 1.0:
            adv = 1.0
        out_adv[i] = adv
        out_delta[i] = adv - clean[i]
    return out_delta_arr, out_adv_arr


def label_grid(const unsigned char[:, ::1] mask):
    cdef int h = mask.shape[0]
    cdef int w = mask.shape[1]
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef int[:, ::1] labels = labels_arr
    stack_arr = np.empty(h * w, dtype=np.int32)
    cdef int[::1] stack = stack_arr
    cdef int n = 0, top, idx, r, c, j, i
    for j in range(h):
        for i in range(w):
            if mask[j, i] != 0 and labels[j, i] == 0:
                n += 1
                labels[j, i] = n
                top = 0
                stack[top] = j * w + i
                top += 1
                while top > 0:
                    top -= 1
                    idx = stack[top]
                    r = idx // w
                    c = idx % w
                    if r > 0 and mask[r - 1, c] != 0 and labels[r - 1, c] == 0:
                        labels[r - 1, c] = n
                        stack[top] = idx - w
                        top += 1
                    if r + 1 < h and mask[r + 1, c] != 0 and labels[r + 1, c] == 0:
                        labels[r + 1, c] = n
                        stack[top] = idx + w
                        top += 1
                    if c > 0 and mask[r, c - 1] != 0 and labels[r, c - 1] == 0:
                        labels[r, c - 1] = n
                        stack[top] = idx - 1
                        top += 1
                    if c + 1 < w and mask[r, c + 1] != 0 and labels[r, c + 1] == 0:
                        labels[r, c + 1] = n
                        stack[top] = idx + 1
                        top += 1
    return labels_arr, n
