"""Numpy implementations of the particle-grid kernels (same contract as ``_ckernels``)."""
import numpy as np


def _corners(pos, origin, h, shape):
    s = (pos - origin) / h
    i0 = np.floor(s).astype(np.int64)
    f = s - i0
    shape = np.asarray(shape, dtype=np.int64)
    bad = np.any(i0 < 0, axis=1) | np.any(i0 + 1 >= shape, axis=1)
    i0 = np.where(bad[:, None], 0, i0)
    ny, nz = shape[1], shape[2]
    nodes, weights = [], []
    for di in (0, 1):
        wx = f[:, 0] if di else 1.0 - f[:, 0]
        for dj in (0, 1):
            wy = f[:, 1] if dj else 1.0 - f[:, 1]
            for dk in (0, 1):
                wz = f[:, 2] if dk else 1.0 - f[:, 2]
                nodes.append(((i0[:, 0] + di) * ny + (i0[:, 1] + dj)) * nz + (i0[:, 2] + dk))
                weights.append(wx * wy * wz)
    return np.stack(nodes, axis=1), np.stack(weights, axis=1), bad


def deposit_cic(pos, w, origin, h, shape, fold, out):
    nodes, wts, bad = _corners(pos, origin, h, shape)
    tgt = fold[nodes]
    cw = wts * w[:, None]
    bad = bad | np.any((tgt < 0) & (cw != 0.0), axis=1)
    keep = ~bad
    tgt = tgt[keep].ravel()
    cw = cw[keep].ravel()
    nz = cw != 0.0
    out += np.bincount(tgt[nz], weights=cw[nz], minlength=out.size)
    return int(bad.sum())


def gather_cic(pos, origin, h, shape, nodal, out):
    nodes, wts, bad = _corners(pos, origin, h, shape)
    vals = nodal[:, nodes]  # (ncomp, N, 8)
    # zero weights must not propagate NaN from unused corners
    contrib = np.where(wts[None] != 0.0, vals * wts[None], 0.0)
    res = contrib.sum(axis=2).T
    res[bad] = np.nan
    out[...] = res
    return int((bad | np.any(np.isnan(res), axis=1)).sum())
