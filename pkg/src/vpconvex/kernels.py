"""Backend selection for the particle-grid kernels.

The compiled extension is used when it imports; set ``VPCONVEX_PURE_PYTHON=1``
to force the numpy fallback.  Both backends share one contract, and the
wrappers here add worker partitioning on top.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _pykernels

_compiled = None
if os.environ.get("VPCONVEX_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on build
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def get_backend(name: str | None = None):
    name = name or BACKEND
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    if name == "python":
        return _pykernels
    raise ValueError(f"unknown backend {name!r}")


def _chunks(n: int, workers: int):
    edges = np.linspace(0, n, workers + 1).astype(int)
    return [(edges[i], edges[i + 1]) for i in range(workers)]


def deposit(pos, w, origin, h, shape, fold, *, workers: int = 1, backend: str | None = None):
    """Cloud-in-cell node sums (not divided by cell volume) and the reject count.

    With several workers each gets a private grid; grids are merged in worker
    order so the result depends only on the worker count.
    """
    k = get_backend(backend)
    pos = np.ascontiguousarray(pos, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    origin = np.ascontiguousarray(origin, dtype=float)
    fold = np.ascontiguousarray(fold, dtype=np.int64)
    shape = tuple(int(s) for s in shape)
    size = int(np.prod(shape))
    if workers <= 1 or len(pos) < 2 * workers:
        out = np.zeros(size)
        nbad = k.deposit_cic(pos, w, origin, float(h), shape, fold, out)
        return out, int(nbad)
    parts = _chunks(len(pos), workers)
    grids = [np.zeros(size) for _ in parts]

    def run(i):
        a, b = parts[i]
        return k.deposit_cic(pos[a:b], w[a:b], origin, float(h), shape, fold, grids[i])

    with ThreadPoolExecutor(workers) as ex:
        bads = list(ex.map(run, range(len(parts))))
    out = grids[0]
    for g in grids[1:]:
        out += g
    return out, int(sum(bads))


def gather(pos, origin, h, shape, nodal, *, workers: int = 1, backend: str | None = None):
    """Trilinear interpolation of nodal data (ncomp, nnodes) at particle positions."""
    k = get_backend(backend)
    pos = np.ascontiguousarray(np.atleast_2d(pos), dtype=float)
    nodal = np.ascontiguousarray(nodal, dtype=float)
    origin = np.ascontiguousarray(origin, dtype=float)
    shape = tuple(int(s) for s in shape)
    out = np.empty((len(pos), nodal.shape[0]))
    if workers <= 1 or len(pos) < 2 * workers:
        nbad = k.gather_cic(pos, origin, float(h), shape, nodal, out)
        return out, int(nbad)
    parts = _chunks(len(pos), workers)

    def run(ab):
        a, b = ab
        return k.gather_cic(pos[a:b], origin, float(h), shape, nodal, out[a:b])

    with ThreadPoolExecutor(workers) as ex:
        bads = list(ex.map(run, parts))
    return out, int(sum(bads))
