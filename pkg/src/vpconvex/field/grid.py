"""Cell-centred Cartesian grid over a convex domain, with cut-cell data."""
from __future__ import annotations

import math
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from ..errors import GridTooCoarse
from ..geometry import ConvexDomain

# axis-aligned neighbour offsets, ordered (-x, +x, -y, +y, -z, +z)
AXIS_OFFSETS = np.array(
    [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], dtype=np.int64
)
MIN_CELLS_ACROSS = 16


def _bisect_segments(domain: ConvexDomain, a: np.ndarray, b: np.ndarray, iters: int = 60) -> np.ndarray:
    """Fraction s in (0, 1] where Phi(a + s (b - a)) changes sign; Phi(a) < 0 <= Phi(b)."""
    lo = np.zeros(len(a))
    hi = np.ones(len(a))
    d = b - a
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = domain.phi(a + mid[:, None] * d) < 0.0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


class Grid:
    """Uniform node lattice; node (i, j, k) sits at ``origin + (i, j, k) * h``.

    Nodes are cell centres of a box covering the domain's bounding box,
    padded with ``pad`` exterior layers so near-wall interpolation stencils
    always find (extrapolated) data.
    """

    def __init__(self, domain: ConvexDomain, h: float | None = None, cells: int | None = None, pad: int = 3):
        lo, hi = domain.bbox
        extent = hi - lo
        if (h is None) == (cells is None):
            raise ValueError("give exactly one of h or cells")
        if cells is not None:
            if cells <= 0:
                raise ValueError("cells must be positive")
            h = float(extent.max()) / cells
        if h <= 0:
            raise ValueError("h must be positive")
        self.domain = domain
        self.h = float(h)
        self.pad = pad
        ncore = np.ceil(extent / self.h - 1e-9).astype(np.int64)
        self.shape = tuple(int(n) + 2 * pad for n in ncore)
        mid = 0.5 * (lo + hi)
        self.origin = mid - 0.5 * (np.array(self.shape) - 1) * self.h
        if float(extent.min()) / self.h < MIN_CELLS_ACROSS:
            raise GridTooCoarse(
                f"{extent.min() / self.h:.1f} cells across the smallest extent; need >= {MIN_CELLS_ACROSS}"
            )
        self._classify()

    # -- layout ---------------------------------------------------------------
    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.h**3

    def flat(self, ijk: np.ndarray) -> np.ndarray:
        ny, nz = self.shape[1], self.shape[2]
        return (ijk[..., 0] * ny + ijk[..., 1]) * nz + ijk[..., 2]

    def unflat(self, idx: np.ndarray) -> np.ndarray:
        return np.stack(np.unravel_index(idx, self.shape), axis=-1)

    def in_bounds(self, ijk: np.ndarray) -> np.ndarray:
        return np.all((ijk >= 0) & (ijk < np.array(self.shape)), axis=-1)

    @cached_property
    def node_coords(self) -> np.ndarray:
        axes = [self.origin[d] + self.h * np.arange(self.shape[d]) for d in range(3)]
        X, Y, Z = np.meshgrid(*axes, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    # -- classification -----------------------------------------------------
    def _classify(self):
        X = self.node_coords
        inside = self.domain.phi(X) < 0.0
        mask = inside.reshape(self.shape)
        labels, nlab = ndimage.label(mask)
        if nlab != 1:
            raise GridTooCoarse(f"interior splits into {nlab} components")
        self.interior = inside
        self.interior_idx = np.flatnonzero(inside)
        self.unknown = np.full(self.size, -1, dtype=np.int64)
        self.unknown[self.interior_idx] = np.arange(len(self.interior_idx))
        ijk = self.unflat(self.interior_idx)
        # leg fractions theta in (0, 1]: 1 for interior neighbours, else the cut position
        theta = np.ones((6, len(ijk)))
        nbr = np.full((6, len(ijk)), -1, dtype=np.int64)
        for a, off in enumerate(AXIS_OFFSETS):
            nb = ijk + off
            nbf = self.flat(nb)
            ok = inside[nbf]
            nbr[a, ok] = nbf[ok]
            cut = ~ok
            if np.any(cut):
                pa = X[self.interior_idx[cut]]
                pb = X[nbf[cut]]
                theta[a, cut] = np.maximum(_bisect_segments(self.domain, pa, pb), 1e-12)
        self.theta = theta
        self.neighbors = nbr
        self.is_cut = np.any(nbr < 0, axis=0)

    @cached_property
    def fold_target(self) -> np.ndarray:
        """Nearest interior node for every node within the padding band (-1 elsewhere)."""
        mask = self.interior.reshape(self.shape)
        dist, inds = ndimage.distance_transform_edt(~mask, return_indices=True)
        tgt = self.flat(np.stack([inds[0].ravel(), inds[1].ravel(), inds[2].ravel()], axis=1))
        tgt = np.where(dist.ravel() <= self.pad, tgt, -1)
        return tgt.astype(np.int64)

    @cached_property
    def band_layers(self) -> list[np.ndarray]:
        """Exterior nodes grouped by 26-connected distance (1..pad) from the interior."""
        known = self.interior.reshape(self.shape).copy()
        layers = []
        struct = np.ones((3, 3, 3), dtype=bool)
        for _ in range(self.pad):
            grown = ndimage.binary_dilation(known, structure=struct)
            new = grown & ~known
            layers.append(np.flatnonzero(new.ravel()))
            known = grown
        return layers

    @cached_property
    def extension_matrix(self):
        """Sparse map from node values to band-extended node values.

        Each new band node averages ``2 V(g+o) - V(g+2o)`` over the 26
        directions ``o`` where both nodes are already known, falling back to
        the mean of known neighbours; layers are filled outward in order.
        """
        size = self.size
        known = self.interior.copy()
        R = sp.csr_matrix((np.ones(len(self.interior_idx)), (self.interior_idx, self.interior_idx)), shape=(size, size))
        offs = np.array([(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1) if (a, b, c) != (0, 0, 0)])
        for layer in self.band_layers:
            ijk = self.unflat(layer)
            m = len(layer)
            f1s, f2s, v1s, v2s = [], [], [], []
            for o in offs:
                n1 = ijk + o
                n2 = ijk + 2 * o
                v1 = self.in_bounds(n1)
                f1 = np.where(v1, self.flat(np.where(v1[:, None], n1, 0)), 0)
                v1 &= known[f1]
                v2 = v1 & self.in_bounds(n2)
                f2 = np.where(v2, self.flat(np.where(v2[:, None], n2, 0)), 0)
                v2 &= known[f2]
                f1s.append(f1)
                f2s.append(f2)
                v1s.append(v1)
                v2s.append(v2)
            f1s, f2s, v1s, v2s = map(np.array, (f1s, f2s, v1s, v2s))
            c1 = v1s.sum(axis=0)
            c2 = v2s.sum(axis=0)
            rows = np.broadcast_to(np.arange(m), f1s.shape)
            lin = c2 > 0
            use2 = v2s & lin[None]
            use1 = v1s & ~lin[None]
            r = np.concatenate([rows[use2], rows[use2], rows[use1]])
            c = np.concatenate([f1s[use2], f2s[use2], f1s[use1]])
            w = np.concatenate([
                np.broadcast_to(2.0 / np.maximum(c2, 1), f1s.shape)[use2],
                np.broadcast_to(-1.0 / np.maximum(c2, 1), f1s.shape)[use2],
                np.broadcast_to(1.0 / np.maximum(c1, 1), f1s.shape)[use1],
            ])
            L = sp.csr_matrix((w, (r, c)), shape=(m, size))
            scatter = sp.csr_matrix((np.ones(m), (layer, np.arange(m))), shape=(size, m))
            R = (R + scatter @ (L @ R)).tocsr()
            known[layer] = True
        self._extended_mask = known
        return R

    def extend(self, values: np.ndarray) -> np.ndarray:
        """Fill exterior band nodes of ``values`` (ncomp, size) by linear extrapolation; NaN beyond the band."""
        V = np.asarray(values, dtype=float)
        squeeze = V.ndim == 1
        V2 = np.atleast_2d(V)
        V2 = np.where(self.interior[None], V2, 0.0)
        R = self.extension_matrix
        out = np.asarray((R @ V2.T).T)
        out[:, ~self._extended_mask] = np.nan
        return out[0] if squeeze else out

    def nodal_field(self, func) -> np.ndarray:
        """Evaluate ``func`` at interior nodes; zero elsewhere."""
        out = np.zeros(self.size)
        out[self.interior_idx] = func(self.node_coords[self.interior_idx])
        return out

    def to_xfastest(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values).reshape(self.shape).ravel(order="F")

    def describe(self) -> dict:
        return {
            "dims": [int(s) for s in self.shape],
            "h": self.h,
            "origin": [float(o) for o in self.origin],
            "interior_nodes": int(len(self.interior_idx)),
            "cut_nodes": int(self.is_cut.sum()),
        }


def cells_across(domain: ConvexDomain, h: float) -> float:
    lo, hi = domain.bbox
    return float((hi - lo).min()) / h


def default_iteration_cap(n_unknowns: int) -> int:
    return max(100, int(20 * math.ceil(n_unknowns ** (1.0 / 3.0))))
