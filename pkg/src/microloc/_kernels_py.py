"""Pure-numpy fallbacks for the compiled kernels in ``_kernels.pyx``.

Selected at import by :mod:`microloc.backend` when the extension is missing
or ``MICROLOC_PURE_PYTHON=1`` is set.
"""

from __future__ import annotations

import numpy as np


def greedy_select(cands: np.ndarray, min_sep: float) -> np.ndarray:
    """Scan candidates in order, admit those >= min_sep from all admitted.

    Same cell-hash algorithm as the compiled version; python-level loop.
    """
    m, n = cands.shape
    sep2 = min_sep * min_sep
    cells: dict[tuple[int, int], list[int]] = {}
    pts = np.empty((m, n))
    admitted: list[int] = []
    na = 0
    for i in range(m):
        p = cands[i]
        cx = int(np.floor(p[0] / min_sep))
        cy = int(np.floor(p[1] / min_sep)) if n > 1 else 0
        ok = True
        for ox in range(cx - 1, cx + 2):
            for oy in range(cy - 1, cy + 2):
                bucket = cells.get((ox, oy))
                if bucket is None:
                    continue
                for j in bucket:
                    d = p - pts[j]
                    if float(d @ d) < sep2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            pts[na] = p
            cells.setdefault((cx, cy), []).append(na)
            admitted.append(i)
            na += 1
    return np.asarray(admitted, dtype=np.int64)


def radon_gather(img, ix, iy, wx, wy, dt):
    """Line integrals by bilinear gathering (vectorized over offsets/steps)."""
    vals = ((1.0 - wx) * (1.0 - wy) * img[ix, iy]
            + wx * (1.0 - wy) * img[ix + 1, iy]
            + (1.0 - wx) * wy * img[ix, iy + 1]
            + wx * wy * img[ix + 1, iy + 1])
    return vals.sum(axis=1) * dt


def radon_matrix_block(ix, iy, wx, wy, dt, npix_axis):
    """Dense (offsets x pixels) forward matrix for one angle."""
    S = ix.shape[0]
    out = np.zeros((S, npix_axis * npix_axis))
    rows = np.broadcast_to(np.arange(S)[:, None], ix.shape)
    flat = ix * npix_axis + iy
    np.add.at(out, (rows, flat), (1.0 - wx) * (1.0 - wy) * dt)
    np.add.at(out, (rows, flat + npix_axis), wx * (1.0 - wy) * dt)
    np.add.at(out, (rows, flat + 1), (1.0 - wx) * wy * dt)
    np.add.at(out, (rows, flat + npix_axis + 1), wx * wy * dt)
    return out
