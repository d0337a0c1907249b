"""Kernel backend selection: compiled extension if available, numpy otherwise.

Set ``MICROLOC_PURE_PYTHON=1`` to force the pure-Python kernels.
"""

from __future__ import annotations

import os

if os.environ.get("MICROLOC_PURE_PYTHON") == "1":
    from . import _kernels_py as kernels

    COMPILED = False
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        from . import _kernels_py as kernels  # type: ignore[no-redef]

        COMPILED = False

greedy_select = kernels.greedy_select
radon_gather = kernels.radon_gather
radon_matrix_block = kernels.radon_matrix_block
