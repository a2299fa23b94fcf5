"""Desk-scale transfer-learning pipeline for code autocompletion."""

import os as _os

# The model's matmuls are small; BLAS thread fan-out costs more than it buys.
# Best-effort: only takes effect if numpy is not imported yet.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

from .util import tune_malloc as _tune_malloc

_tune_malloc()

__version__ = "0.1.0"
