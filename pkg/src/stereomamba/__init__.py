"""Desk-scale stereo disparity estimation with state-space feature extraction."""

import os as _os

__version__ = "0.1.0"

# STEREOMAMBA_THREADS caps BLAS/OpenMP worker pools; it has to be in the
# environment before numpy loads its BLAS, hence here.
_cap = _os.environ.get("STEREOMAMBA_THREADS", "").strip()
if _cap.isdigit() and int(_cap) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        _os.environ.setdefault(_var, _cap)
