"""Coupled flow matching at desk scale.

A kernelized Gromov-Wasserstein solver couples data with low-dimensional
embeddings; a dual-conditional flow-matching network then turns that
coupling into samplers for p(y | x) and p(x | y).
"""

import os as _os

# Must run before numpy is imported anywhere in the package.
_threads = _os.environ.get("CPFM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import CPFMError, NumericalError, ValidationError  # noqa: E402

__version__ = "0.1.0"
__all__ = ["CPFMError", "NumericalError", "ValidationError", "__version__"]
