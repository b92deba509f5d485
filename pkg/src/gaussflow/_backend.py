"""Pick the kernel implementation at import time.

``GF_BACKEND=python`` forces the numpy fallback; ``GF_BACKEND=cython`` makes a
missing extension an ImportError instead of a silent fallback.
"""

import os

from . import _pykernels

_choice = os.environ.get("GF_BACKEND", "auto").lower()

if _choice == "python":
    kernels = _pykernels
else:
    try:
        from . import _ckernels as kernels
    except ImportError:
        if _choice == "cython":
            raise
        kernels = _pykernels

NAME = "cython" if kernels is not _pykernels else "python"
