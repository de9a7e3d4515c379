"""Hot-loop kernels with a compiled implementation and a numpy fallback.

The compiled extension is used when it imports; set ``COSCA_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation.
"""
import os

import numpy as np

from . import _pairs_py

BACKEND = "python"
_impl = _pairs_py.pair_loss
_compiled = None

if os.environ.get("COSCA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _pairs as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled.pair_loss
        BACKEND = "compiled"


def pair_loss(fa, fb, ia, ib, same, margin, with_grad=True, backend=None):
    fa = np.ascontiguousarray(fa, dtype=np.float64)
    fb = np.ascontiguousarray(fb, dtype=np.float64)
    ia = np.ascontiguousarray(ia, dtype=np.intp)
    ib = np.ascontiguousarray(ib, dtype=np.intp)
    same = np.ascontiguousarray(same, dtype=np.uint8)
    if len(ia) and (ia.min() < 0 or ia.max() >= len(fa) or ib.min() < 0 or ib.max() >= len(fb)):
        raise IndexError("pair index out of range")
    fn = _impl
    if backend == "python":
        fn = _pairs_py.pair_loss
    elif backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        fn = _compiled.pair_loss
    return fn(fa, fb, ia, ib, same, float(margin), bool(with_grad))


def available_backends():
    return ["python"] + (["compiled"] if _compiled is not None else [])
