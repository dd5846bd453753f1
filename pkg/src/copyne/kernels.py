"""Kernel dispatch: the compiled extension when built, else the Python fallback.

``BACKEND`` names the implementation in use ("cython" or "python").
"""

import numpy as np

from . import _pykernels as python_kernels

try:
    from . import _ckernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

_impl = compiled_kernels if compiled_kernels is not None else python_kernels
BACKEND = "cython" if compiled_kernels is not None else "python"


def ctc_forward_backward(logp, in_lens, labels, lab_lens, blank=0):
    """Batched CTC: returns (nll per sequence, d nll / d logp).

    ``logp`` is (B, T, V) log-probabilities; ``labels`` is (B, L) padded.
    Sequences with no valid alignment get ``inf`` and a zero gradient.
    """
    return _impl.ctc_forward_backward(
        np.ascontiguousarray(logp, dtype=np.float64),
        np.ascontiguousarray(in_lens, dtype=np.int64),
        np.ascontiguousarray(np.atleast_2d(labels), dtype=np.int64),
        np.ascontiguousarray(lab_lens, dtype=np.int64),
        int(blank),
    )


def edit_distance(a, b) -> int:
    return int(_impl.edit_distance(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)))


def align_ops(a, b) -> np.ndarray:
    return _impl.align_ops(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64))
