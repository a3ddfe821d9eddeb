"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``PHONOGRAPH_PURE_PYTHON=1`` to force the fallback.
"""

import os

from phonograph import _pykernels

try:
    from phonograph import _ckernels
except ImportError:  # extension not built
    _ckernels = None

if _ckernels is not None and not os.environ.get("PHONOGRAPH_PURE_PYTHON"):
    _impl = _ckernels
    BACKEND = "cython"
else:
    _impl = _pykernels
    BACKEND = "python"

ctc_alpha_beta = _impl.ctc_alpha_beta
edit_distance = _impl.edit_distance
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward


def backends():
    """Available backend modules keyed by name, for cross-checking."""
    found = {"python": _pykernels}
    if _ckernels is not None:
        found["cython"] = _ckernels
    return found
