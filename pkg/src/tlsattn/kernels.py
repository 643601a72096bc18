"""Kernel backend selection.

The compiled Cython core is preferred. Set ``TLSATTN_PURE_PYTHON=1`` to force
the numpy fallback (useful for debugging and for the backend benchmark).
"""

import os

from tlsattn import _pykernels

_want_pure = os.environ.get("TLSATTN_PURE_PYTHON", "") not in ("", "0")

_compiled = None
if not _want_pure:
    try:
        from tlsattn import _ckernels as _compiled
    except ImportError:
        _compiled = None

if _compiled is not None:
    BACKEND = "cython"
    _impl = _compiled
else:
    BACKEND = "python"
    _impl = _pykernels

quest_scores = _impl.quest_scores
block_max_min = _impl.block_max_min
quantize_rows = _impl.quantize_rows
int4_logits = _impl.int4_logits
top_k = _impl.top_k


def available_backends():
    """Map of backend name to kernel module, compiled first when present."""
    out = {}
    if _compiled is not None:
        out["cython"] = _compiled
    else:
        try:
            from tlsattn import _ckernels

            out["cython"] = _ckernels
        except ImportError:
            pass
    out["python"] = _pykernels
    return out
