"""Hot-loop kernels with a compiled fast path and a numpy fallback.

The compiled extension is optional; both implementations are bit-identical
(asserted in tests), so the selection below only changes speed.
"""

from __future__ import annotations

from . import _ref

try:
    from . import _fast  # type: ignore[attr-defined]

    apply_feedback_deltas = _fast.apply_feedback_deltas
    BACKEND = "compiled"
except ImportError:  # extension not built
    _fast = None
    apply_feedback_deltas = _ref.apply_feedback_deltas
    BACKEND = "python"

__all__ = ["apply_feedback_deltas", "BACKEND", "_ref", "_fast"]
