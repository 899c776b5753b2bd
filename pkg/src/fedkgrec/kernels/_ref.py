"""Pure-numpy reference implementation of the feedback-delta kernel.

Must stay bit-identical to the compiled version in ``_fast.pyx``: same
integer mixing, same float32 accumulation order (examples outermost,
ascending).  Any change here must be mirrored there and in the reference
sidecar implementations.
"""

from __future__ import annotations

import numpy as np

from ..seeding import GOLDEN, MASK64, mix64

_GOLDEN_U64 = np.uint64(GOLDEN)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _C1
    z = (z ^ (z >> np.uint64(27))) * _C2
    return z ^ (z >> np.uint64(31))


def apply_feedback_deltas(
    values: np.ndarray,
    name_key: int,
    seed: int,
    labels: np.ndarray,
    magnitude: float,
) -> None:
    """Add one signed Rademacher delta per (example, element), in place.

    values: contiguous float32 vector, modified in place.
    name_key: 64-bit hash of the tensor name.
    labels: uint8/bool per consumed example; truthy adds +magnitude
        deltas, falsy adds -magnitude deltas (element signs then flip per
        the per-element mixed bit).
    """
    n = len(labels)
    if n == 0 or values.size == 0:
        return
    d = np.float32(magnitude)
    idx = np.arange(1, values.size + 1, dtype=np.uint64) * _GOLDEN_U64
    base = mix64((name_key & MASK64) ^ (seed & MASK64))
    for i in range(n):
        state = mix64(base ^ (((i + 1) * GOLDEN) & MASK64))
        z = _mix64_vec(np.uint64(state) + idx)
        step = np.where((z >> np.uint64(63)).astype(bool), d, np.float32(-d))
        if not labels[i]:
            step = -step
        values += step
