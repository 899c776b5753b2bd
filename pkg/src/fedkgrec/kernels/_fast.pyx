# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled feedback-delta kernel; bit-identical to kernels._ref."""

from libc.stdint cimport uint64_t


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * (<uint64_t> 0xBF58476D1CE4E5B9)
    z = (z ^ (z >> 27)) * (<uint64_t> 0x94D049BB133111EB)
    return z ^ (z >> 31)


def apply_feedback_deltas(
    float[::1] values,
    name_key,
    seed,
    const unsigned char[::1] labels,
    double magnitude,
):
    cdef uint64_t GOLDEN = <uint64_t> 0x9E3779B97F4A7C15
    cdef uint64_t base = _mix64((<uint64_t> name_key) ^ (<uint64_t> seed))
    cdef Py_ssize_t n = labels.shape[0]
    cdef Py_ssize_t size = values.shape[0]
    cdef float d = <float> magnitude
    cdef float step
    cdef uint64_t state, z
    cdef Py_ssize_t i, j
    if n == 0 or size == 0:
        return
    with nogil:
        for i in range(n):
            state = _mix64(base ^ ((<uint64_t> (i + 1)) * GOLDEN))
            step = d if labels[i] else -d
            for j in range(size):
                z = _mix64(state + (<uint64_t> (j + 1)) * GOLDEN)
                if z >> 63:
                    values[j] += step
                else:
                    values[j] -= step
