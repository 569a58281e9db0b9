# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for statevector updates and Pauli-spectrum sums.

Same conventions as the numpy fallback: qubit 0 is the least-significant
amplitude-index bit; Pauli strings are (x_mask, z_mask) pairs with
P = i^{|x&z|} X^x Z^z.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline int _popcount(unsigned long long v) noexcept nogil:
    cdef int c = 0
    while v:
        v &= v - 1
        c += 1
    return c


def apply_1q(cnp.complex128_t[::1] amps, int qubit, cnp.complex128_t[:, ::1] u):
    cdef Py_ssize_t n_amps = amps.shape[0]
    cdef Py_ssize_t step = 1 << qubit
    cdef Py_ssize_t block = step << 1
    cdef Py_ssize_t base, off, i0, i1
    cdef double complex u00 = u[0, 0], u01 = u[0, 1], u10 = u[1, 0], u11 = u[1, 1]
    cdef double complex a0, a1
    with nogil:
        base = 0
        while base < n_amps:
            for off in range(step):
                i0 = base + off
                i1 = i0 + step
                a0 = amps[i0]
                a1 = amps[i1]
                amps[i0] = u00 * a0 + u01 * a1
                amps[i1] = u10 * a0 + u11 * a1
            base += block


def apply_cnot(cnp.complex128_t[::1] amps, int control, int target):
    cdef Py_ssize_t n_amps = amps.shape[0]
    cdef Py_ssize_t cbit = 1 << control
    cdef Py_ssize_t tbit = 1 << target
    cdef Py_ssize_t i, j
    cdef double complex tmp
    with nogil:
        for i in range(n_amps):
            if (i & cbit) and not (i & tbit):
                j = i | tbit
                tmp = amps[i]
                amps[i] = amps[j]
                amps[j] = tmp


def pauli_expectation(cnp.complex128_t[::1] amps, unsigned long long x_mask,
                      unsigned long long z_mask):
    cdef Py_ssize_t n_amps = amps.shape[0]
    cdef Py_ssize_t j
    cdef double complex s = 0
    with nogil:
        for j in range(n_amps):
            if _popcount(j & z_mask) & 1:
                s -= amps[j] * amps[j ^ x_mask].conjugate()
            else:
                s += amps[j] * amps[j ^ x_mask].conjugate()
    cdef int c = _popcount(x_mask & z_mask) & 3
    if c == 0:
        return complex(s)
    if c == 1:
        return complex(1j * s)
    if c == 2:
        return complex(-s)
    return complex(-1j * s)


def pauli_fourth_power_sum(cnp.complex128_t[::1] amps):
    """sum over all 4^n Pauli strings of <psi|P|psi>^4.

    Per x-mask: build w[j] = psi_j conj(psi_{j^x}), Walsh-Hadamard transform
    it in place (so w[z] = sum_j (-1)^{|j&z|} ...), then accumulate the
    parity-selected component to the fourth power.  x- and z-loops run in
    ascending order with sequential accumulation, so the result is
    bit-reproducible.
    """
    cdef Py_ssize_t n_amps = amps.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] scratch = np.empty(n_amps, dtype=np.complex128)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] parity = np.empty(n_amps, dtype=np.uint8)
    cdef cnp.complex128_t[::1] w = scratch
    cdef cnp.uint8_t[::1] par = parity
    cdef Py_ssize_t x, z, j, h, base, off, i0, i1
    cdef double complex a, b
    cdef double t, total = 0.0
    with nogil:
        for j in range(n_amps):
            par[j] = _popcount(j) & 1
        for x in range(n_amps):
            for j in range(n_amps):
                w[j] = amps[j] * amps[j ^ x].conjugate()
            h = 1
            while h < n_amps:
                base = 0
                while base < n_amps:
                    for off in range(h):
                        i0 = base + off
                        i1 = i0 + h
                        a = w[i0]
                        b = w[i1]
                        w[i0] = a + b
                        w[i1] = a - b
                    base += h << 1
                h <<= 1
            for z in range(n_amps):
                if par[x & z]:
                    t = w[z].imag
                else:
                    t = w[z].real
                total += t * t * t * t
    return total
