"""Pure-numpy kernel implementations (fallback backend).

Signature-compatible with the compiled extension.  Conventions shared by
both backends:

  * qubit 0 is the least-significant bit of the amplitude index;
  * a Pauli string is the (x_mask, z_mask) pair with per-qubit letters
    I=(0,0), X=(1,0), Z=(0,1), Y=(1,1), i.e. P = i^{|x&z|} X^x Z^z;
  * expectation of P on |psi>:
        <P> = i^{|x&z|} * sum_j (-1)^{|j&z|} psi_j conj(psi_{j^x}).

The all-strings fourth-power sum uses, per x-mask, a Walsh-Hadamard
transform over z (O(n 4^n) total instead of O(8^n)).
"""
from __future__ import annotations

import numpy as np


def apply_1q(amps: np.ndarray, qubit: int, u: np.ndarray) -> None:
    """Apply a 2x2 unitary to ``qubit``, in place."""
    v = amps.reshape(-1, 2, 1 << qubit)
    a0 = v[:, 0, :].copy()
    a1 = v[:, 1, :].copy()
    v[:, 0, :] = u[0, 0] * a0 + u[0, 1] * a1
    v[:, 1, :] = u[1, 0] * a0 + u[1, 1] * a1


def apply_cnot(amps: np.ndarray, control: int, target: int) -> None:
    """Swap amplitude pairs with control bit set, in place."""
    idx = np.arange(amps.size)
    i0 = idx[((idx >> control) & 1 == 1) & ((idx >> target) & 1 == 0)]
    i1 = i0 | (1 << target)
    tmp = amps[i0].copy()
    amps[i0] = amps[i1]
    amps[i1] = tmp


def _parity_table(n_amps: int) -> np.ndarray:
    """parity[i] = popcount(i) mod 2 for i in [0, n_amps)."""
    return (np.bitwise_count(np.arange(n_amps, dtype=np.uint64)) & 1).astype(np.uint8)


def pauli_expectation(amps: np.ndarray, x_mask: int, z_mask: int) -> complex:
    """<psi|P|psi> as a complex number (imaginary part is roundoff)."""
    idx = np.arange(amps.size)
    signs = 1.0 - 2.0 * _parity_table(amps.size)[idx & z_mask]
    s = np.sum(amps * np.conj(amps[idx ^ x_mask]) * signs)
    phase = 1j ** (int(np.bitwise_count(np.uint64(x_mask & z_mask))) % 4)
    return complex(phase * s)


def _wht_rows(m: np.ndarray) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform of each row: W[z] = sum_j (-1)^{|j&z|} v[j]."""
    rows, n_amps = m.shape
    h = 1
    while h < n_amps:
        m = m.reshape(rows, -1, 2, h)
        s = m[:, :, 0, :] + m[:, :, 1, :]
        d = m[:, :, 0, :] - m[:, :, 1, :]
        m = np.stack((s, d), axis=2).reshape(rows, n_amps)
        h *= 2
    return m


def pauli_fourth_power_sum(amps: np.ndarray) -> float:
    """sum over all 4^n Pauli strings of <psi|P|psi>^4.

    For fixed x, W_x[z] = WHT(psi_j conj(psi_{j^x}))[z] and <P(x,z)> equals
    the real part of i^{|x&z|} W_x[z]; the fourth power makes the sign of
    the selected component irrelevant.
    """
    n_amps = amps.size
    idx = np.arange(n_amps)
    ptab = _parity_table(n_amps)
    conj = np.conj(amps)
    # Chunk x-masks so scratch stays around a million elements.
    chunk = max(1, min(n_amps, (1 << 20) // n_amps))
    total = 0.0
    for x0 in range(0, n_amps, chunk):
        xs = idx[x0 : x0 + chunk, None]
        w = _wht_rows(amps[None, :] * conj[xs ^ idx[None, :]])
        odd = ptab[xs & idx[None, :]].astype(bool)
        vals = np.where(odd, w.imag, w.real)
        total += float(np.sum(vals**4))
    return total
