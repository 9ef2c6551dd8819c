"""Gray-labelled 16-QAM mapping, hard-decision demapping and bit counting.

Each symbol carries four bits.  The first two select the in-phase amplitude
and the last two the quadrature amplitude, using the per-axis Gray code

    00 -> -3,  01 -> -1,  11 -> +1,  10 -> +3

scaled by ``1/sqrt(10)`` for unit average energy.  Bits are ``uint8`` arrays
of zeros and ones; every function accepts extra leading batch axes.
"""

from __future__ import annotations

import numpy as np

BITS_PER_SYMBOL = 4
SCALE = 1.0 / np.sqrt(10.0)

# amplitude index (0..3 for -3,-1,+1,+3) -> 2-bit Gray label
_AXIS_LABELS = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.uint8)
_AXIS_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0])
# 2-bit label (b0*2 + b1) -> amplitude index
_LABEL_TO_INDEX = np.array([0, 1, 3, 2])
# decision thresholds between adjacent amplitudes
_THRESHOLDS = np.array([-2.0, 0.0, 2.0]) * SCALE


def constellation() -> tuple[np.ndarray, np.ndarray]:
    """Return the 16 points and their 4-bit labels, ordered by integer label.

    Returns
    -------
    points : ndarray, shape (16,)
    labels : ndarray, shape (16, 4)
    """
    labels = ((np.arange(16)[:, None] >> np.arange(3, -1, -1)) & 1).astype(np.uint8)
    return modulate(labels.reshape(-1), 16), labels


def _check_bits(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise ValueError("bits must be 0 or 1")
    return bits.astype(np.uint8)


def modulate(bits, U: int) -> np.ndarray:
    """Map ``4*U`` bits (per leading index) to ``U`` 16-QAM symbols."""
    bits = _check_bits(bits)
    if bits.shape[-1] != BITS_PER_SYMBOL * U:
        raise ValueError(f"expected {BITS_PER_SYMBOL * U} bits, got {bits.shape[-1]}")
    groups = bits.reshape(*bits.shape[:-1], U, BITS_PER_SYMBOL).astype(np.intp)
    i_idx = _LABEL_TO_INDEX[2 * groups[..., 0] + groups[..., 1]]
    q_idx = _LABEL_TO_INDEX[2 * groups[..., 2] + groups[..., 3]]
    return (_AXIS_LEVELS[i_idx] + 1j * _AXIS_LEVELS[q_idx]) * SCALE


def _axis_index(v: np.ndarray) -> np.ndarray:
    # side="left" sends a value sitting on a threshold to the lower amplitude
    return np.searchsorted(_THRESHOLDS, v, side="left")


def demodulate(s_hat) -> np.ndarray:
    """Nearest-point hard decision; returns ``4*U`` bits per leading index.

    Ties go to the point with the smaller real part, then the smaller
    imaginary part.  The grid is separable, so the per-axis decision with
    thresholds rounding down is the Euclidean nearest point.
    """
    s_hat = np.asarray(s_hat, dtype=np.complex128)
    if not np.all(np.isfinite(s_hat)):
        raise ValueError("cannot demodulate non-finite samples")
    i_bits = _AXIS_LABELS[_axis_index(s_hat.real)]
    q_bits = _AXIS_LABELS[_axis_index(s_hat.imag)]
    out = np.concatenate([i_bits, q_bits], axis=-1)
    return out.reshape(*s_hat.shape[:-1], BITS_PER_SYMBOL * s_hat.shape[-1])


def count_bit_errors(tx, rx) -> int:
    """Hamming distance between two equal-length bit blocks."""
    tx = _check_bits(tx)
    rx = _check_bits(rx)
    if tx.shape != rx.shape:
        raise ValueError(f"bit blocks differ in shape: {tx.shape} vs {rx.shape}")
    return int(np.count_nonzero(tx != rx))


def random_bits(rng: np.random.Generator, U: int) -> np.ndarray:
    return rng.integers(0, 2, size=BITS_PER_SYMBOL * U, dtype=np.uint8)
