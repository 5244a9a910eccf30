"""Bit-sliced multi-bit analogue vector-matrix multiplication.

Orientation is fixed package-wide: a bank of shape (rows, cols) holds the
weight matrix W with rows = input dimension, and every product computes
y = x @ W (y_j = sum_i W_ij * x_i). ``matmul_exact`` is the dense
floating-point oracle for the same orientation.

Inputs are digitized to m unsigned bits over a half-open range [lo, hi):
plane k carries the bit of significance 2^(m-1-k). Each plane drives the
rows whose bit is 1 at v_read, column currents are taken from a fresh noisy
read of both arrays, and the plane results are recombined digitally. A
nonzero range offset ``lo`` is compensated by one extra all-rows read scaled
by lo, so with read noise disabled the output equals the exact product with
the dequantized input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .device import DifferentialPairBank, read_conductance
from .errors import ArgumentError, DimensionError


@dataclass
class QuantizationSpec:
    """Input digitization: m bits over [input_lo, input_hi)."""

    bits_m: int = 4
    input_lo: float = 0.0
    input_hi: float = 1.0
    v_read: float = 0.1

    def __post_init__(self):
        if not 1 <= self.bits_m <= 16:
            raise ArgumentError(f"bits_m must be in [1, 16], got {self.bits_m}")
        if self.input_hi <= self.input_lo:
            raise ArgumentError("quantization range must satisfy hi > lo")
        if self.v_read <= 0:
            raise ArgumentError("v_read must be > 0")

    @property
    def levels(self) -> int:
        return 1 << self.bits_m

    @property
    def lsb(self) -> float:
        return (self.input_hi - self.input_lo) / self.levels


@dataclass
class BitPlanes:
    """Binary planes of a quantized input batch.

    planes has shape (m,) + x.shape; significance[k] = 2^(m-1-k), so
    sum_k planes[k] * significance[k] recovers the integer codes and
    codes * lsb + lo is the dequantized value.
    """

    planes: np.ndarray
    significance: np.ndarray
    lsb: float
    lo: float

    @property
    def bits_m(self) -> int:
        return self.planes.shape[0]

    def codes(self) -> np.ndarray:
        return np.tensordot(self.significance, self.planes, axes=(0, 0))

    def dequantize(self) -> np.ndarray:
        return self.lo + self.codes() * self.lsb


def quantize_input(x: np.ndarray, q: QuantizationSpec) -> BitPlanes:
    """Digitize ``x`` to m-bit codes; values outside [lo, hi) are clamped."""
    x = np.asarray(x, dtype=np.float64)
    codes = np.floor((x - q.input_lo) / (q.input_hi - q.input_lo) * q.levels)
    codes = np.clip(codes, 0, q.levels - 1).astype(np.int64)
    m = q.bits_m
    planes = np.empty((m,) + x.shape, dtype=np.float64)
    for k in range(m):
        planes[k] = (codes >> (m - 1 - k)) & 1
    significance = 2.0 ** np.arange(m - 1, -1, -1)
    return BitPlanes(planes=planes, significance=significance, lsb=q.lsb,
                     lo=q.input_lo)


def matmul_exact(W: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Dense product oracle: x @ W for x of shape (rows,) or (n, rows)."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2:
        raise DimensionError("W must be 2-D")
    if x.shape[-1] != W.shape[0]:
        raise DimensionError(
            f"input length {x.shape[-1]} does not match {W.shape[0]} rows")
    return x @ W


def weights_from_bank(bank: DifferentialPairBank, noisy: bool = False,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """Logical weight matrix beta * (G+ - G-), stored or noise-perturbed."""
    if noisy:
        gp = read_conductance(bank.g_plus, rng)
        gm = read_conductance(bank.g_minus, rng)
    else:
        gp = bank.g_plus.conductance_us
        gm = bank.g_minus.conductance_us
    return bank.beta * (gp - gm)


def vmm_bit_sliced(bank: DifferentialPairBank, x: np.ndarray,
                   q: QuantizationSpec,
                   rng: np.random.Generator | None = None,
                   planes: BitPlanes | None = None) -> np.ndarray:
    """Approximate x @ W through the bit-sliced analogue path.

    ``x`` may be a single vector (rows,) or a batch (n, rows). Every bit
    plane triggers one fresh noisy read of both arrays (shared across the
    batch of one call); the plane currents are scaled by their significance,
    recombined, and rescaled by the quantization LSB. Pass ``planes`` to
    reuse an existing digitization of ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if x.shape[-1] != bank.rows:
        raise DimensionError(
            f"input length {x.shape[-1]} does not match bank rows {bank.rows}")
    if planes is None:
        planes = quantize_input(x, q)
    bits = planes.planes.reshape(planes.bits_m, -1, bank.rows)
    acc = np.zeros((bits.shape[1], bank.cols), dtype=np.float64)
    for k in range(planes.bits_m):
        g_diff = (read_conductance(bank.g_plus, rng)
                  - read_conductance(bank.g_minus, rng))
        currents = (bits[k] * q.v_read) @ g_diff  # per-column I+ - I-
        acc += planes.significance[k] * currents
    out = bank.beta * acc / q.v_read * planes.lsb
    if planes.lo != 0.0:
        # One all-rows read compensates the range offset: lo * (1 @ W).
        g_diff = (read_conductance(bank.g_plus, rng)
                  - read_conductance(bank.g_minus, rng))
        col_sums = (np.ones((1, bank.rows)) * q.v_read) @ g_diff
        out += planes.lo * bank.beta * col_sums / q.v_read
    return out[0] if single else out
