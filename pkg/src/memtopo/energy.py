"""Forward-pass and programming energy models.

The analogue term integrates the stored conductance of every cell in every
driven row over all bit planes (both arrays), so pruned (off-state) cells
still contribute their small real conductance: sparsity savings emerge from
the conductance model rather than a masked shortcut. Absolute figures depend
on the configured constants; comparisons should use ratios.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .device import DifferentialPairBank
from .errors import ArgumentError, DimensionError
from .vmm import BitPlanes, QuantizationSpec


@dataclass
class EnergySpec:
    v_read: float = 0.1                      # V per driven row
    t_read_ns: float = 100.0                 # per bit-plane read
    e_reset_pj: float = 10.0                 # per reset pulse
    e_set_pj: float = 10.0                   # per set pulse
    e_write_pulse_pj: float = 10.0           # per closed-loop program pulse
    digital_overhead_pj_per_mac: float = 0.02

    def __post_init__(self):
        for name in ("v_read", "t_read_ns", "e_reset_pj", "e_set_pj",
                     "e_write_pulse_pj", "digital_overhead_pj_per_mac"):
            if getattr(self, name) < 0:
                raise ArgumentError(f"{name} must be >= 0")


def forward_energy(bank: DifferentialPairBank, bitplanes: BitPlanes,
                   spec: EnergySpec) -> float:
    """Energy (uJ) of one bit-sliced product over ``bank``.

    Analogue part: every driven row dissipates G * v_read^2 * t_read in each
    column cell of both arrays, per plane (plus the all-rows offset plane
    when the quantization range starts below zero). Digital part: a constant
    overhead per logical MAC.
    """
    rows, cols = bank.shape
    bits = bitplanes.planes.reshape(bitplanes.bits_m, -1, rows)
    n_vectors = bits.shape[1]
    g_sum_per_row = (bank.g_plus.conductance_us
                     + bank.g_minus.conductance_us).sum(axis=1)  # (rows,)
    active_rows = bits.sum(axis=(0, 1))  # total drives per row over planes+batch
    if bitplanes.lo != 0.0:
        active_rows = active_rows + n_vectors  # offset plane drives all rows
    analog_uj = float(active_rows @ g_sum_per_row) * spec.v_read ** 2 \
        * spec.t_read_ns * 1e-9
    macs = n_vectors * rows * cols
    digital_uj = macs * spec.digital_overhead_pj_per_mac * 1e-6
    return analog_uj + digital_uj


class ForwardEnergyAccumulator:
    """Collects per-layer forward energy during analogue passes."""

    def __init__(self, spec: EnergySpec):
        self.spec = spec
        self.per_layer: dict[str, float] = {}

    def add(self, name: str, bank: DifferentialPairBank, planes: BitPlanes,
            qspec: QuantizationSpec) -> None:
        uj = forward_energy(bank, planes, self.spec)
        self.per_layer[name] = self.per_layer.get(name, 0.0) + uj

    @property
    def total_uj(self) -> float:
        return sum(self.per_layer.values())


def programming_energy(ledger, spec: EnergySpec) -> dict:
    """Pulse-count energy (uJ): resets*e_reset + sets*e_set + writes*e_write.

    ``ledger`` is a ProgrammingLedger; returns per-layer and total figures.
    """
    per_layer = {}
    total = 0.0
    for name, counts in ledger.per_layer.items():
        uj = (counts.reset_pulses * spec.e_reset_pj
              + counts.set_pulses * spec.e_set_pj
              + counts.write_pulses * spec.e_write_pulse_pj) * 1e-6
        per_layer[name] = uj
        total += uj
    return {"per_layer_uj": per_layer, "total_uj": total}
