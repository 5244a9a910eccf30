"""Stochastic resistive-memory cell and crossbar array simulation.

Cells live in one of three states: Pristine (never electroformed, fixed
high-resistance conductance), Formed (conducting channel, conductance drawn
from a truncated normal), and Off (formed then reset, near-zero conductance).
Electroforming is a one-way Bernoulli event per cell; reset/set toggle
Formed <-> Off. No other transition is reachable.

A signed logical weight is realized by a differential pair of arrays
(g_plus, g_minus) scaled by ``beta`` (weight units per microsiemens).

All stochastic draws come from per-array seeded generators, so identical
(spec, seed, operation sequence) reproduces bitwise-identical grids.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DimensionError, StateError

# A cell counts as formed once its resistance drops below 300 kOhm.
FORMED_FLOOR_US = 3.33

# Closed-loop programming: each pulse moves conductance toward the target by
# a uniform random fraction of the remaining gap, then multiplicative noise.
WRITE_STEP_LO = 0.2
WRITE_STEP_HI = 0.6
WRITE_NOISE_CV = 0.05


class CellState(enum.IntEnum):
    PRISTINE = 0
    FORMED = 1
    OFF = 2


@dataclass
class DeviceSpec:
    """Device-level constants, all conductances in microsiemens."""

    pristine_conductance_us: float = 0.033  # 1/30 MOhm
    formed_mean_us: float = 27.2
    formed_sigma_us: float = 2.5
    off_mean_us: float = 0.07
    off_sigma_us: float = 0.02
    read_noise_cv: float = 0.03
    form_probability: float = 0.5
    write_tolerance: float = 0.10
    max_write_pulses: int = 100

    def __post_init__(self):
        if not 0.0 <= self.form_probability <= 1.0:
            raise ArgumentError("form_probability must be in [0, 1]")
        for name in ("pristine_conductance_us", "formed_mean_us",
                     "formed_sigma_us", "off_mean_us", "off_sigma_us"):
            if getattr(self, name) <= 0:
                raise ArgumentError(f"{name} must be > 0")
        if self.off_mean_us >= self.formed_mean_us:
            raise ArgumentError("off_mean_us must be below formed_mean_us")
        if self.read_noise_cv < 0 or self.write_tolerance <= 0:
            raise ArgumentError("read_noise_cv >= 0 and write_tolerance > 0 required")
        if self.max_write_pulses < 1:
            raise ArgumentError("max_write_pulses must be >= 1")


@dataclass
class FormReport:
    formed_count: int


@dataclass
class WriteResult:
    pulses: int
    converged: bool


class CrossbarArray:
    """Grid of simulated cells with per-cell state and conductance.

    Single-owner mutable: callers serialize mutating operations. Reads are
    non-destructive (the stored grid is never touched by read noise).
    """

    def __init__(self, rows: int, cols: int, spec: DeviceSpec,
                 seed: int | np.random.SeedSequence):
        if rows < 1 or cols < 1:
            raise DimensionError(f"array dimensions must be >= 1, got {rows}x{cols}")
        self.rows = rows
        self.cols = cols
        self.spec = spec
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.state = np.full((rows, cols), CellState.PRISTINE, dtype=np.uint8)
        self.conductance_us = np.full(
            (rows, cols), spec.pristine_conductance_us, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def snapshot(self) -> np.ndarray:
        """Read-only copy of the stored conductance grid."""
        return self.conductance_us.copy()


def new_array(rows: int, cols: int, spec: DeviceSpec, seed: int) -> CrossbarArray:
    return CrossbarArray(rows, cols, spec, seed)


def _truncated_normal(rng: np.random.Generator, mean: float, sigma: float,
                      lo: float, shape) -> np.ndarray:
    """Normal draw resampled until every value exceeds ``lo``."""
    out = rng.normal(mean, sigma, size=shape)
    bad = out <= lo
    while np.any(bad):
        out[bad] = rng.normal(mean, sigma, size=int(bad.sum()))
        bad = out <= lo
    return out


def electroform(array: CrossbarArray) -> FormReport:
    """Electroform a pristine array: each cell forms with spec.form_probability.

    Formed cells draw conductance from N(formed_mean, formed_sigma) truncated
    below at the forming criterion; the rest stay pristine. Raises StateError
    if any cell was already formed or reset (re-forming is not modeled).
    """
    if np.any(array.state != CellState.PRISTINE):
        raise StateError("electroform requires an all-pristine array")
    spec = array.spec
    # Full-grid draws keep the stream advance independent of the outcome.
    outcomes = array.rng.random(array.shape) < spec.form_probability
    values = _truncated_normal(array.rng, spec.formed_mean_us,
                               spec.formed_sigma_us, FORMED_FLOOR_US, array.shape)
    array.state[outcomes] = CellState.FORMED
    array.conductance_us[outcomes] = values[outcomes]
    return FormReport(formed_count=int(outcomes.sum()))


def read_conductance(array: CrossbarArray,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Noisy non-destructive read of the whole grid.

    Each cell is perturbed by an independent multiplicative factor
    (1 + eps), eps ~ N(0, read_noise_cv), clamped at zero.
    """
    cv = array.spec.read_noise_cv
    if cv == 0.0:
        return array.conductance_us.copy()
    if rng is None:
        rng = array.rng
    noise = 1.0 + rng.normal(0.0, cv, size=array.shape)
    return np.maximum(array.conductance_us * noise, 0.0)


def closed_loop_write(array: CrossbarArray, row: int, col: int,
                      target_us: float) -> WriteResult:
    """Program-and-verify one cell toward ``target_us``.

    Pulses until the relative error is within spec.write_tolerance or the
    pulse budget runs out. The final state is Formed either way. Writing a
    pristine cell is a state error: forming is the only pristine exit.
    """
    if not (0 <= row < array.rows and 0 <= col < array.cols):
        raise DimensionError(f"index ({row}, {col}) out of range for {array.shape}")
    if target_us <= 0:
        raise ArgumentError(f"write target must be > 0, got {target_us}")
    if array.state[row, col] == CellState.PRISTINE:
        raise StateError("cannot program a pristine cell; electroform first")
    spec = array.spec
    g = float(array.conductance_us[row, col])
    pulses = 0
    while abs(g - target_us) / target_us > spec.write_tolerance:
        if pulses >= spec.max_write_pulses:
            break
        frac = array.rng.uniform(WRITE_STEP_LO, WRITE_STEP_HI)
        g += frac * (target_us - g)
        g *= 1.0 + array.rng.normal(0.0, WRITE_NOISE_CV)
        g = max(g, 0.0)
        pulses += 1
    array.conductance_us[row, col] = g
    array.state[row, col] = CellState.FORMED
    converged = abs(g - target_us) / target_us <= spec.write_tolerance
    return WriteResult(pulses=pulses, converged=converged)


def closed_loop_write_grid(array: CrossbarArray, targets_us: np.ndarray,
                           select: np.ndarray,
                           min_pulses: int = 0) -> WriteResult:
    """Vectorized closed-loop write of every selected cell.

    Same pulse model as closed_loop_write but with grid-wide draws per
    iteration, so the random stream advance differs from a sequence of
    single-cell writes. ``min_pulses`` > 0 models unconditional programming:
    every selected cell is pulsed at least that many times before the
    verify-and-stop rule applies, so each write refreshes the cell's
    landing error even when it already sat inside the tolerance band.
    Returns total pulses and whether all selected cells converged.
    """
    if targets_us.shape != array.shape or select.shape != array.shape:
        raise DimensionError("targets/select must match the array shape")
    select = select.astype(bool)
    if not np.any(select):
        return WriteResult(pulses=0, converged=True)
    if np.any(targets_us[select] <= 0):
        raise ArgumentError("write targets must be > 0")
    if np.any(array.state[select] == CellState.PRISTINE):
        raise StateError("cannot program pristine cells; electroform first")
    spec = array.spec
    g = array.conductance_us
    total = 0
    budget = np.zeros(array.shape, dtype=np.int64)
    active = select & ((np.abs(g - targets_us)
                        / np.where(select, targets_us, 1.0)
                        > spec.write_tolerance)
                       | (budget < min_pulses))
    while np.any(active):
        n = int(active.sum())
        frac = array.rng.uniform(WRITE_STEP_LO, WRITE_STEP_HI, size=n)
        noise = 1.0 + array.rng.normal(0.0, WRITE_NOISE_CV, size=n)
        gv = g[active]
        tv = targets_us[active]
        gv = np.maximum((gv + frac * (tv - gv)) * noise, 0.0)
        g[active] = gv
        budget[active] += 1
        total += n
        exhausted = budget >= spec.max_write_pulses
        active = (select & ~exhausted
                  & ((np.abs(g - targets_us)
                      / np.where(select, targets_us, 1.0) > spec.write_tolerance)
                     | (budget < min_pulses)))
    array.state[select] = CellState.FORMED
    rel = np.abs(g[select] - targets_us[select]) / targets_us[select]
    return WriteResult(pulses=total, converged=bool(np.all(rel <= spec.write_tolerance)))


@dataclass
class DifferentialPairBank:
    """Paired G+/G- arrays plus a scale factor realizing signed weights.

    Logical weights are beta * (G+ - G-); beta defaults to 1/formed_mean so
    a freshly formed pair carries weight close to +-1.
    """

    g_plus: CrossbarArray
    g_minus: CrossbarArray
    beta: float = field(default=0.0)

    def __post_init__(self):
        if self.g_plus.shape != self.g_minus.shape:
            raise DimensionError(
                f"pair shape mismatch: {self.g_plus.shape} vs {self.g_minus.shape}")
        if self.beta <= 0.0:
            self.beta = 1.0 / self.g_plus.spec.formed_mean_us

    @property
    def shape(self) -> tuple[int, int]:
        return self.g_plus.shape

    @property
    def rows(self) -> int:
        return self.g_plus.rows

    @property
    def cols(self) -> int:
        return self.g_plus.cols


def form_complementary(bank: DifferentialPairBank) -> FormReport:
    """Form each g_minus cell into the complement of its g_plus partner.

    Where g_plus stayed pristine the g_minus cell is forced Formed; where
    g_plus formed, g_minus stays pristine. The resulting logical weights are
    a two-mode mixture of opposite signs.
    """
    if bank.g_plus.shape != bank.g_minus.shape:
        raise DimensionError("pair shape mismatch")
    if np.any(bank.g_minus.state != CellState.PRISTINE):
        raise StateError("g_minus must be all-pristine before complementary forming")
    plus_formed = bank.g_plus.state == CellState.FORMED
    spec = bank.g_minus.spec
    values = _truncated_normal(bank.g_minus.rng, spec.formed_mean_us,
                               spec.formed_sigma_us, FORMED_FLOOR_US,
                               bank.g_minus.shape)
    complement = ~plus_formed
    bank.g_minus.state[complement] = CellState.FORMED
    bank.g_minus.conductance_us[complement] = values[complement]
    return FormReport(formed_count=int(complement.sum()))


def _reset_cell(array: CrossbarArray, row: int, col: int) -> int:
    if array.state[row, col] != CellState.FORMED:
        return 0
    spec = array.spec
    array.conductance_us[row, col] = _truncated_normal(
        array.rng, spec.off_mean_us, spec.off_sigma_us, 0.0, 1)[0]
    array.state[row, col] = CellState.OFF
    return 1


def _set_cell(array: CrossbarArray, row: int, col: int) -> int:
    if array.state[row, col] != CellState.OFF:
        return 0
    spec = array.spec
    array.conductance_us[row, col] = _truncated_normal(
        array.rng, spec.formed_mean_us, spec.formed_sigma_us, FORMED_FLOOR_US, 1)[0]
    array.state[row, col] = CellState.FORMED
    return 1


def _check_index(bank: DifferentialPairBank, row: int, col: int):
    if not (0 <= row < bank.rows and 0 <= col < bank.cols):
        raise DimensionError(f"index ({row}, {col}) out of range for {bank.shape}")


def reset_pair(bank: DifferentialPairBank, row: int, col: int) -> int:
    """Prune a pair: every Formed cell at (row, col) goes Off.

    Off conductance is drawn fresh from the off distribution. Pristine cells
    are untouched. Returns the number of reset pulses (one per cell reset).
    """
    _check_index(bank, row, col)
    return _reset_cell(bank.g_plus, row, col) + _reset_cell(bank.g_minus, row, col)


def set_pair(bank: DifferentialPairBank, row: int, col: int) -> int:
    """Reinstate a pair: every Off cell at (row, col) returns to Formed.

    The conducting channel is re-created, so the conductance is re-drawn from
    the formed distribution rather than restored. Returns pulses applied.
    """
    _check_index(bank, row, col)
    return _set_cell(bank.g_plus, row, col) + _set_cell(bank.g_minus, row, col)


def build_complementary_bank(rows: int, cols: int, spec: DeviceSpec,
                             seed: int | np.random.SeedSequence,
                             beta: float = 0.0) -> DifferentialPairBank:
    """Electroform g_plus at the spec probability, then form the complement."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    seed_plus, seed_minus = seed.spawn(2)
    bank = DifferentialPairBank(
        g_plus=CrossbarArray(rows, cols, spec, seed_plus),
        g_minus=CrossbarArray(rows, cols, spec, seed_minus),
        beta=beta,
    )
    electroform(bank.g_plus)
    form_complementary(bank)
    return bank


def build_dense_bank(rows: int, cols: int, spec: DeviceSpec,
                     seed: int | np.random.SeedSequence,
                     beta: float = 0.0) -> DifferentialPairBank:
    """Fully electroform both arrays (every cell Formed); used for
    conductance-tuning baselines where both arrays are programmed."""
    import dataclasses

    dense_spec = dataclasses.replace(spec, form_probability=1.0)
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    seed_plus, seed_minus = seed.spawn(2)
    bank = DifferentialPairBank(
        g_plus=CrossbarArray(rows, cols, dense_spec, seed_plus),
        g_minus=CrossbarArray(rows, cols, dense_spec, seed_minus),
        beta=beta,
    )
    electroform(bank.g_plus)
    electroform(bank.g_minus)
    return bank


def export_conductance_csv(grid_us: np.ndarray, path) -> None:
    """Write a conductance grid as CSV: header line "rows,cols" then
    row-major values in microsiemens at 6 significant digits."""
    grid_us = np.asarray(grid_us, dtype=np.float64)
    if grid_us.ndim != 2:
        raise DimensionError("conductance grid must be 2-D")
    rows, cols = grid_us.shape
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{rows},{cols}\n")
        for r in range(rows):
            fh.write(",".join(f"{v:.6g}" for v in grid_us[r]) + "\n")


def load_conductance_csv(path) -> np.ndarray:
    from .errors import ParseError

    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        try:
            rows, cols = (int(t) for t in header.split(","))
        except ValueError:
            raise ParseError(f"{path}: bad header {header!r}, expected 'rows,cols'")
        grid = np.empty((rows, cols), dtype=np.float64)
        for r in range(rows):
            line = fh.readline()
            if not line:
                raise ParseError(f"{path}: truncated at data row {r} (expected {rows})")
            parts = line.strip().split(",")
            if len(parts) != cols:
                raise ParseError(f"{path}: row {r} has {len(parts)} values, expected {cols}")
            try:
                grid[r] = [float(p) for p in parts]
            except ValueError:
                raise ParseError(f"{path}: non-numeric value in row {r}")
    return grid
