"""Edge-pruning topology training over fixed random crossbar weights, and
the conductance-tuning baseline.

Topology optimization (TO) never programs conductance: per-edge scores are
updated digitally with a straight-through rule, the bottom fraction of
scores is pruned per layer, and mask changes are applied to hardware as
reset (prune) / set (reinstate) pulses. The digital core keeps a reference
copy of each edge's last conducting weight for the score rule; reinstated
cells re-draw their conductance, and the reference is refreshed from the
fresh value.

Weight optimization (WO) is standard SGD on a digital weight copy; every
surviving update (|dw| >= T_w) is written to both cells of the pair with
the closed-loop method. "free" mode uses T_w = 0; "budget_matched" picks a
constant T_w from a digital pilot epoch so the expected number of writes
matches a given TO run's programming count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .device import (CellState, DeviceSpec, DifferentialPairBank,
                     build_complementary_bank, build_dense_bank,
                     closed_loop_write_grid, reset_pair, set_pair)
from .energy import EnergySpec, ForwardEnergyAccumulator
from .errors import (ArgumentError, ConfigError, DimensionError, NumericError,
                     StateError)
from .network import ForwardContext, LayerKind, Network
from .vmm import QuantizationSpec, weights_from_bank


def round_count(x: float) -> int:
    """Half-up rounding used for pruned-edge counts."""
    return int(math.floor(x + 0.5))


# ---------------------------------------------------------------------------
# Bookkeeping types
# ---------------------------------------------------------------------------


@dataclass
class ProgrammingCounts:
    reset_pulses: int = 0
    set_pulses: int = 0
    write_pulses: int = 0
    write_events: int = 0  # cells targeted by closed-loop write requests

    @property
    def operations(self) -> int:
        """Per-cell programming actions: one per reset/set pulse and one per
        cell-level closed-loop write request."""
        return self.reset_pulses + self.set_pulses + self.write_events


class ProgrammingLedger:
    """Monotone per-layer counters of hardware programming activity."""

    def __init__(self):
        self.per_layer: dict[str, ProgrammingCounts] = {}
        self.history: list[dict] = []

    def _get(self, layer: str) -> ProgrammingCounts:
        if layer not in self.per_layer:
            self.per_layer[layer] = ProgrammingCounts()
        return self.per_layer[layer]

    def add_reset(self, layer: str, pulses: int) -> None:
        self._get(layer).reset_pulses += pulses

    def add_set(self, layer: str, pulses: int) -> None:
        self._get(layer).set_pulses += pulses

    def add_write(self, layer: str, pulses: int, events: int) -> None:
        c = self._get(layer)
        c.write_pulses += pulses
        c.write_events += events

    def totals(self) -> ProgrammingCounts:
        t = ProgrammingCounts()
        for c in self.per_layer.values():
            t.reset_pulses += c.reset_pulses
            t.set_pulses += c.set_pulses
            t.write_pulses += c.write_pulses
            t.write_events += c.write_events
        return t

    def snapshot_epoch(self, epoch: int) -> None:
        self.history.append({
            "epoch": epoch,
            **{name: vars(c).copy() for name, c in self.per_layer.items()},
        })


@dataclass
class ReportRow:
    epoch: int
    train_acc: float
    val_acc: float
    resets: int
    sets: int
    write_pulses: int
    fwd_energy_uj: float


class TrainReport:
    """Per-epoch rows plus the programming ledger and a summary dict."""

    CSV_HEADER = "epoch,train_acc,val_acc,resets,sets,write_pulses,fwd_energy_uJ"

    def __init__(self):
        self.rows: list[ReportRow] = []
        self.ledger = ProgrammingLedger()
        self.summary: dict = {}

    def append(self, row: ReportRow) -> None:
        self.rows.append(row)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.CSV_HEADER + "\n")
            for r in self.rows:
                fh.write(f"{r.epoch},{r.train_acc:.6g},{r.val_acc:.6g},"
                         f"{r.resets},{r.sets},{r.write_pulses},"
                         f"{r.fwd_energy_uj:.6g}\n")

    def summary_json(self) -> str:
        doc = dict(self.summary)
        doc["ledger"] = {name: vars(c).copy()
                         for name, c in self.ledger.per_layer.items()}
        t = self.ledger.totals()
        doc["ledger_totals"] = vars(t).copy()
        doc["total_programming_ops"] = t.operations
        return json.dumps(doc, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Scored layers (TO state)
# ---------------------------------------------------------------------------


@dataclass
class ScoredLayer:
    """Fixed random bank + mutable per-edge scores + current binary mask."""

    name: str
    bank: DifferentialPairBank
    sparsity: float
    scores: np.ndarray = field(default=None)
    mask: np.ndarray = field(default=None)
    w_ref: np.ndarray = field(default=None)  # last conducting weight per edge

    def __post_init__(self):
        if not 0.0 <= self.sparsity < 1.0:
            raise ArgumentError("sparsity must lie in [0, 1)")
        if self.mask is None:
            self.mask = np.ones(self.bank.shape, dtype=np.uint8)

    @property
    def size(self) -> int:
        return self.bank.rows * self.bank.cols

    def prune_count(self) -> int:
        return round_count(self.sparsity * self.size)


def init_scores(layer: ScoredLayer) -> None:
    """Scores start as |weight|: the magnitude of the stored differential
    read, so low-magnitude edges of either sign are pruned first."""
    formed = ((layer.bank.g_plus.state == CellState.FORMED)
              | (layer.bank.g_minus.state == CellState.FORMED))
    if not np.any(formed):
        raise StateError(f"{layer.name}: bank has no formed cells")
    w = weights_from_bank(layer.bank, noisy=False)
    layer.scores = np.abs(w)
    layer.w_ref = w.copy()


def select_subnetwork(layer: ScoredLayer) -> np.ndarray:
    """Mask with 0 at the prune_count() smallest scores (ties resolved by
    lowest flat index), 1 elsewhere. Per layer, never global."""
    if layer.scores is None:
        raise StateError(f"{layer.name}: scores not initialized")
    k = layer.prune_count()
    mask = np.ones(layer.size, dtype=np.uint8)
    if k > 0:
        order = np.argsort(layer.scores.ravel(), kind="stable")
        mask[order[:k]] = 0
    return mask.reshape(layer.bank.shape)


def score_update(layer: ScoredLayer, node_grad, weighted_out, eta: float) -> None:
    """Straight-through score step: s <- s - eta * dL/dI_j * (w_ij * Z_i).

    The product must broadcast to the score shape; an extra leading batch
    axis is summed, so a batch equals the sum of per-sample updates.
    """
    prod = np.asarray(node_grad, dtype=np.float64) * np.asarray(
        weighted_out, dtype=np.float64)
    if prod.ndim == layer.scores.ndim + 1:
        prod = prod.sum(axis=0)
    if prod.shape != layer.scores.shape and prod.ndim != 0:
        raise DimensionError(
            f"update shape {prod.shape} does not broadcast to {layer.scores.shape}")
    layer.scores = layer.scores - eta * prod


@dataclass
class ThresholdState:
    """Decaying update threshold (TO) and the constant write threshold (WO)."""

    t_init: float = 0.0
    t_end: float = 0.0
    alpha: int = 20
    t_counter: int = 0
    current: float = None
    t_w: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError("threshold update step alpha must be > 0")
        if self.t_end > self.t_init:
            raise ConfigError("t_end must not exceed t_init")
        if self.current is None:
            self.current = self.t_init


def gate_score_update(delta_s: np.ndarray, th: ThresholdState) -> np.ndarray:
    """Pass updates with |delta| >= current threshold, zero the rest."""
    delta_s = np.asarray(delta_s, dtype=np.float64)
    if th.current == 0.0:
        return delta_s
    return np.where(np.abs(delta_s) >= th.current, delta_s, 0.0)


def decay_threshold(th: ThresholdState, new_best: bool) -> None:
    """On a new best accuracy, advance the counter and lower the threshold
    linearly from t_init to t_end over alpha steps (floored at t_end)."""
    if th.alpha <= 0:
        raise ConfigError("threshold update step alpha must be > 0")
    if new_best:
        th.t_counter += 1
        th.current = max(
            th.t_end,
            th.t_init - th.t_counter * (th.t_init - th.t_end) / th.alpha)


def sync_mask_to_hardware(layer: ScoredLayer, old_mask: np.ndarray,
                          new_mask: np.ndarray,
                          ledger: ProgrammingLedger) -> None:
    """Apply mask changes physically: 1->0 resets the pair, 0->1 sets it.

    Reinstated edges get a freshly drawn conductance; the digital reference
    weight is refreshed from it. Unchanged positions touch no hardware.
    """
    if old_mask.shape != new_mask.shape or new_mask.shape != layer.bank.shape:
        raise DimensionError("mask shape mismatch")
    changed = np.argwhere(old_mask != new_mask)
    for r, c in changed:
        if new_mask[r, c] == 0:
            ledger.add_reset(layer.name, reset_pair(layer.bank, int(r), int(c)))
        else:
            ledger.add_set(layer.name, set_pair(layer.bank, int(r), int(c)))
            layer.w_ref[r, c] = layer.bank.beta * (
                layer.bank.g_plus.conductance_us[r, c]
                - layer.bank.g_minus.conductance_us[r, c])
    layer.mask = new_mask.copy()


def check_mask_coherence(layer: ScoredLayer) -> bool:
    """Exhaustive scan: mask 1 pairs hold a Formed cell and no Off cell;
    mask 0 pairs hold an Off cell and no Formed cell."""
    sp = layer.bank.g_plus.state
    sm = layer.bank.g_minus.state
    formed_any = (sp == CellState.FORMED) | (sm == CellState.FORMED)
    off_any = (sp == CellState.OFF) | (sm == CellState.OFF)
    mask_on = layer.mask.astype(bool)
    return (bool(np.all(formed_any == mask_on))
            and bool(np.all(off_any == ~mask_on))
            and not bool(np.any(formed_any & off_any)))


# ---------------------------------------------------------------------------
# Network assembly
# ---------------------------------------------------------------------------


def assign_quantization(net: Network, bits_m: int, act_hi: float = 4.0,
                        v_read: float = 0.1) -> None:
    """Give every weighted unit an input digitization range derived from the
    preceding activation: [0,1) at the input, [0, act_hi) after ReLU, and
    [-1, 1) for tanh-fed matrices (the recurrent hidden path and anything
    downstream of the recurrent output).

    ReLU-fed units are marked for range calibration: a probe batch can later
    replace act_hi with the observed per-layer activation peak (see
    calibrate_activation_ranges), which is how the fixed DAC range of a
    mixed-signal macro is matched to each layer's signal scale.
    """
    lo, hi = 0.0, 1.0
    calibrate = False
    for layer in net.layers:
        name = type(layer).__name__
        if name in ("_ConvLayer", "_FCLayer"):
            layer.units[0].qspec = QuantizationSpec(bits_m, lo, hi, v_read)
            layer.units[0].calibrate_range = calibrate
        elif name == "_RecurrentLayer":
            layer.unit_ih.qspec = QuantizationSpec(bits_m, lo, hi, v_read)
            layer.unit_ih.calibrate_range = calibrate
            layer.unit_hh.qspec = QuantizationSpec(bits_m, -1.0, 1.0, v_read)
            layer.unit_hh.calibrate_range = False  # tanh output, exactly bounded
            lo, hi = -1.0, 1.0
            calibrate = False
        elif name == "_ReluLayer":
            lo, hi = 0.0, act_hi
            calibrate = True
        elif name == "_TanhLayer":
            lo, hi = -1.0, 1.0
            calibrate = False


def calibrate_layer_gains(net: Network, probe_x: np.ndarray,
                          target_rms: float = 0.7,
                          sign_rng: np.random.Generator | None = None) -> None:
    """Tune each bank's read-out scale (beta) so full-scale weights carry a
    healthy signal through the whole stack.

    The fan-in heuristic underestimates the attenuation of tanh chains,
    pooling, and smooth inputs, so instead each weighted layer's output RMS
    is measured on a probe batch and beta is rescaled to hit ``target_rms``.
    Complementary banks use their own stored (full-scale, two-mode) weights
    as the probe pattern; dense banks (near-zero stored differentials) use a
    random full-scale sign pattern drawn from ``sign_rng``.
    """
    x = probe_x
    for layer in net.layers:
        if not layer.units:
            x, _ = layer.forward(x, ForwardContext("digital"))
            continue
        cal = {}
        for unit in layer.units:
            w = weights_from_bank(unit.bank, noisy=False)
            full = unit.bank.beta * unit.bank.g_plus.spec.formed_mean_us
            if float(np.abs(w).mean()) < 0.3 * full:
                if sign_rng is None:
                    raise ArgumentError(
                        "dense banks need sign_rng for gain calibration")
                w = full * np.where(sign_rng.random(unit.shape) < 0.5, -1.0, 1.0)
            cal[unit.name] = w
        y, _ = layer.forward(x, ForwardContext("digital", weights=cal))
        rms = float(np.sqrt(np.mean(y * y)))
        scale = target_rms / max(rms, 1e-12)
        for unit in layer.units:
            unit.bank.beta *= scale
        # replay with the rescaled weights: exact for linear layers and
        # accounts for the tanh nonlinearity in the recurrent one
        cal = {n: w * scale for n, w in cal.items()}
        x, _ = layer.forward(x, ForwardContext("digital", weights=cal))


def calibrate_activation_ranges(net: Network, probe_x: np.ndarray,
                                headroom: float = 3.0,
                                masks: dict[str, np.ndarray] | None = None,
                                weights: dict[str, np.ndarray] | None = None) -> None:
    """Set each ReLU-fed unit's digitization range from a probe batch.

    One digital pass with the stored bank weights (or explicit ``weights``)
    records each unit's input values; the range top is the observed peak
    times ``headroom``. Saturation distorts the training signal far more
    than a coarser step does, and sub-network selection concentrates strong
    paths so activations grow severalfold over a run: callers re-run this
    between epochs (re-tuning the input scaling of the macro) to track the
    drift. ``masks`` restricts the probe to the current sub-network.
    """
    if weights is None:
        weights = {u.name: weights_from_bank(u.bank, noisy=False)
                   for u in net.units}
    if masks:
        weights = {n: w * masks[n] if n in masks else w
                   for n, w in weights.items()}
    record: dict[str, np.ndarray] = {}
    net.forward(probe_x, ForwardContext("digital", weights=weights,
                                        record=record))
    for unit in net.units:
        if unit.calibrate_range:
            q = unit.qspec
            vals = record.get(unit.name)
            hi = float(vals.max()) * headroom if vals is not None else 0.0
            unit.qspec = QuantizationSpec(q.bits_m, 0.0, max(hi, 1e-6), q.v_read)


def attach_banks(net: Network, device_spec: DeviceSpec,
                 seed: int | np.random.SeedSequence,
                 dense: bool = False, beta: float = 0.0) -> None:
    """Build one differential-pair bank per weighted unit.

    Complementary forming (default) yields the fixed random two-mode weights
    used by TO; dense forming (both arrays fully formed) is the WO substrate.
    Per-unit random streams derive from (seed, unit index).

    When ``beta`` is 0 each layer gets beta = sqrt(2/fan_in) / formed_mean:
    the digital read-out scale of the macro is set per layer so that the
    formed +-formed_mean conductance modes land at signed-kaiming weight
    magnitude and activations stay depth-composable.
    """
    root = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    children = root.spawn(len(net.units))
    for unit, child in zip(net.units, children):
        rows, cols = unit.shape
        b = beta
        if b == 0.0:
            b = math.sqrt(2.0 / rows) / device_spec.formed_mean_us
        if dense:
            unit.bank = build_dense_bank(rows, cols, device_spec, child, b)
        else:
            unit.bank = build_complementary_bank(rows, cols, device_spec, child, b)


def make_scored_layers(net: Network, sparsity: float) -> list[ScoredLayer]:
    layers = []
    for unit in net.units:
        sl = ScoredLayer(name=unit.name, bank=unit.bank, sparsity=sparsity)
        init_scores(sl)
        layers.append(sl)
    return layers


def default_thresholds(scored: list[ScoredLayer], alpha: int = 20,
                       t_init_scale: float = 0.1) -> ThresholdState:
    """t_init = t_init_scale * std of all initial scores; t_end = t_init/10."""
    allscores = np.concatenate([sl.scores.ravel() for sl in scored])
    t_init = t_init_scale * float(allscores.std())
    return ThresholdState(t_init=t_init, t_end=t_init / 10.0, alpha=alpha)


# ---------------------------------------------------------------------------
# Shared loop helpers
# ---------------------------------------------------------------------------


def _analog_accuracy(net: Network, ds, rng, batch_size: int = 200) -> float:
    if len(ds) == 0:
        return 0.0
    correct = 0
    for lo in range(0, len(ds), batch_size):
        xb = ds.x[lo:lo + batch_size]
        logits, _ = net.forward(xb, ForwardContext("analog", rng=rng))
        correct += int(np.sum(np.argmax(logits, axis=1) == ds.y[lo:lo + batch_size]))
    return correct / len(ds)


def _probe_energy_per_image(net: Network, ds, rng, espec: EnergySpec,
                            probe_n: int = 64) -> float:
    n = min(probe_n, len(ds))
    if n == 0:
        return 0.0
    acc = ForwardEnergyAccumulator(espec)
    net.forward(ds.x[:n], ForwardContext("analog", rng=rng, energy=acc))
    return acc.total_uj / n


def _check_finite(losses: np.ndarray, epoch: int) -> None:
    if not np.all(np.isfinite(losses)):
        raise NumericError(f"non-finite loss at epoch {epoch}")


# ---------------------------------------------------------------------------
# Topology optimization
# ---------------------------------------------------------------------------


def train_topology(net: Network, scored: list[ScoredLayer], train_ds, val_ds, *,
                   epochs: int, eta: float, thresholds: ThresholdState,
                   rng: np.random.Generator, batch_size: int = 50,
                   selection: str = "epoch",
                   energy_spec: EnergySpec | None = None,
                   probe_x: np.ndarray | None = None,
                   range_headroom: float = 3.0) -> TrainReport:
    """Hardware-in-the-loop edge-pruning training.

    Per selection round: re-select the sub-network from scores and sync it
    to hardware (reset/set pulses). Forward passes run through the analogue
    path (pruned pairs contribute only their off-state conductance);
    backpropagation is digital with the stored weight values; score updates
    are threshold-gated. Conductances of cells that stay Formed are never
    written. When ``probe_x`` is given, input digitization ranges are tuned
    against the current sub-network before training and re-tuned after
    every epoch (selection concentrates strong paths, so activation scales
    grow over a run).
    """
    if selection not in ("epoch", "step"):
        raise ArgumentError("selection must be 'epoch' or 'step'")
    espec = energy_spec or EnergySpec()
    report = TrainReport()
    ledger = report.ledger

    stored = {u.name: weights_from_bank(u.bank, noisy=False) for u in net.units}

    def sync_all():
        for sl in scored:
            new_mask = select_subnetwork(sl)
            sync_mask_to_hardware(sl, sl.mask, new_mask, ledger)
            stored[sl.name] = weights_from_bank(sl.bank, noisy=False)

    def recalibrate(masks):
        if probe_x is not None:
            calibrate_activation_ranges(net, probe_x, headroom=range_headroom,
                                        masks=masks)

    recalibrate({sl.name: select_subnetwork(sl) for sl in scored})
    report.append(ReportRow(
        0,
        _analog_accuracy(net, train_ds, rng),
        _analog_accuracy(net, val_ds, rng),
        0, 0, 0,
        _probe_energy_per_image(net, val_ds, rng, espec)))
    ledger.snapshot_epoch(0)

    best_val = -1.0
    for epoch in range(1, epochs + 1):
        before = ledger.totals()
        if selection == "epoch":
            sync_all()
        order = rng.permutation(len(train_ds))
        correct = 0
        for lo in range(0, len(order), batch_size):
            idx = order[lo:lo + batch_size]
            if selection == "step":
                sync_all()
            xb, yb = train_ds.x[idx], train_ds.y[idx]
            logits, caches = net.forward(xb, ForwardContext("analog", rng=rng))
            losses, probs = ops.softmax_xent_forward(logits, yb)
            _check_finite(losses, epoch)
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
            dlogits = ops.softmax_xent_backward(probs, yb) / len(idx)
            grads = net.backward(dlogits, caches, stored)
            for sl in scored:
                delta = -eta * grads[sl.name] * sl.w_ref
                sl.scores = sl.scores + gate_score_update(delta, thresholds)
        val_acc = _analog_accuracy(net, val_ds, rng)
        if val_acc > best_val:
            best_val = val_acc
            decay_threshold(thresholds, True)
        after = ledger.totals()
        report.append(ReportRow(
            epoch, correct / len(train_ds), val_acc,
            after.reset_pulses - before.reset_pulses,
            after.set_pulses - before.set_pulses,
            after.write_pulses - before.write_pulses,
            _probe_energy_per_image(net, val_ds, rng, espec)))
        ledger.snapshot_epoch(epoch)
        recalibrate({sl.name: sl.mask for sl in scored})

    report.summary = {
        "mode": "topology",
        "epochs": epochs,
        "eta": eta,
        "selection": selection,
        "sparsity": scored[0].sparsity if scored else 0.0,
        "t_init": thresholds.t_init,
        "t_end": thresholds.t_end,
        "alpha": thresholds.alpha,
        "final_threshold": thresholds.current,
        "best_val_acc": best_val if best_val >= 0 else None,
        "final_val_acc": report.rows[-1].val_acc,
        "write_pulses": ledger.totals().write_pulses,
    }
    return report


# ---------------------------------------------------------------------------
# Weight-optimization baseline
# ---------------------------------------------------------------------------


def _write_targets(w: np.ndarray, beta: float, g_mid_us: float) -> tuple:
    """Symmetric differential encoding: g+/- = g_mid +- w/(2 beta)."""
    half = w / (2.0 * beta)
    return g_mid_us + half, g_mid_us - half


def _calibrate_t_w(net: Network, w0: dict, train_ds, *, epochs: int, eta: float,
                   batch_size: int, budget: int, w_clip: dict,
                   rng: np.random.Generator) -> float:
    """Digital pilot epoch; T_w = the |dw| quantile whose expected surviving
    update count over the full run matches the budget."""
    weights = {k: v.copy() for k, v in w0.items()}
    samples = []
    order = rng.permutation(len(train_ds))
    for lo in range(0, len(order), batch_size):
        idx = order[lo:lo + batch_size]
        xb, yb = train_ds.x[idx], train_ds.y[idx]
        logits, caches = net.forward(xb, ForwardContext("digital", weights=weights))
        _, probs = ops.softmax_xent_forward(logits, yb)
        dlogits = ops.softmax_xent_backward(probs, yb) / len(idx)
        grads = net.backward(dlogits, caches, weights)
        for name in weights:
            dw = -eta * grads[name]
            samples.append(np.abs(dw).ravel())
            weights[name] = np.clip(weights[name] + dw,
                                    -w_clip[name], w_clip[name])
    flat = np.concatenate(samples)
    steps_per_epoch = math.ceil(len(train_ds) / batch_size)
    total_slots = steps_per_epoch * epochs * sum(v.size for v in w0.values())
    frac = budget / total_slots
    if frac >= 1.0:
        return 0.0
    return float(np.quantile(flat, 1.0 - frac))


def train_weights_baseline(net: Network, train_ds, val_ds, *, epochs: int,
                           eta: float, t_w: float, mode: str,
                           rng: np.random.Generator, batch_size: int = 50,
                           w_max: float = 0.9, g_mid_us: float | None = None,
                           init_scale: float = 0.5,
                           to_budget: int | None = None,
                           energy_spec: EnergySpec | None = None,
                           probe_x: np.ndarray | None = None,
                           range_headroom: float = 3.0) -> TrainReport:
    """Conductance-tuning baseline: SGD on a digital weight copy with every
    surviving update written to hardware.

    The run opens with conventional initial programming: a random weight
    init at ``init_scale`` of each layer's full scale is written into both
    arrays (symmetric differential encoding around ``g_mid_us``, so a pair
    always sums to the formed-state conductance). Each SGD update passing
    the |dw| >= T_w gate reprograms the pair toward its new targets with
    the closed-loop method; the hardware therefore trails the digital copy
    by up to the device's relative write tolerance, and the reported
    validation accuracy is measured through the noisy analogue path of the
    written state. mode "free" forces T_w = 0; "budget_matched" calibrates
    a constant T_w against ``to_budget`` with a digital pilot epoch.
    """
    if mode not in ("free", "budget_matched"):
        raise ArgumentError("mode must be 'free' or 'budget_matched'")
    espec = energy_spec or EnergySpec()
    report = TrainReport()
    ledger = report.ledger
    if g_mid_us is None:
        g_mid_us = net.units[0].bank.g_plus.spec.formed_mean_us / 2.0

    beta = {u.name: u.bank.beta for u in net.units}
    banks = {u.name: u.bank for u in net.units}
    # per-layer full-scale weight: the formed-mode magnitude at that beta
    w_clip = {u.name: w_max * u.bank.beta
              * u.bank.g_plus.spec.formed_mean_us for u in net.units}
    weights = {u.name: np.clip(
        rng.normal(0.0, init_scale * w_clip[u.name] / w_max, u.shape),
        -w_clip[u.name], w_clip[u.name]) for u in net.units}

    if mode == "free":
        t_w = 0.0
    elif to_budget is not None:
        pilot_rng = np.random.default_rng(rng.integers(2 ** 63))
        t_w = _calibrate_t_w(net, weights, train_ds, epochs=epochs, eta=eta,
                             batch_size=batch_size, budget=to_budget,
                             w_clip=w_clip, rng=pilot_rng)

    for name, bank in banks.items():
        everything = np.ones(bank.shape, dtype=bool)
        tp, tm = _write_targets(weights[name], beta[name], g_mid_us)
        rp = closed_loop_write_grid(bank.g_plus, tp, everything, min_pulses=1)
        rm = closed_loop_write_grid(bank.g_minus, tm, everything, min_pulses=1)
        ledger.add_write(name, rp.pulses + rm.pulses,
                         2 * int(everything.sum()))

    def recalibrate():
        if probe_x is not None:
            calibrate_activation_ranges(net, probe_x, headroom=range_headroom,
                                        weights=dict(weights))

    recalibrate()
    report.append(ReportRow(
        0,
        _analog_accuracy(net, train_ds, rng),
        _analog_accuracy(net, val_ds, rng),
        0, 0,
        ledger.totals().write_pulses,
        _probe_energy_per_image(net, val_ds, rng, espec)))
    ledger.snapshot_epoch(0)

    for epoch in range(1, epochs + 1):
        before = ledger.totals()
        order = rng.permutation(len(train_ds))
        correct = 0
        for lo in range(0, len(order), batch_size):
            idx = order[lo:lo + batch_size]
            xb, yb = train_ds.x[idx], train_ds.y[idx]
            logits, caches = net.forward(xb, ForwardContext("analog", rng=rng))
            losses, probs = ops.softmax_xent_forward(logits, yb)
            _check_finite(losses, epoch)
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
            dlogits = ops.softmax_xent_backward(probs, yb) / len(idx)
            grads = net.backward(dlogits, caches, weights)
            for name, bank in banks.items():
                dw = -eta * grads[name]
                if t_w > 0.0:
                    dw = np.where(np.abs(dw) >= t_w, dw, 0.0)
                selected = dw != 0.0
                if not np.any(selected):
                    continue
                weights[name] = np.clip(weights[name] + dw,
                                        -w_clip[name], w_clip[name])
                tp, tm = _write_targets(weights[name], beta[name], g_mid_us)
                rp = closed_loop_write_grid(bank.g_plus, tp, selected,
                                            min_pulses=1)
                rm = closed_loop_write_grid(bank.g_minus, tm, selected,
                                            min_pulses=1)
                ledger.add_write(name, rp.pulses + rm.pulses,
                                 2 * int(selected.sum()))
        val_acc = _analog_accuracy(net, val_ds, rng)
        after = ledger.totals()
        report.append(ReportRow(
            epoch, correct / len(train_ds), val_acc,
            after.reset_pulses - before.reset_pulses,
            after.set_pulses - before.set_pulses,
            after.write_pulses - before.write_pulses,
            _probe_energy_per_image(net, val_ds, rng, espec)))
        ledger.snapshot_epoch(epoch)
        recalibrate()

    report.summary = {
        "mode": f"weights_{mode}",
        "epochs": epochs,
        "eta": eta,
        "t_w": t_w,
        "w_max": w_max,
        "g_mid_us": g_mid_us,
        "init_scale": init_scale,
        "final_val_acc": report.rows[-1].val_acc,
        "write_events": ledger.totals().write_events,
        "write_pulses": ledger.totals().write_pulses,
    }
    return report
