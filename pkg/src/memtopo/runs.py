"""Experiment handlers shared by the CLI and the HTTP service.

Every handler is pure with respect to (RunConfig, filesystem inputs): it
derives all randomness from the config seed, writes its artifacts under the
given output directory, and returns the summary it wrote. No timestamps go
into any output.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import ops
from .config import (STREAM_BANKS, STREAM_DATA, STREAM_EVAL, STREAM_SPLIT,
                     STREAM_TRAIN, RunConfig, child_seed)
from .device import CrossbarArray, DifferentialPairBank, export_conductance_csv
from .errors import ConfigError, MissingInputError, NumericError
from .metrics import (confusion_matrix, export_curve_csv, export_histogram_csv,
                      find_modes, histogram, roc_pr_curves)
from .network import ForwardContext, Network, NetworkSpec, build_cnn, build_crnn
from .training import (TrainReport, assign_quantization, attach_banks,
                       calibrate_activation_ranges, calibrate_layer_gains,
                       default_thresholds, make_scored_layers, train_topology,
                       train_weights_baseline, ThresholdState)
from .vmm import QuantizationSpec
from .vmm import weights_from_bank

SNAPSHOT_NAME = "snapshot.npz"


# ---------------------------------------------------------------------------
# Dataset + network assembly
# ---------------------------------------------------------------------------


def load_dataset(cfg: RunConfig):
    """Materialize the configured dataset and its deterministic split."""
    d = cfg.data
    if d.kind == "idx":
        ds = data_mod.load_idx(d.images_path, d.labels_path)
        if ds.class_count != d.classes:
            ds = data_mod.Dataset(ds.x, ds.y, d.classes, ds.name)
        if d.preprocess:
            ds = data_mod.preprocess_images(ds, d.target_hw, d.bits)
    elif d.kind == "feature_csv":
        ds = data_mod.load_feature_csv(d.csv_path)
    elif d.kind == "synth_blobs":
        gen_seed = int(child_seed(cfg.seed, STREAM_DATA).generate_state(1)[0])
        ds = data_mod.synth_blobs(d.classes, d.per_class, d.blob_shape,
                                  d.separation, gen_seed, d.noise,
                                  proto_cell=d.proto_cell)
    elif d.kind in ("synth_glyphs", "synth_counts"):
        gen_seed = int(child_seed(cfg.seed, STREAM_DATA).generate_state(1)[0])
        maker = (data_mod.synth_glyphs if d.kind == "synth_glyphs"
                 else data_mod.synth_counts)
        images, labels = maker(d.per_class, gen_seed, d.glyph_hw, d.classes)
        ds = data_mod.Dataset((images.astype(np.float64) / 255.0)[:, None],
                              labels.astype(np.int64), d.classes, d.kind)
        if d.preprocess:
            ds = data_mod.preprocess_images(ds, d.target_hw, d.bits)
    else:  # pragma: no cover
        raise ConfigError(f"unknown data kind {d.kind}")
    split_seed = int(child_seed(cfg.seed, STREAM_SPLIT).generate_state(1)[0])
    return data_mod.split(ds, d.train_n, d.val_n, d.test_n, split_seed)


def build_netspec(cfg: RunConfig, input_shape) -> NetworkSpec:
    c, h, w = input_shape
    if cfg.network.arch == "cnn":
        if h != w:
            raise ConfigError(f"cnn needs square inputs, got {h}x{w}")
        return build_cnn(cfg.network.scale, input_hw=h,
                         class_count=cfg.data.classes)
    return build_crnn(cfg.network.scale, input_hw=(h, w),
                      class_count=cfg.data.classes)


def build_network(cfg: RunConfig, input_shape, dense: bool,
                  probe_x=None) -> Network:
    """Assemble the runtime network: banks formed per mode, read-out gains
    tuned on the probe batch, digitization ranges assigned (the trainers
    re-tune ranges per epoch against the live sub-network)."""
    spec = build_netspec(cfg, input_shape)
    net = Network(spec)
    bits = cfg.quant.resolve_bits(cfg.network.arch)
    assign_quantization(net, bits, cfg.quant.act_hi, cfg.quant.v_read)
    attach_banks(net, cfg.device.to_spec(), child_seed(cfg.seed, STREAM_BANKS),
                 dense=dense)
    if probe_x is not None:
        sign_rng = np.random.default_rng(child_seed(cfg.seed, STREAM_BANKS, 0xCA))
        calibrate_layer_gains(net, probe_x, sign_rng=sign_rng)
        calibrate_activation_ranges(net, probe_x)
    return net


def make_thresholds(cfg: RunConfig, scored) -> ThresholdState:
    tc = cfg.thresholds
    if tc.t_init is None:
        th = default_thresholds(scored, alpha=tc.alpha)
        th.t_w = tc.t_w
        return th
    t_end = tc.t_end if tc.t_end is not None else tc.t_init / 10.0
    return ThresholdState(t_init=tc.t_init, t_end=t_end, alpha=tc.alpha,
                          t_w=tc.t_w)


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------


def save_snapshot(path, cfg: RunConfig, net: Network, mode: str,
                  scored=None, w_init=None, weights=None) -> None:
    arrays = {}
    names = []
    for unit in net.units:
        n = unit.name
        names.append(n)
        arrays[f"{n}/gp_g"] = unit.bank.g_plus.conductance_us
        arrays[f"{n}/gp_s"] = unit.bank.g_plus.state
        arrays[f"{n}/gm_g"] = unit.bank.g_minus.conductance_us
        arrays[f"{n}/gm_s"] = unit.bank.g_minus.state
    if scored is not None:
        for sl in scored:
            arrays[f"{sl.name}/mask"] = sl.mask
            arrays[f"{sl.name}/scores"] = sl.scores
            arrays[f"{sl.name}/wref"] = sl.w_ref
    if w_init is not None:
        for n, w in w_init.items():
            arrays[f"{n}/winit"] = w
    if weights is not None:
        for n, w in weights.items():
            arrays[f"{n}/wdig"] = w
    manifest = {
        "mode": mode,
        "betas": {u.name: u.bank.beta for u in net.units},
        "qspecs": {u.name: [u.qspec.bits_m, u.qspec.input_lo, u.qspec.input_hi,
                            u.qspec.v_read] for u in net.units},
        "unit_names": names,
        "netspec": json.loads(net.spec.to_json()),
        "config": cfg.model_dump(),
    }
    np.savez(path, manifest=np.array(json.dumps(manifest, sort_keys=True)),
             **arrays)


def load_snapshot(path, cfg: RunConfig):
    """Rebuild a Network (banks restored exactly) from a snapshot file.

    Array random streams are re-derived from the config seed, so repeated
    evaluations of one snapshot are bit-identical.
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"snapshot {path} does not exist")
    with np.load(path, allow_pickle=False) as z:
        manifest = json.loads(str(z["manifest"]))
        spec = NetworkSpec.from_json(json.dumps(manifest["netspec"]))
        net = Network(spec)
        bits = cfg.quant.resolve_bits(cfg.network.arch)
        assign_quantization(net, bits, cfg.quant.act_hi, cfg.quant.v_read)
        dspec = cfg.device.to_spec()
        root = child_seed(cfg.seed, STREAM_EVAL)
        children = root.spawn(len(net.units))
        extras = {"mode": manifest["mode"], "masks": {}, "scores": {},
                  "w_init": {}, "w_dig": {}}
        for unit, child in zip(net.units, children):
            n = unit.name
            rows, cols = unit.shape
            sp, sm = child.spawn(2)
            gp = CrossbarArray(rows, cols, dspec, sp)
            gm = CrossbarArray(rows, cols, dspec, sm)
            gp.conductance_us = z[f"{n}/gp_g"].copy()
            gp.state = z[f"{n}/gp_s"].copy()
            gm.conductance_us = z[f"{n}/gm_g"].copy()
            gm.state = z[f"{n}/gm_s"].copy()
            unit.bank = DifferentialPairBank(gp, gm, beta=manifest["betas"][n])
            m, lo, hi, v = manifest["qspecs"][n]
            unit.qspec = QuantizationSpec(int(m), lo, hi, v)
            for key, store in (("mask", "masks"), ("scores", "scores"),
                               ("winit", "w_init"), ("wdig", "w_dig")):
                if f"{n}/{key}" in z.files:
                    extras[store][n] = z[f"{n}/{key}"].copy()
    return net, extras


# ---------------------------------------------------------------------------
# Handlers
# ---------------------------------------------------------------------------


def _write_json(path, doc) -> dict:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                          encoding="ascii")
    return doc


def _mode_stats(w: np.ndarray) -> dict:
    pos = w[w > 0]
    neg = w[w < 0]
    out = {}
    for label, vals in (("pos", pos), ("neg", neg)):
        if vals.size:
            out[label] = {"mean": float(vals.mean()), "std": float(vals.std()),
                          "count": int(vals.size)}
        else:
            out[label] = {"mean": 0.0, "std": 0.0, "count": 0}
    return out


def run_form(cfg: RunConfig, out_dir) -> dict:
    """Form the banks for the configured network; export conductance CSVs and
    a per-layer two-mode weight summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, _, _ = load_dataset(cfg)
    net = build_network(cfg, train.x.shape[1:], dense=False,
                        probe_x=train.x[:128])
    layers = {}
    for unit in net.units:
        export_conductance_csv(unit.bank.g_plus.conductance_us,
                               out / f"{unit.name}.gplus.csv")
        export_conductance_csv(unit.bank.g_minus.conductance_us,
                               out / f"{unit.name}.gminus.csv")
        w = weights_from_bank(unit.bank)
        layers[unit.name] = _mode_stats(w)
    summary = {
        "command": "form",
        "arch": cfg.network.arch,
        "scale": cfg.network.scale,
        "beta": net.units[0].bank.beta,
        "layers": layers,
        "total_pairs": int(sum(u.shape[0] * u.shape[1] for u in net.units)),
    }
    return _write_json(out / "form_summary.json", summary)


def run_train_to(cfg: RunConfig, out_dir) -> dict:
    """Topology-optimization training run; writes report CSV/JSON, the final
    snapshot, and per-layer mask/score CSV exports."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, val, _ = load_dataset(cfg)
    net = build_network(cfg, train.x.shape[1:], dense=False,
                        probe_x=train.x[:128])
    scored = make_scored_layers(net, cfg.sparsity)
    w_init = {u.name: weights_from_bank(u.bank) for u in net.units}
    thresholds = make_thresholds(cfg, scored)
    rng = np.random.default_rng(child_seed(cfg.seed, STREAM_TRAIN))
    report = train_topology(
        net, scored, train, val, epochs=cfg.epochs, eta=cfg.eta,
        thresholds=thresholds, rng=rng, batch_size=cfg.batch_size,
        selection=cfg.selection, energy_spec=cfg.energy.to_spec(),
        probe_x=train.x[:128])
    report.write_csv(out / "report.csv")
    (out / "summary.json").write_text(report.summary_json() + "\n",
                                      encoding="ascii")
    save_snapshot(out / SNAPSHOT_NAME, cfg, net, "topology",
                  scored=scored, w_init=w_init)
    for sl in scored:
        export_conductance_csv(sl.mask.astype(np.float64),
                               out / f"{sl.name}.mask.csv")
        export_conductance_csv(sl.scores, out / f"{sl.name}.scores.csv")
    return json.loads(report.summary_json())


def run_train_wo(cfg: RunConfig, out_dir, mode: str = "free") -> dict:
    """Weight-optimization baseline run (free or budget-matched updates)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if mode == "budget_matched" and cfg.to_budget is None:
        raise ConfigError("budget_matched mode needs to_budget in the config")
    train, val, _ = load_dataset(cfg)
    net = build_network(cfg, train.x.shape[1:], dense=True,
                        probe_x=train.x[:128])
    rng = np.random.default_rng(child_seed(cfg.seed, STREAM_TRAIN))
    report = train_weights_baseline(
        net, train, val, epochs=cfg.epochs,
        eta=cfg.wo_eta if cfg.wo_eta is not None else cfg.eta,
        t_w=cfg.thresholds.t_w, mode=mode, rng=rng,
        batch_size=cfg.batch_size, w_max=cfg.w_max,
        to_budget=cfg.to_budget, energy_spec=cfg.energy.to_spec(),
        probe_x=train.x[:128])
    report.write_csv(out / "report.csv")
    (out / "summary.json").write_text(report.summary_json() + "\n",
                                      encoding="ascii")
    weights = {u.name: weights_from_bank(u.bank) for u in net.units}
    save_snapshot(out / SNAPSHOT_NAME, cfg, net, "weights", weights=weights)
    return json.loads(report.summary_json())


def _eval_chunks(net: Network, x: np.ndarray, rng_root, workers: int,
                 chunk: int = 200):
    """Analogue inference over x; deterministic for a fixed worker count."""
    bounds = [(lo, min(lo + chunk, x.shape[0]))
              for lo in range(0, x.shape[0], chunk)]
    rngs = [np.random.default_rng(s) for s in rng_root.spawn(len(bounds))]

    def one(i):
        lo, hi = bounds[i]
        logits, _ = net.forward(x[lo:hi], ForwardContext("analog", rng=rngs[i]))
        return logits

    if workers <= 1:
        parts = [one(i) for i in range(len(bounds))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, range(len(bounds))))
    return np.concatenate(parts, axis=0) if parts else np.empty((0, 0))


def run_eval(cfg: RunConfig, run_dir, out_dir=None, workers: int = 1) -> dict:
    """Test-set inference through the analogue path of a trained snapshot."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir else run_dir
    out.mkdir(parents=True, exist_ok=True)
    net, extras = load_snapshot(run_dir / SNAPSHOT_NAME, cfg)
    _, _, test = load_dataset(cfg)
    if len(test) == 0:
        raise ConfigError("test split is empty")
    rng_root = child_seed(cfg.seed, STREAM_EVAL, 0xE)
    logits = _eval_chunks(net, test.x, rng_root, workers)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits during evaluation")
    preds = np.argmax(logits, axis=1)
    acc = float(np.mean(preds == test.y))
    cm = confusion_matrix(preds, test.y, test.class_count)
    np.savetxt(out / "confusion.csv", cm, fmt="%d", delimiter=",")
    per_class = []
    for c in range(test.class_count):
        n_c = int(cm[c].sum())
        per_class.append(float(cm[c, c] / n_c) if n_c else 0.0)
    summary = {
        "command": "eval",
        "mode": extras["mode"],
        "n_test": int(len(test)),
        "accuracy": acc,
        "per_class_accuracy": per_class,
    }
    if test.class_count == 2:
        _, probs = ops.softmax_xent_forward(logits, test.y)
        curves = roc_pr_curves(probs[:, 1], test.y == 1)
        export_curve_csv(curves.roc, out / "roc.csv")
        export_curve_csv(curves.pr, out / "pr.csv")
        summary["auc_roc"] = curves.auc_roc
        summary["auc_pr"] = curves.auc_pr
    return _write_json(out / "metrics.json", summary)


def run_export_dist(cfg: RunConfig, run_dir, out_dir=None,
                    bins: int = 101) -> dict:
    """Weight histograms before/after pruning for external plotting, with a
    simple peak-scan mode summary."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir else run_dir
    out.mkdir(parents=True, exist_ok=True)
    net, extras = load_snapshot(run_dir / SNAPSHOT_NAME, cfg)
    doc = {"command": "export-dist", "bins": bins, "layers": {}}
    for unit in net.units:
        n = unit.name
        after = weights_from_bank(unit.bank).ravel()
        counts, edges = histogram(after, bins)
        export_histogram_csv(counts, edges, out / f"{n}.hist_after.csv")
        entry = {"modes_after": find_modes(after, bins)}
        if n in extras["w_init"]:
            before = extras["w_init"][n].ravel()
            counts_b, edges_b = histogram(before, bins)
            export_histogram_csv(counts_b, edges_b, out / f"{n}.hist_before.csv")
            entry["modes_before"] = find_modes(before, bins)
        doc["layers"][n] = entry
    return _write_json(out / "dist_summary.json", doc)


def run_report(run_dirs, out_dir, cfg: RunConfig | None = None) -> dict:
    """Aggregate one or more finished runs: accuracies, programming totals,
    programming energy, and pairwise programming ratios."""
    from .energy import EnergySpec, programming_energy
    from .training import ProgrammingCounts, ProgrammingLedger

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    espec = cfg.energy.to_spec() if cfg is not None else EnergySpec()
    runs = {}
    for rd in run_dirs:
        rd = Path(rd)
        sfile = rd / "summary.json"
        if not sfile.exists():
            raise MissingInputError(f"{sfile} does not exist")
        summary = json.loads(sfile.read_text())
        ledger = ProgrammingLedger()
        for name, counts in summary.get("ledger", {}).items():
            ledger.per_layer[name] = ProgrammingCounts(**counts)
        energy = programming_energy(ledger, espec)
        runs[rd.name] = {
            "mode": summary.get("mode"),
            "final_val_acc": summary.get("final_val_acc"),
            "total_programming_ops": summary.get("total_programming_ops"),
            "programming_energy_uj": energy["total_uj"],
        }
    doc = {"command": "report", "runs": runs}
    names = list(runs)
    if len(names) >= 2:
        ratios = {}
        for a in names:
            for b in names:
                if a != b and runs[b]["total_programming_ops"]:
                    ratios[f"{a}_vs_{b}"] = (runs[a]["total_programming_ops"]
                                             / runs[b]["total_programming_ops"])
        doc["programming_op_ratios"] = ratios
    return _write_json(out / "report.json", doc)
