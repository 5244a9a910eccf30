"""memtopo: a software twin of a stochastic resistive-memory crossbar system
that trains randomly weighted neural networks by pruning/reinstating edges
instead of tuning conductance, with programming-cost and energy accounting."""

__version__ = "0.1.0"

from .device import (CellState, CrossbarArray, DeviceSpec,
                     DifferentialPairBank, build_complementary_bank,
                     build_dense_bank, closed_loop_write, electroform,
                     form_complementary, new_array, read_conductance,
                     reset_pair, set_pair)
from .vmm import (BitPlanes, QuantizationSpec, matmul_exact, quantize_input,
                  vmm_bit_sliced, weights_from_bank)
from .network import (LayerKind, LayerSpec, Network, NetworkSpec, build_cnn,
                      build_crnn, parameter_count, propagate_shapes)
from .training import (ProgrammingLedger, ScoredLayer, ThresholdState,
                       TrainReport, decay_threshold, gate_score_update,
                       init_scores, score_update, select_subnetwork,
                       sync_mask_to_hardware, train_topology,
                       train_weights_baseline)
from .energy import EnergySpec, forward_energy, programming_energy
from .metrics import (ConfusionCounts, accuracy, confusion, f1, fpr,
                      precision, roc_pr_curves, tpr_recall)
from .config import RunConfig
