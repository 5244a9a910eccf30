"""Run configuration: a single validated document that fully determines a
run. Two runs with an equal RunConfig (and REPRO_STRICT=1) produce
bit-identical outputs.

The same pydantic models serve as the JSON config-file schema for the CLI
and as the request bodies of the HTTP service.
"""

from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .device import DeviceSpec
from .energy import EnergySpec
from .errors import ConfigError


class DeviceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    pristine_conductance_us: float = 0.033
    formed_mean_us: float = 27.2
    formed_sigma_us: float = 2.5
    off_mean_us: float = 0.07
    off_sigma_us: float = 0.02
    read_noise_cv: float = Field(0.03, ge=0)
    form_probability: float = Field(0.5, ge=0, le=1)
    write_tolerance: float = Field(0.10, gt=0)
    max_write_pulses: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.off_mean_us >= self.formed_mean_us:
            raise ValueError("off_mean_us must be below formed_mean_us")
        return self

    def to_spec(self) -> DeviceSpec:
        return DeviceSpec(**self.model_dump())


class QuantConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    bits_m: Optional[int] = Field(None, ge=1, le=16)  # None: 4 for cnn, 3 for crnn
    act_hi: float = Field(4.0, gt=0)
    v_read: float = Field(0.1, gt=0)

    def resolve_bits(self, arch: str) -> int:
        if self.bits_m is not None:
            return self.bits_m
        return 4 if arch == "cnn" else 3


class EnergyConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    v_read: float = Field(0.1, ge=0)
    t_read_ns: float = Field(100.0, ge=0)
    e_reset_pj: float = Field(10.0, ge=0)
    e_set_pj: float = Field(10.0, ge=0)
    e_write_pulse_pj: float = Field(10.0, ge=0)
    digital_overhead_pj_per_mac: float = Field(0.02, ge=0)

    def to_spec(self) -> EnergySpec:
        return EnergySpec(**self.model_dump())


class ThresholdConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t_init: Optional[float] = None  # None: 0.1 * initial score std
    t_end: Optional[float] = None   # None: t_init / 10
    alpha: int = Field(20, ge=1)
    t_w: float = Field(0.0, ge=0)


class NetworkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    arch: Literal["cnn", "crnn"] = "cnn"
    scale: float = Field(0.125, gt=0)


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["idx", "feature_csv", "synth_blobs", "synth_glyphs",
                  "synth_counts"] = "synth_glyphs"
    images_path: Optional[str] = None
    labels_path: Optional[str] = None
    csv_path: Optional[str] = None
    preprocess: bool = True
    target_hw: int = Field(14, ge=2)
    bits: int = Field(4, ge=1, le=8)
    classes: int = Field(10, ge=2)
    per_class: int = Field(400, ge=0)
    glyph_hw: int = Field(28, ge=8)
    blob_shape: tuple[int, int] = (23, 15)
    separation: float = Field(6.0, gt=0)
    noise: float = Field(0.1, ge=0)
    proto_cell: int = Field(4, ge=1)
    train_n: int = Field(2000, ge=0)
    val_n: int = Field(500, ge=0)
    test_n: int = Field(1000, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "idx" and not self.images_path:
            raise ValueError("kind 'idx' requires images_path")
        if self.kind == "feature_csv" and not self.csv_path:
            raise ValueError("kind 'feature_csv' requires csv_path")
        return self


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    epochs: int = Field(5, ge=0)
    eta: float = Field(0.05, gt=0)
    wo_eta: Optional[float] = Field(None, gt=0)  # None: same as eta
    sparsity: float = Field(0.5, ge=0, lt=1)
    batch_size: int = Field(50, ge=1)
    selection: Literal["epoch", "step"] = "epoch"
    w_max: float = Field(0.9, gt=0)
    to_budget: Optional[int] = Field(None, ge=0)
    workers: int = Field(1, ge=1)
    network: NetworkConfig = NetworkConfig()
    device: DeviceConfig = DeviceConfig()
    quant: QuantConfig = QuantConfig()
    energy: EnergyConfig = EnergyConfig()
    thresholds: ThresholdConfig = ThresholdConfig()
    data: DataConfig = DataConfig()

    def to_canonical_json(self) -> str:
        import json

        return json.dumps(self.model_dump(), indent=2, sort_keys=True)


def load_config(path) -> RunConfig:
    """Parse and validate a RunConfig JSON file; raises ConfigError."""
    from pathlib import Path

    from .errors import MissingInputError

    p = Path(path)
    if not p.exists():
        raise MissingInputError(f"config file {p} does not exist")
    try:
        return RunConfig.model_validate_json(p.read_text())
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def child_seed(seed: int, *tags: int) -> np.random.SeedSequence:
    """Deterministic named sub-stream of the master seed."""
    return np.random.SeedSequence([int(seed), *[int(t) for t in tags]])


# stream tags
STREAM_BANKS = 1
STREAM_TRAIN = 2
STREAM_EVAL = 3
STREAM_DATA = 4
STREAM_SPLIT = 5
