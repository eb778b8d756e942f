"""Pipeline configuration: presets, JSON persistence and cross-field validation."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError
from ..nop.augment import AugmentConfig
from ..nop.features import n_freq, scaled_modes
from ..nop.networks import ModelConfig, SegConfig
from ..nop.train import TrainConfig
from ..sequence import TransducerSpec, n_samples_out
from ..solver import SolverConfig

C_REF = 1540.0
F_C = 5.2e6
DT = 8.0e-9
FS_OUT = 20.8e6
PPW = 12


@dataclass
class PhantomRanges:
    aeration: tuple = (0.1, 0.9)
    depth_m: tuple = (0.01, 0.03)
    curvature: tuple = (0.0, 0.0)
    alveolus_px: float = 3.8
    wall_px: float = 1.0
    spread: float = 0.3
    lung_rows: int = 608
    wall_layers: list = field(default_factory=lambda: [["connective", 0.10], ["adipose", 0.30],
                                                        ["muscle", 0.45], ["connective", 0.15]])

    def __post_init__(self):
        # JSON brings ranges back as lists
        self.aeration, self.depth_m, self.curvature = (tuple(x) for x in (self.aeration, self.depth_m, self.curvature))


@dataclass
class PipelineConfig:
    name: str = "paper"
    scale: float = 1.0
    seed: int = 0
    duration_s: float = 87.6e-6
    phantom: PhantomRanges = field(default_factory=PhantomRanges)
    solver: dict = field(default_factory=dict)
    transducer: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    seg: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    splits: dict = field(default_factory=lambda: {"train": 10150, "val": 1450, "eval": 2900})
    batch_events: int = 32

    def __post_init__(self):
        if isinstance(self.phantom, dict):
            self.phantom = PhantomRanges(**self.phantom)

    # -- derived objects -----------------------------------------------------
    @property
    def dx(self) -> float:
        return C_REF / (F_C / self.scale) / PPW

    @property
    def dt(self) -> float:
        return DT * self.scale

    def solver_config(self) -> SolverConfig:
        kw = {"spatial_order": 4, "n_relax": 2, "pml_width": 16, "nonlinear": True}
        kw.update(self.solver)
        return SolverConfig(dx_m=self.dx, dt_s=self.dt, n_steps=self.n_steps, c_ref=C_REF, **kw)

    def transducer_spec(self) -> TransducerSpec:
        kw = {"f_c": F_C / self.scale, "fs_out": FS_OUT / self.scale}
        kw.update(self.transducer)
        return TransducerSpec(**kw)

    @property
    def n_steps(self) -> int:
        return int(np.ceil(self.duration_s / self.dt - 1e-9))

    @property
    def T(self) -> int:
        return n_samples_out(self.duration_s, self.transducer_spec().fs_out)

    @property
    def n_rows(self) -> int:
        return int(np.round(self.phantom.depth_m[1] / self.dx)) + self.phantom.lung_rows

    def model_config(self, **over) -> ModelConfig:
        td = self.transducer_spec()
        kw = {"T": self.T, "n_t": td.n_active, "n_e": td.n_events, "H_out": self.phantom.lung_rows,
              "modes": scaled_modes(self.T)}
        kw.update(self.model)
        kw.update(over)
        return ModelConfig(**kw)

    def seg_config(self) -> SegConfig:
        return SegConfig(**self.seg)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**copy.deepcopy(self.train))

    # -- validation and persistence ----------------------------------------------
    def validate(self):
        """Build every component config; any inconsistency raises :class:`ConfigError`."""
        try:
            cfg = self.solver_config()
            td = self.transducer_spec()
            if td.band[1] * 10 > 1 / cfg.dt_s:
                raise ValueError("time step does not resolve the upper pulse band (10 samples per cycle)")
            mc = self.model_config()
            tc = self.train_config()
            tc.augment.validate(mc.T, mc.n_t * mc.n_e)
            if mc.temporal_block == "fno" and mc.modes > n_freq(mc.T) // 2 + 1:
                raise ValueError("modes exceed the available spectral length")
            lo, hi = self.phantom.aeration
            if not 0 <= lo <= hi <= 1:
                raise ValueError("aeration range must lie in [0, 1]")
            if not 0 < self.phantom.depth_m[0] <= self.phantom.depth_m[1]:
                raise ValueError("depth range must be positive and ordered")
            if self.phantom.wall_px < 1 or self.phantom.alveolus_px <= self.phantom.wall_px:
                raise ValueError("alveolus must exceed wall thickness, which must be at least one pixel")
            if self.T < 8:
                raise ValueError("record shorter than 8 output samples")
            self.seg_config()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"config-invalid: {exc}") from None
        return self

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"config-invalid: {exc}") from None

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config-invalid: {exc}") from None
        return cls.from_dict(d)


def preset(name: str, scale: float | None = None) -> PipelineConfig:
    """``paper`` (full scale), ``desk`` (s=4) or ``tiny`` (s=8, used by the learning check)."""
    if name == "paper":
        s = 1.0 if scale is None else scale
        cfg = PipelineConfig(name="paper", scale=s, duration_s=87.6e-6)
        cfg.model = {"channels": 32, "width": 64, "H_out": 400}
        cfg.seg = {"size": 400, "width": 64}
        cfg.train = {"batch": 26, "epochs_pretrain": 90, "epochs_finetune": 10,
                     "augment": {"mask_t_max": 200, "mask_s_max": 2000, "snr_db": 30.0}}
        return cfg
    if name == "desk":
        s = 4.0 if scale is None else scale
        dx = C_REF / (F_C / s) / PPW
        cfg = PipelineConfig(name="desk", scale=s, duration_s=26e-6 * s / 4)
        cfg.phantom = PhantomRanges(depth_m=(0.005, 0.012), alveolus_px=8.0, wall_px=2.0, lung_rows=64)
        cfg.solver = {"pml_width": 12, "n_relax": 1}
        cfg.transducer = {"n_elements_total": 47, "n_active": 16, "n_events": 32, "window_margin_m": 8 * dx}
        cfg.model = {"channels": 8, "width": 16}
        cfg.seg = {"size": 96, "width": 16}
        cfg.train = {"batch": 26, "epochs_pretrain": 30, "epochs_finetune": 10,
                     "augment": {"mask_t_max": 17, "mask_s_max": 123, "snr_db": 30.0}}
        cfg.splits = {"train": 150, "val": 25, "eval": 50, "finetune": 10}
        return cfg
    if name == "tiny":
        s = 8.0 if scale is None else scale
        dx = C_REF / (F_C / s) / PPW
        cfg = PipelineConfig(name="tiny", scale=s, duration_s=320 * DT * s)
        cfg.phantom = PhantomRanges(depth_m=(12 * dx, 30 * dx), alveolus_px=4.0, wall_px=1.0, lung_rows=32)
        cfg.solver = {"pml_width": 10, "n_relax": 1}
        cfg.transducer = {"n_elements_total": 47, "n_active": 16, "n_events": 32, "window_margin_m": 8 * dx}
        cfg.model = {"channels": 8, "width": 16}
        cfg.seg = {"size": 96, "width": 16}
        cfg.train = {"batch": 26, "epochs_pretrain": 30, "epochs_finetune": 10,
                     "augment": {"mask_t_max": 7, "mask_s_max": 123, "snr_db": 30.0}}
        cfg.splits = {"train": 150, "val": 0, "eval": 50, "finetune": 10}
        return cfg
    raise ConfigError(f"config-invalid: unknown preset {name!r}")
