"""Flat ``key = value`` run configuration shared by every subcommand.

Unknown keys are rejected; every value is parsed and validated before any
work starts. List values are comma separated; hotspots are ``;``-separated
``row,col,amplitude,decay`` groups.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from . import nn
from .ingest import GridSpec, parse_timestamp
from .synth import DEFAULT_DOW_PROFILE, DEFAULT_HOUR_PROFILE, Hotspot, SynthConfig


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""


@dataclass
class RunConfig:
    seed: int = 1
    # grid
    origin_lon: float = 116.2
    origin_lat: float = 39.8
    cell_size_m: float = 1000.0
    n_rows: int = 20
    n_cols: int = 20
    time_origin: str = "2016-01-01T00:00:00Z"
    slot_seconds: float = 3600.0
    n_slots: int = 0  # 0: derive from the records
    meters_per_deg_lon: float = 0.0  # 0: scale at origin_lat
    meters_per_deg_lat: float = 0.0
    # synthetic data
    n_days: int = 90
    base_rate: float = 0.02
    hotspots: str = "5,6,2.0,2.5;14,12,1.4,3.0;8,17,1.0,2.0;17,3,1.2,2.5"
    hour_profile: tuple = DEFAULT_HOUR_PROFILE
    dow_profile: tuple = DEFAULT_DOW_PROFILE
    # ingest / analyze
    strict: bool = False
    max_k: int = 10
    max_tau: int = 170
    # risk target and split
    window_days: int = 3
    seq_len: int = 100
    train_end: str = "2016-03-24T00:00:00Z"
    test_end: str = "2016-03-31T00:00:00Z"
    max_train_samples: int = 8192
    max_val_samples: int = 2048
    max_test_samples: int = 8192
    # models
    model: tuple = ("tarpml",)
    tiny: bool = False
    lstm_sizes: tuple = nn.PAPER_LSTM_SIZES
    dense_size: int = nn.PAPER_DENSE_SIZE
    dropout: float = 0.5
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-8
    patience: int = 10
    lasso_lambda: float = 0.01
    lasso_tol: float = 1e-6
    lasso_max_iter: int = 1000
    svr_c: float = 1.0
    svr_epsilon: float = 0.01
    svr_epochs: int = 20
    svr_lr: float = 0.01
    tree_max_depth: int = 12
    tree_min_samples_leaf: int = 5
    arma_p: int = 24
    arma_q: int = 1
    # evaluation
    checkpoints: str = ""
    map_slot: int = -1  # -1: first test slot
    curve_row: int = -1  # -1: cell with the largest total risk
    curve_col: int = -1
    skip_missing: bool = False
    sweep_lengths: tuple = (10, 20, 50, 100)
    sweep_windows: tuple = (1, 3, 7, 30)
    # paths
    input: str = ""
    out: str = "out"

    # -- parsing ---------------------------------------------------------

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def parse_value(cls, key: str, text: str):
        default = {f.name: f.default for f in fields(cls)}[key]
        text = text.strip()
        try:
            if isinstance(default, bool):
                low = text.lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(f"not a boolean: {text!r}")
            if isinstance(default, int):
                return int(text)
            if isinstance(default, float):
                return float(text)
            if isinstance(default, tuple):
                items = [t.strip() for t in text.split(",") if t.strip()]
                kind = type(default[0]) if default else str
                return tuple(kind(t) for t in items)
            return text
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc

    @classmethod
    def from_pairs(cls, pairs: dict, base: "RunConfig | None" = None) -> "RunConfig":
        valid = set(cls.keys())
        unknown = sorted(set(pairs) - valid)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        values = {k: cls.parse_value(k, v) if isinstance(v, str) else v for k, v in pairs.items()}
        cfg = dataclasses.replace(base or cls(), **values)
        cfg.validate()
        return cfg

    @classmethod
    def read(cls, path, base=None) -> "RunConfig":
        pairs = {}
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            k, v = line.split("=", 1)
            pairs[k.strip()] = v.strip()
        return cls.from_pairs(pairs, base)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    # -- validation and derived objects ----------------------------------

    def validate(self) -> None:
        try:
            self.grid()
            self.hotspot_list()
            if self.hour_profile and len(self.hour_profile) != 24:
                raise ValueError("hour_profile needs 24 values")
            if len(self.dow_profile) != 7:
                raise ValueError("dow_profile needs 7 values")
            for name in ("window_days", "seq_len", "epochs", "batch_size", "dense_size", "patience"):
                if getattr(self, name) < 1:
                    raise ValueError(f"{name} must be >= 1")
            if self.max_k < 0 or self.max_tau < 0:
                raise ValueError("max_k and max_tau must be >= 0")
            if not 0.0 <= self.dropout < 1.0:
                raise ValueError("dropout must be in [0, 1)")
            if not self.lstm_sizes or min(self.lstm_sizes) < 1:
                raise ValueError("lstm_sizes must be positive")
            if parse_timestamp(self.train_end) >= parse_timestamp(self.test_end):
                raise ValueError("train_end must precede test_end")
            from .evaluation import MODEL_KINDS
            bad = [m for m in self.model if m not in MODEL_KINDS]
            if bad:
                raise ValueError(f"unknown model(s) {bad}; choose from {', '.join(MODEL_KINDS)}")
            if not self.sweep_lengths or not self.sweep_windows:
                raise ValueError("sweep lengths and windows must be non-empty")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def grid(self) -> GridSpec:
        return GridSpec(self.origin_lon, self.origin_lat, self.n_rows, self.n_cols,
                        parse_timestamp(self.time_origin), self.cell_size_m, self.slot_seconds,
                        self.meters_per_deg_lon, self.meters_per_deg_lat)

    def hotspot_list(self) -> list:
        out = []
        for group in filter(None, (g.strip() for g in self.hotspots.split(";"))):
            parts = [float(v) for v in group.split(",")]
            if len(parts) != 4:
                raise ValueError(f"hotspot {group!r} needs row,col,amplitude,decay")
            out.append(Hotspot(*parts))
        return out

    def synth_config(self) -> SynthConfig:
        return SynthConfig(self.grid(), self.n_days, self.seed, self.hotspot_list(), self.base_rate,
                           tuple(self.hour_profile), tuple(self.dow_profile))

    def model_sizes(self):
        if self.tiny:
            return nn.TINY_LSTM_SIZES, nn.TINY_DENSE_SIZE
        return tuple(self.lstm_sizes), self.dense_size

    def fit_settings(self, seed=None):
        from .evaluation import FitSettings
        sizes, dense = self.model_sizes()
        seed = self.seed if seed is None else seed
        tc = nn.TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.rho, self.epsilon,
                            seed, self.patience)
        return FitSettings(seed, sizes, dense, self.dropout, tc, self.lasso_lambda, self.lasso_tol,
                           self.lasso_max_iter, self.svr_c, self.svr_epsilon, self.svr_epochs, self.svr_lr,
                           self.tree_max_depth, self.tree_min_samples_leaf, self.arma_p, self.arma_q)
