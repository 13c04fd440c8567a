"""Command line entry point: ``tarisk <subcommand> [--config FILE] [--key value ...]``.

Every tunable of :class:`~tarisk.config.RunConfig` is also a flag, spelled
with dashes (``--max-tau 170``). Flags override the config file. Each run
writes its resolved ``config.txt`` next to its outputs.

Exit codes: 0 success, 2 usage or input error, 3 training failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import ingest, nn, patterns, synth
from .config import ConfigError, RunConfig

log = logging.getLogger("tarisk")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

COMMANDS = {
    "synth": "generate a synthetic event CSV",
    "ingest": "discretize an event CSV into a count cube",
    "analyze": "heatmap, correlation contour and period profile of a cube",
    "train": "fit one or more models on a cube",
    "evaluate": "compare checkpoints on the test split and export risk maps",
    "sweep": "TARPML test RMSE over sequence lengths and risk windows",
}


class UsageError(Exception):
    pass


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration overrides")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            g.add_argument(flag, dest=f.name, nargs="?", const="true", default=None, metavar="BOOL")
        else:
            g.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tarisk", description="Grid traffic accident risk pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat key = value config file")
        _add_config_flags(p)
    return parser


def resolve_config(args) -> RunConfig:
    base = RunConfig.read(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if getattr(args, f.name) is not None}
    return RunConfig.from_pairs(overrides, base)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.txt")
    return out


def _need_input(cfg: RunConfig) -> Path:
    if not cfg.input:
        raise UsageError("--input is required")
    path = Path(cfg.input)
    if not path.is_file():
        raise UsageError(f"input not found: {path}")
    return path


def _load_cube(cfg: RunConfig):
    cube = ingest.load_cube(_need_input(cfg))
    return cube


def cmd_synth(cfg: RunConfig) -> int:
    records = synth.generate(cfg.synth_config())
    out = _out_dir(cfg)
    ingest.write_records(records, out / "events.csv")
    print(f"wrote {len(records)} events to {out / 'events.csv'}")
    return EXIT_OK


def cmd_ingest(cfg: RunConfig) -> int:
    path = _need_input(cfg)
    with open(path, encoding="utf-8", newline="") as fh:
        parsed = ingest.parse_records(fh, strict=cfg.strict)
    cube = ingest.discretize(parsed.records, cfg.grid(), cfg.n_slots or None)
    out = _out_dir(cfg)
    ingest.save_cube(cube, out / "counts.cube")
    total = len(parsed.records)
    print(f"records: total={total} in_bounds={total - cube.dropped} dropped={cube.dropped} "
          f"malformed={parsed.skipped} slots={cube.counts.shape[2]}")
    return EXIT_OK


def cmd_analyze(cfg: RunConfig) -> int:
    cube = _load_cube(cfg)
    try:
        profile = patterns.period_profile(cube)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(cfg)
    patterns.export_heatmap(cube, out / "heatmap")
    max_k = min(cfg.max_k, patterns.max_lag(cube.grid.n_rows, cube.grid.n_cols))
    stc = patterns.spatio_temporal_corr(cube, max_k, cfg.max_tau)
    patterns.export_contour(stc, out / "contour.csv")
    patterns.export_profile(profile, out / "profile.csv")
    print(f"analysis written to {out}")
    return EXIT_OK


def _prepare(cfg: RunConfig, cube):
    return ev.prepare(cube, cfg.window_days, cfg.seq_len, ingest.parse_timestamp(cfg.train_end),
                      ingest.parse_timestamp(cfg.test_end), cfg.seed, cfg.max_train_samples,
                      cfg.max_val_samples, cfg.max_test_samples)


def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_mse", "val_mse"])
        for row in history:
            w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["train_mse"]), repr(row["val_mse"])])


def cmd_train(cfg: RunConfig) -> int:
    cube = _load_cube(cfg)
    try:
        data = _prepare(cfg, cube)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(cfg)
    settings = cfg.fit_settings()
    for kind in cfg.model:
        try:
            model, history, state = ev.fit_model(kind, data, settings)
        except nn.TrainingDiverged as exc:
            write_history(exc.history, out / f"{kind}_history.csv")
            raise
        ev.save_any(model, out / f"{kind}.ckpt", state, cfg.seq_len, cfg.window_days)
        if history is not None:
            write_history(history, out / f"{kind}_history.csv")
        print(f"{kind}: checkpoint {out / (kind + '.ckpt')}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    cube = _load_cube(cfg)
    try:
        data = _prepare(cfg, cube)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ckpt_dir = Path(cfg.checkpoints or cfg.out)
    models = {}
    for kind in cfg.model:
        path = ckpt_dir / f"{kind}.ckpt"
        if not path.is_file():
            if not cfg.skip_missing:
                raise UsageError(f"missing checkpoint: {path}")
            models[kind] = None
            continue
        loaded_kind, model, hyper = ev.load_any(path)
        if loaded_kind != kind:
            raise UsageError(f"{path} holds a {loaded_kind} model")
        for key in ("seq_len", "window_days"):
            if key in hyper and hyper[key] and hyper[key] != getattr(cfg, key):
                raise UsageError(f"{path}: trained with {key}={hyper[key]}, config has {getattr(cfg, key)}")
        models[kind] = model
    out = _out_dir(cfg)
    reports = ev.compare_models(models, data.store, data.test, skip_missing=True)
    ev.write_reports(reports, out / "metrics.csv")
    for r in reports:
        print(f"{r.model:8s} MAE={r.mae:.6f} MSE={r.mse:.6f} RMSE={r.rmse:.6f} n={r.n}")
    if len(reports) > 1 and any(r.model == "tarpml" for r in reports):
        text = ev.ordering_report(reports)
        (out / "ordering.txt").write_text(text)
        if "exception" in text:
            log.warning("tarpml is not the best model on this data; see %s", out / "ordering.txt")
    slot = cfg.map_slot if cfg.map_slot >= 0 else int(data.store.slots[data.split.test].min())
    curve = (cfg.curve_row, cfg.curve_col) if cfg.curve_row >= 0 and cfg.curve_col >= 0 else None
    test_slots = np.unique(data.store.slots[data.split.test])
    for kind, model in models.items():
        if model is not None:
            try:
                ev.export_risk_maps(model, data.risk, slot, out, kind, cfg.seq_len, curve, test_slots)
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    cube = _load_cube(cfg)
    out = _out_dir(cfg)
    table = ev.sweep_seq_len(cube, cfg.sweep_lengths, cfg.sweep_windows,
                             ingest.parse_timestamp(cfg.train_end), ingest.parse_timestamp(cfg.test_end),
                             cfg.fit_settings(), cfg.max_train_samples, cfg.max_val_samples,
                             cfg.max_test_samples)
    ev.write_sweep(table, cfg.sweep_lengths, cfg.sweep_windows, out / "sweep.csv")
    print((out / "sweep.csv").read_text(), end="")
    return EXIT_OK


HANDLERS = {"synth": cmd_synth, "ingest": cmd_ingest, "analyze": cmd_analyze, "train": cmd_train,
            "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](cfg)
    except nn.TrainingError as exc:
        print(f"tarisk: training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, UsageError, ingest.FormatError, ingest.ParseError) as exc:
        print(f"tarisk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        # model preconditions (e.g. series too short for the ARMA order) and unreadable paths
        print(f"tarisk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
